"""Persistence of datasets and models, and tabular plot-data output.

All floats are written with 17 significant digits so text round trips are
bit-exact. Lines starting with ``#`` are comments; output writers put the
package version and the run's config digest there.
"""
from __future__ import annotations

import configparser
import io as _io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .core import DiscreteNmzModel, NmzError, TimeSeries, TimeSeriesSet, ValidationError
from .predictor import PredictionRun, SweepResult

MODEL_FORMAT_VERSION = 1
SERIES_COLUMNS = ("t", "bias", "x", "y", "z")


class DatasetFormatError(NmzError, ValueError):
    """Malformed dataset; the message names the file and row."""


class ModelFormatError(NmzError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def comment_header(digest: str | None = None, extra: Iterable[str] = ()) -> str:
    lines = [f"# nmzlearn {__version__}"]
    if digest:
        lines.append(f"# config-sha256 {digest}")
    lines.extend(f"# {e}" for e in extra)
    return "\n".join(lines) + "\n"


def write_table(path, columns: Sequence[str], rows, digest: str | None = None,
                extra: Iterable[str] = ()) -> Path:
    path = Path(path)
    buf = _io.StringIO()
    buf.write(comment_header(digest, extra))
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt(v) for v in row) + "\n")
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise NmzError(f"cannot write {path}: {exc}") from exc
    return path


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Read a comma-separated table with ``#`` comments; returns (columns, data)."""
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DatasetFormatError(f"{path}: no header row")
    columns = [c.strip() for c in lines[0].split(",")]
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(columns):
            raise DatasetFormatError(
                f"{path}: data row {i - 1} has {len(cells)} cells, expected {len(columns)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise DatasetFormatError(f"{path}: data row {i - 1} has a non-numeric cell: {ln!r}") from None
    return columns, np.array(rows, dtype=float).reshape(len(rows), len(columns))


# -- datasets ---------------------------------------------------------------

def save_series(series: TimeSeries, path, digest: str | None = None) -> Path:
    rows = np.column_stack([series.times, series.values])
    return write_table(path, SERIES_COLUMNS, rows, digest)


def save_dataset(data: TimeSeriesSet, directory, digest: str | None = None,
                 units: str = "arb") -> Path:
    """Write one CSV per series plus ``manifest.ini`` (delta, K, N, units, files)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, s in enumerate(data):
        name = f"series_{i:03d}.csv"
        save_series(s, directory / name, digest)
        files.append(name)
    cp = configparser.ConfigParser()
    cp["dataset"] = {
        "delta": fmt(data.delta),
        "K": str(data.n_samples),
        "N": str(data.n_series),
        "units": units,
        "files": ",".join(files),
    }
    with open(directory / "manifest.ini", "w") as fh:
        fh.write(comment_header(digest))
        cp.write(fh)
    return directory


def _series_from_table(label, columns: list[str], data: np.ndarray,
                       delta: float | None) -> TimeSeries:
    missing = [c for c in SERIES_COLUMNS if c not in columns]
    if missing:
        raise DatasetFormatError(f"{label}: missing columns {missing}")
    data = data[:, [columns.index(c) for c in SERIES_COLUMNS]]
    if data.shape[0] < 2:
        raise DatasetFormatError(f"{label}: needs at least 2 rows")
    t = data[:, 0]
    if delta is None:
        delta = float(t[1] - t[0])
    expected = t[0] + delta * np.arange(len(t))
    bad = np.flatnonzero(np.abs(t - expected) > 1e-9 * max(1.0, abs(expected[-1])))
    if bad.size:
        raise DatasetFormatError(
            f"{label}: data row {bad[0] + 1} has t={t[bad[0]]!r}, inconsistent with delta={delta!r}"
        )
    try:
        return TimeSeries(delta, data[:, 1:])
    except ValidationError as exc:
        raise DatasetFormatError(f"{label}: {exc}") from None


def load_dataset(path) -> TimeSeriesSet:
    """Load a dataset directory (``manifest.ini`` + one CSV per series) or one multi-series CSV.

    A multi-series CSV carries a leading ``series`` column holding integer ids.
    """
    path = Path(path)
    if path.is_dir():
        manifest = path / "manifest.ini"
        if not manifest.exists():
            raise DatasetFormatError(f"{path}: no manifest.ini")
        cp = configparser.ConfigParser()
        cp.read(manifest)
        try:
            sec = cp["dataset"]
            delta = float(sec["delta"])
            files = [f.strip() for f in sec["files"].split(",") if f.strip()]
            K, N = int(sec["K"]), int(sec["N"])
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"{manifest}: bad or missing entry {exc}") from None
        if len(files) != N:
            raise DatasetFormatError(f"{manifest}: lists {len(files)} files but N={N}")
        series = []
        for f in files:
            s = _series_from_table(path / f, *read_table(path / f), delta)
            if s.n_samples != K:
                raise DatasetFormatError(f"{path / f}: has K={s.n_samples} samples, manifest says {K}")
            series.append(s)
        return TimeSeriesSet(tuple(series))
    if not path.exists():
        raise DatasetFormatError(f"{path}: no such file or directory")
    columns, data = read_table(path)
    if "series" not in columns:
        raise DatasetFormatError(f"{path}: multi-series file needs a 'series' column")
    ids = data[:, columns.index("series")]
    series = [
        _series_from_table(f"{path} (series {sid:g})", columns, data[ids == sid], None)
        for sid in dict.fromkeys(ids.tolist())
    ]
    ks = {s.n_samples for s in series}
    if len(ks) > 1:
        raise DatasetFormatError(f"{path}: ragged series lengths {sorted(ks)}")
    try:
        return TimeSeriesSet(tuple(series))
    except ValidationError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None


# -- models -----------------------------------------------------------------

def dumps_model(model: DiscreteNmzModel, digest: str | None = None) -> str:
    out = [comment_header(digest).rstrip("\n")]
    out.append(f"nmz-model {MODEL_FORMAT_VERSION}")
    out.append(f"delta {fmt(model.delta)}")
    out.append(f"operators {model.n_operators}")
    for op in model.operators:
        out.append(f"lag {op.lag_index}")
        for row in op.matrix:
            out.append(" ".join(fmt(v) for v in row))
    out.append("end")
    return "\n".join(out) + "\n"


def save_model(model: DiscreteNmzModel, path, digest: str | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps_model(model, digest))
    return path


def loads_model(text: str) -> DiscreteNmzModel:
    """Parse the model text format; errors carry the byte offset of the offending line."""
    lines = []
    offset = 0
    for raw in text.splitlines(keepends=True):
        stripped = raw.strip()
        if stripped and not stripped.startswith("#"):
            lines.append((offset, stripped))
        offset += len(raw.encode())
    end = len(text.encode())
    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"unexpected end of file, expected {what}", end)
        item = lines[pos]
        pos += 1
        return item

    def keyed(key, conv):
        off, ln = take(key)
        parts = ln.split()
        if len(parts) != 2 or parts[0] != key:
            raise ModelFormatError(f"expected '{key} <value>', got {ln!r}", off)
        try:
            return conv(parts[1]), off
        except ValueError:
            raise ModelFormatError(f"bad value for {key}: {parts[1]!r}", off) from None

    version, off = keyed("nmz-model", int)
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}", off)
    delta, _ = keyed("delta", float)
    count, off = keyed("operators", int)
    if count < 1:
        raise ModelFormatError("model needs at least one operator", off)
    mats = []
    for lag in range(count):
        got, off = keyed("lag", int)
        if got != lag:
            raise ModelFormatError(f"expected lag {lag}, got {got}", off)
        rows = []
        for r in range(4):
            off, ln = take(f"row {r} of lag {lag}")
            try:
                vals = [float(v) for v in ln.split()]
            except ValueError:
                raise ModelFormatError(f"non-numeric matrix row {ln!r}", off) from None
            if len(vals) != 4:
                raise ModelFormatError(f"matrix row has {len(vals)} entries, expected 4", off)
            rows.append(vals)
        mats.append(np.array(rows))
    off, ln = take("end")
    if ln != "end":
        raise ModelFormatError(f"expected 'end', got {ln!r}", off)
    try:
        return DiscreteNmzModel.from_matrices(delta, mats)
    except ValidationError as exc:
        raise ModelFormatError(str(exc), 0) from None


def load_model(path) -> DiscreteNmzModel:
    return loads_model(Path(path).read_text())


# -- plot data ----------------------------------------------------------------

def emit_prediction(run: PredictionRun, path, digest: str | None = None) -> Path:
    cols = ["t [time]", "x_true", "y_true", "z_true", "x_pred", "y_pred", "z_pred"]
    pred = run.predicted.values[:, 1:4]
    truth = run.truth.values[:, 1:4] if run.truth is not None else np.full_like(pred, math.nan)
    rows = np.column_stack([run.predicted.times, truth, pred])
    extra = [f"rmse {fmt(run.rmse)}"] if run.rmse is not None else []
    return write_table(path, cols, rows, digest, extra)


def emit_sweep(result: SweepResult, path, digest: str | None = None) -> Path:
    """One row per kernel length: h, mean RMSE, its standard error, mean norm of the top lag."""
    norms = result.mean_norms
    rows = [(r.h, r.mean_rmse, r.stderr_rmse, norms[r.n_operators - 1]) for r in result.reports]
    return write_table(path, ["h [time]", "mean_rmse", "stderr_rmse", "mean_norm"], rows, digest)


def emit_norm_curve(result: SweepResult, path, digest: str | None = None) -> Path:
    n_folds = np.sum(np.isfinite(result.fold_norms), axis=0)
    std = np.nanstd(result.fold_norms, axis=0, ddof=1) if result.fold_norms.shape[0] > 1 else np.zeros(len(n_folds))
    rows = np.column_stack([result.lag_times, result.mean_norms, std / np.sqrt(np.maximum(n_folds, 1))])
    return write_table(path, ["h [time]", "mean_norm", "stderr_norm"], rows, digest)


def emit_folds(result: SweepResult, path, digest: str | None = None) -> Path:
    cols = ["h [time]"] + [f"fold_{i}" for i in range(result.fold_norms.shape[0])]
    rows = [(r.h, *r.fold_rmse) for r in result.reports]
    return write_table(path, cols, rows, digest)


def emit_matrix_elements(model: DiscreteNmzModel, path, digest: str | None = None) -> Path:
    """Matrix elements against kernel length: ``h`` then the 16 entries of each operator, row-major."""
    labels = ("b", "x", "y", "z")
    cols = ["h [time]"] + [f"O_{a}{b}" for a in labels for b in labels]
    rows = [(op.lag_index * model.delta, *op.matrix.ravel()) for op in model.operators]
    return write_table(path, cols, rows, digest)


def emit_plot_data(result, path, digest: str | None = None) -> Path:
    """Write the table matching ``result``'s type (prediction run, sweep or model)."""
    if isinstance(result, PredictionRun):
        return emit_prediction(result, path, digest)
    if isinstance(result, SweepResult):
        return emit_sweep(result, path, digest)
    if isinstance(result, DiscreteNmzModel):
        return emit_matrix_elements(result, path, digest)
    raise TypeError(f"no plot data writer for {type(result).__name__}")
