"""Experiment configuration and orchestration.

A config is an INI file with one section per concern. Unknown sections or
keys are errors. Every run writes ``run_manifest.ini`` holding the resolved
config so it can be repeated exactly; numeric outputs depend only on the
config (including its seed).
"""
from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .analysis import (
    FitConvergenceError,
    extract_physical_rates,
    fit_exponential_decay,
    select_truncation,
)
from .core import MasterEquationParams, NmzError, TimeSeriesSet, ValidationError
from .io import (
    comment_header,
    emit_folds,
    emit_matrix_elements,
    emit_norm_curve,
    emit_prediction,
    emit_sweep,
    fmt,
    load_dataset,
    load_model,
    read_table,
    save_dataset,
    save_model,
    write_table,
)
from .learner import ESTIMATORS, learn_model, recover_continuous
from .predictor import loocv_sweep, run_prediction
from .simulator import (
    OuParams,
    SimConfig,
    apply_shot_noise,
    random_initial_states,
    simulate_markov_set,
    simulate_stochastic_set,
)

MODES = ("simulate-markov", "simulate-ou", "learn", "predict", "sweep", "extract", "fit-decay")


class ConfigError(NmzError, ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.replace(" ", "").split(",") if v]


# section -> key -> (parser, default); a default of None means "unset"
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {"mode": (str, None), "seed": (int, 0), "out": (str, "out"), "workers": (int, 1)},
    "markov": {k: (float, 0.0) for k in MasterEquationParams.__dataclass_fields__},
    "ou": {"gamma": (float, 0.5), "mu": (float, 0.5), "sigma": (float, 0.1), "omega_z": (float, 1.0)},
    "sim": {
        "n_series": (int, 10),
        "delta_fine": (float, 1e-3),
        "total_time": (float, 20.0),
        "downsample": (int, 100),
        "n_trajectories": (int, 5000),
        "antithetic": (_bool, True),
        "shots": (int, 0),
    },
    "data": {"path": (str, None), "source": (str, "file")},
    "learner": {
        "kernel_length": (float, 0.0),
        "estimator": (str, "window"),
        "window": (int, 0),
        "ridge": (float, 0.0),
    },
    "predict": {"model": (str, None), "horizon": (int, 0), "series": (str, "all")},
    "sweep": {
        "h_grid": (_floats, [0.0, 0.1, 0.2, 0.5]),
        "horizon": (int, 0),
        "norm": (str, "spectral"),
        "fit_hmax": (float, 0.0),
        "threshold": (float, 0.01),
    },
    "extract": {"model": (str, None), "delta": (float, 0.0), "matrix": (_floats, None)},
    "fit": {"input": (str, None), "x_column": (str, None), "y_column": (str, None),
            "threshold": (float, 0.01)},
}


_NON_NUMERIC = {("run", "out"), ("run", "workers")}


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, Any]]
    raw: dict[str, dict[str, str]]

    @property
    def mode(self) -> str:
        return self.values["run"]["mode"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out(self) -> Path:
        return Path(self.values["run"]["out"])

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def resolved_text(self, numeric_only: bool = False) -> str:
        """Canonical INI text of the fully resolved config (defaults filled in).

        ``numeric_only`` drops the keys that cannot change numeric results
        (output directory and worker count).
        """
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, keys in SCHEMA.items():
            cp[sec] = {k: self.raw[sec].get(k, _unparse(self.values[sec][k])) for k in keys
                       if not (numeric_only and (sec, k) in _NON_NUMERIC)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.resolved_text(numeric_only=True).encode()).hexdigest()


def _unparse(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt(v)
    if isinstance(v, list):
        return ",".join(fmt(x) for x in v)
    return str(v)


def parse_config(text: str, overrides: dict[str, dict[str, str]] | None = None,
                 expect_mode: str | None = None) -> ExperimentConfig:
    """Parse INI text, apply ``overrides`` (section -> key -> text) and validate.

    With ``expect_mode`` set, a ``[run] mode`` present in the file must agree with it.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    raw: dict[str, dict[str, str]] = {sec: {} for sec in SCHEMA}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, val in cp[sec].items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown config key '{key}' in section [{sec}]")
            raw[sec][key] = val
    file_mode = raw["run"].get("mode", "").strip()
    if expect_mode is not None and file_mode and file_mode != expect_mode:
        raise ConfigError(f"config file sets mode {file_mode!r} but {expect_mode!r} was requested")
    for sec, kv in (overrides or {}).items():
        for key, val in kv.items():
            if key not in SCHEMA.get(sec, {}):
                raise ConfigError(f"unknown config key '{key}' in section [{sec}]")
            raw[sec][key] = val
    values: dict[str, dict[str, Any]] = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in keys.items():
            if key in raw[sec] and raw[sec][key].strip() != "":
                try:
                    values[sec][key] = conv(raw[sec][key])
                except ValueError as exc:
                    raise ConfigError(f"bad value for [{sec}] {key}: {exc}") from None
            else:
                values[sec][key] = default
    cfg = ExperimentConfig(values, raw)
    if cfg.mode not in MODES:
        raise ConfigError(f"[run] mode must be one of {MODES}, got {cfg.mode!r}")
    if cfg["learner"]["estimator"] not in ESTIMATORS:
        raise ConfigError(f"[learner] estimator must be one of {ESTIMATORS}")
    if cfg["data"]["source"] not in ("file", "markov", "ou"):
        raise ConfigError("[data] source must be file, markov or ou")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("[run] seed must be a 64-bit unsigned integer")
    return cfg


def load_config(path, overrides=None, expect_mode: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides, expect_mode)


# -- data sources ---------------------------------------------------------------

def _markov_params(cfg: ExperimentConfig) -> MasterEquationParams:
    return MasterEquationParams(**cfg["markov"])


def _sim_config(cfg: ExperimentConfig) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(s["delta_fine"], s["total_time"], s["downsample"], s["n_trajectories"],
                     cfg.seed, s["antithetic"])


def _with_shots(cfg: ExperimentConfig, data: TimeSeriesSet) -> TimeSeriesSet:
    shots = cfg["sim"]["shots"]
    if shots <= 0:
        return data
    return TimeSeriesSet(tuple(
        apply_shot_noise(s, shots, seed=cfg.seed + 1 + i) for i, s in enumerate(data)
    ))


def simulate_markov_data(cfg: ExperimentConfig) -> TimeSeriesSet:
    s = cfg["sim"]
    states = random_initial_states(s["n_series"], cfg.seed)
    data = simulate_markov_set(_markov_params(cfg), states, s["delta_fine"], s["total_time"],
                               s["downsample"])
    return _with_shots(cfg, data)


def simulate_ou_data(cfg: ExperimentConfig) -> TimeSeriesSet:
    o = cfg["ou"]
    ou = OuParams(o["gamma"], o["mu"], o["sigma"])
    states = random_initial_states(cfg["sim"]["n_series"], cfg.seed)
    data = simulate_stochastic_set(o["omega_z"], ou, states, _sim_config(cfg),
                                   n_workers=cfg["run"]["workers"])
    return _with_shots(cfg, data)


def _input_data(cfg: ExperimentConfig) -> TimeSeriesSet:
    src = cfg["data"]["source"]
    if src == "markov":
        return simulate_markov_data(cfg)
    if src == "ou":
        return simulate_ou_data(cfg)
    path = cfg["data"]["path"]
    if not path:
        raise ConfigError("[data] path is required when source = file")
    if not Path(path).exists():
        raise ConfigError(f"[data] path {path} does not exist")
    return load_dataset(path)


def _n_operators(h: float, delta: float) -> int:
    l = round(h / delta)
    if l < 0 or abs(l * delta - h) > 1e-9 * max(1.0, h):
        raise ConfigError(f"kernel length {h} is not a multiple of delta={delta}")
    return l + 1


def _learn_kwargs(cfg: ExperimentConfig) -> dict:
    L = cfg["learner"]
    return dict(window=L["window"] or None, estimator=L["estimator"], ridge=L["ridge"])


# -- modes --------------------------------------------------------------------

def _run_simulate(cfg, out, digest, kind):
    data = simulate_markov_data(cfg) if kind == "markov" else simulate_ou_data(cfg)
    save_dataset(data, out / "dataset", digest)
    return {"dataset": out / "dataset"}


def _run_learn(cfg, out, digest):
    data = _input_data(cfg)
    n_ops = _n_operators(cfg["learner"]["kernel_length"], data.delta)
    model = learn_model(data, n_ops, **_learn_kwargs(cfg))
    save_model(model, out / "model.txt", digest)
    emit_matrix_elements(model, out / "matrix_elements.csv", digest)
    cont = recover_continuous(model)
    labels = ("b", "x", "y", "z")
    write_table(out / "continuous_markov.csv", [f"M_{a}{b}" for a in labels for b in labels],
                [cont.markov.ravel()], digest)
    return {"model": out / "model.txt"}


def _run_predict(cfg, out, digest):
    p = cfg["predict"]
    if not p["model"] or not Path(p["model"]).exists():
        raise ConfigError("[predict] model must name an existing model file")
    model = load_model(p["model"])
    data = _input_data(cfg)
    if p["series"] == "all":
        idx = list(range(data.n_series))
    else:
        try:
            idx = [int(v) for v in p["series"].split(",")]
        except ValueError:
            raise ConfigError("[predict] series must be 'all' or a list of indices") from None
    rows = []
    for i in idx:
        run = run_prediction(model, data[i], p["horizon"] or None)
        emit_prediction(run, out / f"prediction_{i:03d}.csv", digest)
        rows.append((i, run.rmse))
    write_table(out / "rmse.csv", ["series", "rmse"], rows, digest)
    return {"rmse": rows}


def _run_sweep(cfg, out, digest):
    data = _input_data(cfg)
    s = cfg["sweep"]
    result = loocv_sweep(data, s["h_grid"], s["horizon"] or None, norm_kind=s["norm"],
                         n_workers=cfg["run"]["workers"], **_learn_kwargs(cfg))
    emit_sweep(result, out / "sweep.csv", digest)
    emit_norm_curve(result, out / "norm_curve.csv", digest)
    emit_folds(result, out / "fold_rmse.csv", digest)
    failures = [(i, e) for i, e in enumerate(result.fold_errors) if e]
    with open(out / "fold_failures.txt", "w") as fh:
        fh.write(comment_header(digest))
        for i, e in failures:
            fh.write(f"fold {i}: {e}\n")
    curve = result.norm_curve()
    if s["fit_hmax"] > 0:
        curve = [c for c in curve if c[0] <= s["fit_hmax"] * (1 + 1e-12)]
    info = {"sweep": result}
    if len(curve) >= 4:
        try:
            fit, converged = fit_exponential_decay(curve), True
        except FitConvergenceError as exc:
            fit, converged = exc.best, False
        trunc = select_truncation(curve, fit, s["threshold"])
        _write_fit(out / "norm_fit.ini", fit, trunc, digest, converged)
        info["fit"] = fit
    return info


def _write_fit(path, fit, trunc, digest, converged=True):
    with open(path, "w") as fh:
        fh.write(comment_header(digest))
        fh.write("[fit]\n")
        fh.write(f"amplitude = {fmt(fit.amplitude)}\n")
        fh.write(f"decay_rate = {fmt(fit.decay_rate)}\n")
        fh.write(f"offset = {fmt(fit.offset)}\n")
        fh.write(f"residual = {fmt(fit.residual)}\n")
        fh.write(f"identifiable = {str(fit.identifiable).lower()}\n")
        fh.write(f"converged = {str(converged).lower()}\n")
        fh.write("[truncation]\n")
        fh.write(f"h_star = {fmt(trunc.h_star)}\n")
        fh.write(f"flag = {trunc.flag or ''}\n")


def _run_extract(cfg, out, digest):
    e = cfg["extract"]
    if e["matrix"] is not None:
        if len(e["matrix"]) != 16:
            raise ConfigError("[extract] matrix needs 16 comma-separated entries (row-major)")
        matrix = np.array(e["matrix"]).reshape(4, 4)
        delta = e["delta"]
    elif e["model"]:
        if not Path(e["model"]).exists():
            raise ConfigError(f"[extract] model {e['model']} does not exist")
        model = load_model(e["model"])
        matrix = model.operators[0].matrix
        delta = e["delta"] or model.delta
    else:
        raise ConfigError("[extract] needs either matrix or model")
    if not delta > 0:
        raise ConfigError("[extract] delta must be positive")
    rates = extract_physical_rates(matrix, delta)
    with open(out / "rates.ini", "w") as fh:
        fh.write(comment_header(digest, ["rates assume gamma_plus = 0"]))
        fh.write("[rates]\n")
        for k, v in rates.params.as_dict().items():
            fh.write(f"{k} = {fmt(v)}\n")
        fh.write("[diagnostics]\n")
        fh.write(f"negatives_flag = {str(rates.negatives_flag).lower()}\n")
        fh.write(f"residual_asymmetry = {fmt(rates.residual_asymmetry)}\n")
        for name, v in zip(("omega_x", "omega_y", "omega_z"), rates.single_entry_omegas):
            fh.write(f"{name}_single_entry = {fmt(v)}\n")
    return {"rates": rates}


def _run_fit(cfg, out, digest):
    f = cfg["fit"]
    if not f["input"] or not Path(f["input"]).exists():
        raise ConfigError("[fit] input must name an existing table")
    columns, data = read_table(f["input"])
    xi = columns.index(f["x_column"]) if f["x_column"] else 0
    yi = columns.index(f["y_column"]) if f["y_column"] else 1
    curve = [(float(a), float(b)) for a, b in data[:, [xi, yi]] if math.isfinite(b)]
    fit = fit_exponential_decay(curve)
    trunc = select_truncation(curve, fit, f["threshold"])
    _write_fit(out / "fit.ini", fit, trunc, digest)
    return {"fit": fit, "truncation": trunc}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run the configured mode, writing all artifacts under ``cfg.out``.

    On failure a ``FAILED`` marker with the error is left in the output
    directory and the exception propagates.
    """
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    digest = cfg.digest
    (out / "run_manifest.ini").write_text(comment_header(digest) + cfg.resolved_text())
    runners = {
        "simulate-markov": lambda: _run_simulate(cfg, out, digest, "markov"),
        "simulate-ou": lambda: _run_simulate(cfg, out, digest, "ou"),
        "learn": lambda: _run_learn(cfg, out, digest),
        "predict": lambda: _run_predict(cfg, out, digest),
        "sweep": lambda: _run_sweep(cfg, out, digest),
        "extract": lambda: _run_extract(cfg, out, digest),
        "fit-decay": lambda: _run_fit(cfg, out, digest),
    }
    try:
        return runners[cfg.mode]()
    except ValidationError as exc:
        failed.write_text(f"{type(exc).__name__}: {exc}\n")
        raise ConfigError(str(exc)) from exc
    except Exception as exc:
        failed.write_text(f"{type(exc).__name__}: {exc}\n")
        raise
