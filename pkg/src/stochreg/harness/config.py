"""Experiment configuration: JSON loading with line-referenced errors."""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

SCENARIOS = ("circuit", "scalar", "custom-file")
CONTROLLERS = ("ideal_fi", "approx_fi", "ideal_of", "hybrid_of", "internal_model")
SWEEP_PARAMS = ("epsilon", "d", "c")

# desk-scale calibration; the source gives no horizon or seed count
DEFAULT_T = 2.0
DEFAULT_DELTA = 5e-7
FAST_T = 0.5
FAST_DELTA = 5e-6
DEFAULT_SEEDS = tuple(range(10))
SCALAR_T = 100.0
SCALAR_DELTA = 1e-3


def parse_eps(v):
    """``"inf"`` (or ``None``) maps to ``math.inf``; anything else must be a positive float."""
    if v is None or (isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity")):
        return math.inf
    try:
        out = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"epsilon must be a number or \"inf\", got {v!r}") from None
    if not out > 0:
        raise ConfigError(f"epsilon must be positive, got {v!r}")
    return out


def format_value(v) -> str:
    """Stable text form of a sweep value (``inf`` for an infinite period)."""
    v = float(v)
    return "inf" if math.isinf(v) else repr(v)


@dataclass
class ControllerSpec:
    type: str
    K: np.ndarray | None = None
    L_schedule: list = field(default_factory=list)
    H_im: np.ndarray | None = None
    L_im: np.ndarray | None = None
    G2_im: np.ndarray | None = None
    tau_v: float | None = None


@dataclass
class ExperimentConfig:
    """One experiment: a scenario, a controller, a grid, a sweep and seeds.

    ``base`` holds the scenario parameters not being swept (``epsilon``,
    ``d``, ``c``).
    """

    scenario: str
    controller: ControllerSpec
    delta: float
    T: float
    T_ss: float | None
    sweep_param: str | None
    sweep_values: list
    seeds: list
    out_dir: str
    base: dict = field(default_factory=dict)
    model_file: str | None = None
    record_every: int | None = None
    trace_seeds: list = field(default_factory=list)
    workers: int = 1
    source: str | None = None

    def points(self):
        """Parameter dicts of every sweep point, in config order."""
        if self.sweep_param is None:
            return [dict(self.base)]
        return [{**self.base, self.sweep_param: v} for v in self.sweep_values]


def _line_of(text, key):
    """1-based line of the first occurrence of ``"key"``, or ``None``."""
    if text is None:
        return None
    mt = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, mt.start()) + 1 if mt else None


class _Ctx:
    def __init__(self, path, text):
        self.path, self.text = path, text

    def fail(self, key, msg):
        line = _line_of(self.text, key) if key else None
        where = self.path or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        raise ConfigError(f"{where}: {msg}")


def _vec(ctx, key, v, size=None):
    try:
        a = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
    except (TypeError, ValueError):
        ctx.fail(key, f"{key} must be a numeric array")
    if size is not None and a.size != size:
        ctx.fail(key, f"{key} must have {size} entries, got {a.size}")
    if not np.all(np.isfinite(a)):
        ctx.fail(key, f"{key} has non-finite entries")
    return a


def _controller(ctx, d):
    if not isinstance(d, dict):
        ctx.fail("controller", "controller must be an object")
    typ = d.get("type")
    if typ not in CONTROLLERS:
        ctx.fail("type", f"controller type must be one of {', '.join(CONTROLLERS)}, got {typ!r}")
    spec = ControllerSpec(type=typ)
    if "K" in d:
        spec.K = _vec(ctx, "K", d["K"])
    sched = d.get("L_schedule", [])
    if not isinstance(sched, list):
        ctx.fail("L_schedule", "L_schedule must be a list of {t, L} objects")
    for item in sched:
        if not isinstance(item, dict) or "t" not in item or "L" not in item:
            ctx.fail("L_schedule", "each L_schedule entry needs keys t and L")
        spec.L_schedule.append((float(item["t"]), _vec(ctx, "L_schedule", item["L"])))
    if sched and min(t for t, _ in spec.L_schedule) > 0:
        ctx.fail("L_schedule", "L_schedule must start at t = 0")
    if "H_im" in d:
        try:
            spec.H_im = np.atleast_2d(np.asarray(d["H_im"], dtype=float))
        except (TypeError, ValueError):
            ctx.fail("H_im", "H_im must be a numeric matrix")
    for key in ("L_im", "G2_im"):
        if key in d:
            setattr(spec, key, _vec(ctx, key, d[key]))
    if d.get("tau_v") is not None:
        spec.tau_v = float(d["tau_v"])
    return spec


def config_from_dict(d: dict, path=None, text=None, fast=False) -> ExperimentConfig:
    """Validate a parsed config document.

    Parameters
    ----------
    path, text : optional
        Source file name and raw text, used for line numbers in errors.
    fast : bool
        Use the down-scaled grid for fields left unset.
    """
    ctx = _Ctx(path, text)
    if not isinstance(d, dict):
        ctx.fail(None, "config must be a JSON object")
    known = {"scenario", "controller", "delta", "T", "T_ss", "epsilon", "d", "c", "sweep",
             "seeds", "out_dir", "model_file", "record_every", "trace_seeds", "workers"}
    for k in d:
        if k not in known:
            ctx.fail(k, f"unknown key {k!r}")
    scen = d.get("scenario")
    if scen not in SCENARIOS:
        ctx.fail("scenario", f"scenario must be one of {', '.join(SCENARIOS)}, got {scen!r}")
    if "controller" not in d:
        ctx.fail(None, "missing key 'controller'")
    ctrl = _controller(ctx, d["controller"])

    def num(key, default):
        v = d.get(key, default)
        try:
            v = float(v)
        except (TypeError, ValueError):
            ctx.fail(key, f"{key} must be a number")
        if not (math.isfinite(v) and v > 0):
            ctx.fail(key, f"{key} must be positive and finite")
        return v

    if scen == "scalar":
        delta = num("delta", SCALAR_DELTA)
        T = num("T", SCALAR_T)
    else:
        delta = num("delta", FAST_DELTA if fast else DEFAULT_DELTA)
        T = num("T", FAST_T if fast else DEFAULT_T)
    T_ss = d.get("T_ss")
    if T_ss is not None:
        T_ss = float(T_ss)
        if not 0 <= T_ss < T:
            ctx.fail("T_ss", "T_ss must satisfy 0 <= T_ss < T")

    base = {}
    try:
        base["epsilon"] = parse_eps(d.get("epsilon", "inf"))
    except ConfigError as exc:
        ctx.fail("epsilon", str(exc))
    if "d" in d:
        base["d"] = float(d["d"])
    if "c" in d:
        base["c"] = float(d["c"])

    sweep = d.get("sweep")
    param, values = None, []
    if sweep is not None:
        if not isinstance(sweep, dict):
            ctx.fail("sweep", "sweep must be an object {param, values}")
        param = sweep.get("param")
        if param not in SWEEP_PARAMS:
            ctx.fail("param", f"sweep param must be one of {', '.join(SWEEP_PARAMS)}, got {param!r}")
        values = sweep.get("values")
        if not isinstance(values, list) or not values:
            ctx.fail("values", "sweep values must be a nonempty list")
        try:
            values = [parse_eps(v) if param == "epsilon" else float(v) for v in values]
        except (ConfigError, TypeError, ValueError) as exc:
            ctx.fail("values", f"bad sweep value: {exc}")
        if len(set(values)) != len(values):
            ctx.fail("values", "sweep values must be distinct")
        if param == "d" and scen != "circuit":
            ctx.fail("param", "a d sweep needs the circuit scenario")
        if param == "c" and scen != "scalar":
            ctx.fail("param", "a c sweep needs the scalar scenario")
    if scen == "scalar" and "c" not in base and param != "c":
        ctx.fail("scenario", "the scalar scenario needs c (or a c sweep)")
    if scen == "circuit":
        base.setdefault("d", 1.0)
        if not base["d"] > 0:
            ctx.fail("d", "d must be positive")

    seeds = d.get("seeds", list(DEFAULT_SEEDS))
    if not isinstance(seeds, list) or not seeds:
        ctx.fail("seeds", "seeds must be a nonempty list")
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        ctx.fail("seeds", "seeds must be nonnegative integers")
    if len(set(seeds)) != len(seeds):
        ctx.fail("seeds", "seeds must be distinct")
    trace = d.get("trace_seeds", [min(seeds)])
    if not isinstance(trace, list) or any(s not in seeds for s in trace):
        ctx.fail("trace_seeds", "trace_seeds must be a subset of seeds")

    model_file = d.get("model_file")
    if scen == "custom-file":
        if not model_file:
            ctx.fail("scenario", "the custom-file scenario needs model_file")
        if path and not os.path.isabs(model_file):
            model_file = os.path.join(os.path.dirname(os.path.abspath(path)), model_file)
        if not os.path.isfile(model_file):
            ctx.fail("model_file", f"model file {model_file!r} not found")
        if ctrl.K is None:
            ctx.fail("controller", "a custom model needs the gain K")

    out_dir = d.get("out_dir", "out")
    if path and not os.path.isabs(out_dir):
        out_dir = os.path.join(os.path.dirname(os.path.abspath(path)), out_dir)
    rec = d.get("record_every")
    workers = d.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        ctx.fail("workers", "workers must be a positive integer")
    return ExperimentConfig(scen, ctrl, delta, T, T_ss, param, values, list(seeds), out_dir,
                            base, model_file, None if rec is None else int(rec), list(trace),
                            workers, path)


def load_config(path, fast=False) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return config_from_dict(d, path, text, fast)
