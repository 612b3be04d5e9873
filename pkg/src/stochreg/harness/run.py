"""Sweep orchestration and figure presets."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..control import (approx_fi_policy, hybrid_of_policy, ideal_fi_policy, ideal_of_policy,
                       internal_model_policy)
from ..errors import ConfigError, ModelError
from ..model import GainSet, load_model, preset_circuit, preset_scalar, \
    stochastic_relative_degree
from ..noise import generate_path
from ..regeq import integrate_ideal_regeq
from ..sim import SimConfig, simulate_closed_loop
from ..stability import affine_family_roots, pi_generators, scalar_as_check, scalar_ms_check
from .config import DEFAULT_SEEDS, ExperimentConfig, config_from_dict, format_value, load_config
from .metrics import MetricsRow, seed_average, write_metrics_csv

SCALAR_K = -2.4
MAX_TRACE_ROWS = 20000
FIGURES = ("fig1", "fig3", "fig4", "fig5", "fig6")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def scenario_model(cfg: ExperimentConfig, point: dict):
    """``(plant, exosystem, gains)`` for one sweep point."""
    spec = cfg.controller
    if cfg.scenario == "circuit":
        m, e, g = preset_circuit(point["d"])
        K = g.K if spec.K is None else spec.K
    elif cfg.scenario == "scalar":
        m, e = preset_scalar(point["c"])
        K = np.array([SCALAR_K]) if spec.K is None else spec.K
    else:
        m, e = load_model(cfg.model_file)
        if e is None:
            raise ConfigError(f"{cfg.model_file}: model has no exosystem (S, omega0)")
        K = spec.K
    if K.size != m.n:
        raise ConfigError(f"K has {K.size} entries, the plant has {m.n} states")
    return m, e, GainSet(K, spec.L_schedule)


def build_policy(cfg: ExperimentConfig, m, e, gains, eps):
    spec = cfg.controller
    rd = stochastic_relative_degree(m, e.S)
    if spec.type == "ideal_fi":
        return ideal_fi_policy(gains.K, m, e, rd)
    if spec.type == "approx_fi":
        return approx_fi_policy(gains.K, m, e, rd, eps=eps, tau_v=spec.tau_v)
    if spec.type == "ideal_of":
        return ideal_of_policy(gains, m, e, rd, oracle=True)
    if spec.type == "hybrid_of":
        return hybrid_of_policy(gains, m, e, rd, eps=eps, tau_v=spec.tau_v)
    return internal_model_policy(gains.K, m, e, rd, H_im=spec.H_im, L_im=spec.L_im,
                                 G2_im=spec.G2_im, eps=eps, tau_v=spec.tau_v)


def _record_every(cfg, sc: SimConfig):
    if cfg.record_every is not None:
        return cfg.record_every
    return max(sc.record_every, math.ceil(sc.n_steps / MAX_TRACE_ROWS))


def _trace_name(cfg, point, seed, kind):
    tag = f"{cfg.sweep_param}={format_value(point[cfg.sweep_param])}_" if cfg.sweep_param else ""
    return f"{kind}_{tag}seed{seed}.csv"


def run_point(cfg: ExperimentConfig, point: dict, seed: int, trace_dir=None) -> MetricsRow:
    """Simulate one (sweep point, seed) pair; optionally write its traces."""
    m, e, gains = scenario_model(cfg, point)
    eps = point["epsilon"]
    sc = SimConfig(cfg.delta, eps, cfg.T, cfg.T_ss, seed)
    sc = SimConfig(cfg.delta, eps, cfg.T, cfg.T_ss, seed, _record_every(cfg, sc))
    pol = build_policy(cfg, m, e, gains, eps)
    path = generate_path(seed, cfg.delta, cfg.T)
    tr = simulate_closed_loop(m, e, pol, path, sc)
    divergent = tr.divergent
    if cfg.scenario == "scalar":
        sol = integrate_ideal_regeq(m, e, None, path, sc)
        divergent = divergent or not sol.bounded
        if trace_dir is not None:
            sol.to_csv(os.path.join(trace_dir, _trace_name(cfg, point, seed, "pi")))
    if trace_dir is not None:
        tr.to_csv(os.path.join(trace_dir, _trace_name(cfg, point, seed, "traj")))
    skip = tr.jumps.skip_rate
    return MetricsRow(cfg.scenario, cfg.controller.type, point, seed,
                      math.nan if divergent else tr.ss_rms_e,
                      math.nan if divergent else tr.ss_rms_zx, skip, divergent)


def _task(args):
    cfg, point, seed, trace_dir = args
    return run_point(cfg, point, seed, trace_dir)


def _scalar_pi_pair(c):
    m, e = preset_scalar(c)
    A_pi, F_pi = pi_generators(m, stochastic_relative_degree(m, e.S))
    return float(A_pi[0, 0]), float(F_pi[0, 0])


def _stability_table(cfg):
    """Per-``c`` almost-sure and mean-square verdicts of the regulator flow."""
    rows = []
    for p in cfg.points():
        a, f = _scalar_pi_pair(p["c"])
        rows.append({"c": p["c"], "A_pi": a, "F_pi": f,
                     "almost_sure": scalar_as_check(a, f).to_dict(),
                     "mean_square": scalar_ms_check(a, f).to_dict()})
    # A_pi and F_pi are affine in c: read the coefficients off c = 0 and c = 1
    (a0, f0), (a1, f1) = (_scalar_pi_pair(c) for c in (0.0, 1.0))
    a1, f1 = a1 - a0, f1 - f0
    return {"points": rows,
            "as_roots": affine_family_roots(a0, a1, f0, f1, "as").tolist(),
            "ms_roots": affine_family_roots(a0, a1, f0, f1, "ms").tolist()}


def execute(cfg: ExperimentConfig):
    """Run every (point, seed) pair and write the artifacts.

    Returns
    -------
    list of MetricsRow
        In sweep order, seeds ascending within a point.
    """
    out = cfg.out_dir
    trace_dir = os.path.join(out, "traces")
    os.makedirs(trace_dir, exist_ok=True)
    tasks = [(cfg, p, s, trace_dir if s in cfg.trace_seeds else None)
             for p in cfg.points() for s in sorted(cfg.seeds)]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            rows = list(ex.map(_task, tasks))
    else:
        rows = [_task(t) for t in tasks]
    write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    summary = {
        "scenario": cfg.scenario,
        "controller": cfg.controller.type,
        "sweep_param": cfg.sweep_param,
        "base": {k: format_value(v) for k, v in sorted(cfg.base.items())},
        "grid": {"delta": cfg.delta, "T": cfg.T,
                 "T_ss": cfg.T_ss if cfg.T_ss is not None else cfg.T / 2},
        "seeds": sorted(cfg.seeds),
        "calibration_note": ("horizon, steady-state window and seed count are desk-scale "
                             "calibration defaults, not values taken from the source"),
        "points": seed_average(rows, cfg.sweep_param),
    }
    if cfg.scenario == "scalar":
        summary["stability"] = _stability_table(cfg)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return rows


def run(config_path, out_dir=None, fast=False) -> int:
    """Run the experiment of a JSON config; returns the process exit code.

    ``2`` is returned when a run without a sweep diverged.  Config errors
    raise :class:`~stochreg.errors.ConfigError`.
    """
    cfg = load_config(config_path, fast=fast)
    if out_dir is not None:
        cfg.out_dir = out_dir
    try:
        rows = execute(cfg)
    except ModelError as exc:
        raise ConfigError(f"{config_path}: {exc}") from None
    if cfg.sweep_param is None and any(r.divergent for r in rows):
        return EXIT_DIVERGED
    return EXIT_OK


# -- figure presets ----------------------------------------------------------

def figure_config(fig: str, fast=False, seeds=None) -> dict:
    """Config document of a figure preset.

    ``fig3``/``fig4``: d-sweep, full-information / output feedback.
    ``fig5``/``fig6``: epsilon-sweep at ``d = 2``.  ``fig1``: scalar
    ``c``-sweep with the ideal regulator matrix.
    """
    if fig not in FIGURES:
        raise ConfigError(f"unknown figure {fig!r}; choose from {', '.join(FIGURES)}")
    seeds = list(DEFAULT_SEEDS) if seeds is None else list(seeds)
    if fig == "fig1":
        return {"scenario": "scalar", "controller": {"type": "ideal_fi"},
                "sweep": {"param": "c", "values": [-0.5, -5.0, 0.5]}, "seeds": seeds}
    ctrl = {"type": "approx_fi" if fig in ("fig3", "fig5") else "hybrid_of"}
    d = {"scenario": "circuit", "controller": ctrl, "seeds": seeds}
    if fig in ("fig3", "fig4"):
        d["epsilon"] = 5e-4 if fast else 5e-5
        d["sweep"] = {"param": "d", "values": [10.0, 1.0, 0.1]}
    else:
        d["d"] = 2.0
        eps = ["inf", 5e-4, 5e-5] + ([] if fast else [5e-6])
        d["sweep"] = {"param": "epsilon", "values": eps}
    return d


def _write_plot_csv(cfg, path):
    """Long-format ``value,t,e`` (or ``value,t,Pi_11``) for the first trace seed.

    Pre-jump duplicates are dropped so each time appears once.
    """
    seed = min(cfg.trace_seeds)
    kind = "pi" if cfg.scenario == "scalar" else "traj"
    col = "Pi_11" if kind == "pi" else "e"
    with open(path, "w", newline="") as out:
        wr = csv.writer(out, lineterminator="\n")
        wr.writerow([cfg.sweep_param, "t", col])
        for p in cfg.points():
            fn = os.path.join(cfg.out_dir, "traces", _trace_name(cfg, p, seed, kind))
            with open(fn, newline="") as fh:
                rows = list(csv.DictReader(fh))
            v = format_value(p[cfg.sweep_param])
            for i, row in enumerate(rows):
                if kind == "traj" and i + 1 < len(rows) and rows[i + 1]["t"] == row["t"]:
                    continue
                wr.writerow([v, row["t"], row[col]])


def reproduce(fig: str, out_dir=None, fast=False, seeds=None, workers=1) -> dict:
    """Run a figure preset; returns the parsed ``summary.json``."""
    d = figure_config(fig, fast, seeds)
    d["out_dir"] = out_dir or os.path.join("out", fig)
    d["workers"] = workers
    cfg = config_from_dict(d, fast=fast)
    execute(cfg)
    _write_plot_csv(cfg, os.path.join(cfg.out_dir, f"{fig}.csv"))
    with open(os.path.join(cfg.out_dir, "summary.json")) as fh:
        return json.load(fh)
