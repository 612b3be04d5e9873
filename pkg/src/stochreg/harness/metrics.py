"""Per-run metrics, the metrics table and seed averages."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .config import format_value

COLUMNS = ("scenario", "controller", "epsilon", "d", "c", "seed", "rms_e", "rms_zx",
           "skip_rate", "divergent")


def steady_state_rms(traj, T_ss: float) -> float:
    """RMS of ``e`` over the recorded samples with ``t >= T_ss``.

    ``traj`` needs ``times`` and ``e``; when it has a ``jump`` column the
    pre-jump duplicate of each jump row is dropped.

    Raises
    ------
    ConfigError
        When no sample falls in the window.
    """
    t = np.asarray(traj.times, dtype=float)
    e = np.asarray(traj.e, dtype=float)
    keep = t >= T_ss
    jump = getattr(traj, "jump", None)
    if jump is not None and t.size > 1:
        pre = np.zeros(t.size, dtype=bool)
        pre[:-1] = (np.asarray(jump)[:-1] == 0) & (t[1:] == t[:-1])
        keep &= ~pre
    if not np.any(keep):
        raise ConfigError(f"empty steady-state window (T_ss={T_ss})")
    return float(np.sqrt(np.mean(e[keep] ** 2)))


@dataclass
class MetricsRow:
    """Metrics of one run; RMS values are finite unless ``divergent``."""

    scenario: str
    controller: str
    params: dict
    seed: int
    rms_e: float
    rms_zx: float
    skip_rate: float
    divergent: bool

    def cells(self):
        def num(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

        def par(k):
            return format_value(self.params[k]) if k in self.params else ""

        return [self.scenario, self.controller, par("epsilon"), par("d"), par("c"),
                str(self.seed), num(self.rms_e), num(self.rms_zx), num(self.skip_rate),
                "1" if self.divergent else "0"]


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(COLUMNS)
        for r in rows:
            wr.writerow(r.cells())


def read_metrics_csv(path) -> list[dict]:
    """Rows of a metrics table as dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean(vals):
    a = np.asarray(vals, dtype=float)
    m = float(np.mean(a)) if a.size else math.nan
    return m if math.isfinite(m) else None


def seed_average(rows, param):
    """One entry per sweep value, in first-appearance order.

    The mean is taken over all seeds; a missing or non-finite seed value
    (e.g. a divergent run) makes it ``None``.
    """
    groups = {}
    for r in rows:
        key = format_value(r.params[param]) if param else ""
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        out.append({
            "value": key if param else None,
            "n_seeds": len(rs),
            "n_divergent": sum(r.divergent for r in rs),
            "mean_rms_e": _mean([r.rms_e for r in rs]),
            "mean_rms_zx": _mean([r.rms_zx for r in rs]),
            "mean_skip_rate": _mean([r.skip_rate for r in rs]),
        })
    return out
