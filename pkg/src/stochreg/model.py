"""Plant and exosystem models, validation, relative degree and presets.

The plant is the scalar-input, scalar-noise linear SDE

    dx = (A x + B u + P w) dt + (F x + G u + R w) dW
    e  = C x + D u + Q w

driven by the exosystem ``dw/dt = S w``.  Two measured outputs are
available for output feedback, ``ya = Ca x`` and ``yb = Cb x``.

Vectors that are mathematically 1 x n rows or n x 1 columns are stored
as flat ``(n,)`` arrays; ``P`` and ``R`` are ``(n, nu)`` and ``Q`` is
``(nu,)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ModelError, UndefinedRelativeDegree

TAU_EIG = 1e-9
ZERO_TOL = 1e-12

_VECTOR_KEYS = ("B", "G", "C", "Ca", "Cb")


def _as_float(a):
    return np.array(a, dtype=float)


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Matrices of the linear stochastic plant.

    No checks are done on construction so that malformed models can be
    built and then inspected with :func:`validate_plant`.
    """

    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    F: np.ndarray
    G: np.ndarray
    R: np.ndarray
    C: np.ndarray
    D: float
    Q: np.ndarray
    Ca: np.ndarray | None = None
    Cb: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A", "P", "F", "R"):
            object.__setattr__(self, name, np.atleast_2d(_as_float(getattr(self, name))))
        for name in ("B", "G", "C", "Q"):
            object.__setattr__(self, name, np.atleast_1d(_as_float(getattr(self, name))).ravel())
        for name in ("Ca", "Cb"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.atleast_1d(_as_float(v)).ravel())
        object.__setattr__(self, "D", float(self.D))
        for name in ("A", "B", "P", "F", "G", "R", "C", "Q", "Ca", "Cb"):
            v = getattr(self, name)
            if v is not None:
                v.setflags(write=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.P.shape[1]

    @property
    def has_outputs(self) -> bool:
        return self.Ca is not None and self.Cb is not None

    def replace(self, **kw) -> "PlantModel":
        """Return a copy with some matrices replaced."""
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return PlantModel(**d)

    def deterministic(self) -> "PlantModel":
        """Same plant with ``F``, ``G`` and ``R`` set to zero."""
        return self.replace(F=np.zeros_like(self.F), G=np.zeros_like(self.G),
                            R=np.zeros_like(self.R))

    def scaled_exogenous(self, s: float) -> "PlantModel":
        """Scale ``P``, ``R`` and ``Q`` by ``s``."""
        return self.replace(P=s * self.P, R=s * self.R, Q=s * self.Q)


@dataclass(frozen=True, eq=False)
class Exosystem:
    """Autonomous exosystem ``dw/dt = S w`` with initial state ``omega0``."""

    S: np.ndarray
    omega0: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(_as_float(self.S))
        w = np.atleast_1d(_as_float(self.omega0)).ravel()
        S.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "omega0", w)

    @property
    def nu(self) -> int:
        return self.S.shape[0]


@dataclass
class ValidationReport:
    """Collected validation failures; empty means valid."""

    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self):
        return self.ok

    def add(self, msg: str):
        self.failures.append(msg)

    def raise_if_failed(self, what="model"):
        if self.failures:
            raise ModelError(f"invalid {what}: " + "; ".join(self.failures))


@dataclass(frozen=True, eq=False)
class RelativeDegreeInfo:
    """Stochastic relative degree and the associated output chain.

    Attributes
    ----------
    r : int
        Relative degree (0 when ``D != 0``).
    b, g : float
        ``C A^(r-1) B`` and ``C A^(r-1) G``; zero for ``r = 0``.
    q_chain : tuple of ndarray
        ``Q_0 .. Q_r``, each of shape ``(nu,)``.
    zeta_maps : tuple of ndarray
        Rows ``C A^i`` for ``i = 0 .. r-1``.
    """

    r: int
    b: float
    g: float
    q_chain: tuple
    zeta_maps: tuple


@dataclass
class GainSet:
    """Feedback gain ``K`` and an optional piecewise-constant observer gain.

    ``L_schedule`` is a list of ``(t_start, L)`` pairs sorted by time; the
    gain in force at time ``t`` is the last entry with ``t_start <= t``.
    """

    K: np.ndarray
    L_schedule: list = field(default_factory=list)

    def __post_init__(self):
        self.K = np.atleast_1d(_as_float(self.K)).ravel()
        sched = [(float(t), np.atleast_1d(_as_float(L)).ravel()) for t, L in self.L_schedule]
        sched.sort(key=lambda p: p[0])
        if sched and sched[0][0] > 0.0:
            raise ModelError("L schedule must start at t = 0")
        self.L_schedule = sched

    def L_at(self, t: float) -> np.ndarray:
        if not self.L_schedule:
            raise ModelError("no observer gain schedule")
        times = [p[0] for p in self.L_schedule]
        i = int(np.searchsorted(times, t, side="right")) - 1
        return self.L_schedule[max(i, 0)][1]


def _shape_msg(name, got, want):
    return f"{name} has shape {tuple(got)}, expected {tuple(want)}"


def validate_plant(m: PlantModel) -> ValidationReport:
    """Check dimensions and the independence of the measurement rows."""
    rep = ValidationReport()
    A = m.A
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        rep.add(_shape_msg("A", A.shape, ("n", "n")))
        return rep
    n, nu = A.shape[0], m.P.shape[1]
    want = {"B": (n,), "G": (n,), "C": (n,), "P": (n, nu), "R": (n, nu),
            "F": (n, n), "Q": (nu,)}
    for name, shape in want.items():
        got = getattr(m, name).shape
        if got != shape:
            rep.add(_shape_msg(name, got, shape))
    for name in ("Ca", "Cb"):
        v = getattr(m, name)
        if v is not None and v.shape != (n,):
            rep.add(_shape_msg(name, v.shape, (n,)))
    for name in ("A", "B", "P", "F", "G", "R", "C", "Q"):
        if not np.all(np.isfinite(getattr(m, name))):
            rep.add(f"{name} has non-finite entries")
    if not np.isfinite(m.D):
        rep.add("D is not finite")
    if (m.Ca is None) != (m.Cb is None):
        rep.add("Ca and Cb must be given together")
    elif m.has_outputs and m.Ca.shape == (n,) and m.Cb.shape == (n,):
        if np.linalg.matrix_rank(np.vstack([m.Ca, m.Cb])) < 2:
            rep.add("Ca and Cb are linearly dependent")
    return rep


def validate_exosystem(e: Exosystem, tau_eig: float = TAU_EIG) -> ValidationReport:
    """Check that every eigenvalue of ``S`` is imaginary and simple.

    The tolerance is relative to ``max(1, ||S||)``.  Eigenvalues closer
    than the tolerance are clustered and the cluster size is compared
    with the geometric multiplicity ``nu - rank(S - lambda I)``.
    """
    rep = ValidationReport()
    S = e.S
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        rep.add(_shape_msg("S", S.shape, ("nu", "nu")))
        return rep
    if e.omega0.shape != (S.shape[0],):
        rep.add(_shape_msg("omega0", e.omega0.shape, (S.shape[0],)))
    if not np.all(np.isfinite(S)):
        rep.add("S has non-finite entries")
        return rep
    nu = S.shape[0]
    scale = max(1.0, np.linalg.norm(S, 2))
    tol = tau_eig * scale
    lam = np.linalg.eigvals(S)
    bad = lam[np.abs(lam.real) > tol]
    if bad.size:
        rep.add(f"eigenvalues off the imaginary axis: {np.round(bad, 12).tolist()}")
    seen = np.zeros(nu, dtype=bool)
    # cluster tolerance is looser since repeated eigenvalues split as sqrt(eps)
    ctol = max(tol, 1e-6 * scale)
    for i in range(nu):
        if seen[i]:
            continue
        close = np.abs(lam - lam[i]) <= ctol
        seen |= close
        alg = int(close.sum())
        if alg == 1:
            continue
        sv = np.linalg.svd(S - lam[i] * np.eye(nu), compute_uv=False)
        geo = int(np.sum(sv <= 1e-7 * scale))
        if geo < alg:
            rep.add(f"eigenvalue {lam[i]:.6g} is not simple "
                    f"(algebraic {alg}, geometric {geo})")
    return rep


def _is_zero(v) -> bool:
    v = np.atleast_1d(v)
    return bool(np.all(np.abs(v) <= ZERO_TOL * (1.0 + np.linalg.norm(v))))


def q_chain(m: PlantModel, S: np.ndarray, r: int) -> tuple:
    """Rows ``Q_0 = Q`` and ``Q_i = C A^(i-1) P + Q_(i-1) S``."""
    out = [m.Q.copy()]
    CAk = m.C.copy()
    for _ in range(r):
        out.append(CAk @ m.P + out[-1] @ S)
        CAk = CAk @ m.A
    return tuple(out)


def stochastic_relative_degree(m: PlantModel, S: np.ndarray | None = None) -> RelativeDegreeInfo:
    """Compute the stochastic relative degree.

    ``r = 0`` when ``D != 0``.  Otherwise ``r`` is the smallest
    ``1 <= r <= n`` such that ``C A^k B``, ``C A^k G``, ``C A^k F`` and
    ``C A^k R`` vanish for ``k <= r - 2`` and at least one of
    ``C A^(r-1) B`` and ``C A^(r-1) G`` does not.

    Parameters
    ----------
    m : PlantModel
    S : ndarray, optional
        Exosystem matrix, needed for the ``Q`` chain when ``r >= 1``.
        Defaults to zero.
    """
    nu = m.nu
    if S is None:
        S = np.zeros((nu, nu))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if m.D != 0.0:
        return RelativeDegreeInfo(0, 0.0, 0.0, (m.Q.copy(),), ())
    CAk = m.C.copy()
    rows = []
    for r in range(1, m.n + 1):
        rows.append(CAk.copy())
        b, g = float(CAk @ m.B), float(CAk @ m.G)
        if not (_is_zero(b) and _is_zero(g)):
            return RelativeDegreeInfo(r, b, g, q_chain(m, S, r), tuple(rows))
        if not (_is_zero(CAk @ m.F) and _is_zero(CAk @ m.R)):
            break
        CAk = CAk @ m.A
    raise UndefinedRelativeDegree("no r <= n satisfies the relative degree conditions")


# -- serialization ---------------------------------------------------------

def model_to_dict(m: PlantModel, e: Exosystem | None = None) -> dict:
    d = {k: np.asarray(getattr(m, k)).tolist() for k in ("A", "B", "P", "F", "G", "R", "C", "Q")}
    d["D"] = m.D
    if m.has_outputs:
        d["Ca"] = m.Ca.tolist()
        d["Cb"] = m.Cb.tolist()
    if e is not None:
        d["S"] = e.S.tolist()
        d["omega0"] = e.omega0.tolist()
    return d


def model_from_dict(d: dict) -> tuple[PlantModel, Exosystem | None]:
    """Build a plant (and exosystem when ``S`` is present) from a dict.

    Missing ``F``, ``G``, ``R`` default to zero; ``Ca``/``Cb`` are optional.
    """
    try:
        A = np.atleast_2d(_as_float(d["A"]))
        n = A.shape[0]
        P = np.atleast_2d(_as_float(d["P"]))
        if P.shape[0] != n and P.shape[1] == n:
            P = P.T
        kw = dict(A=A, B=d["B"], P=P, C=d["C"], D=d.get("D", 0.0), Q=d["Q"],
                  F=d.get("F", np.zeros_like(A)), G=d.get("G", np.zeros(n)),
                  R=d.get("R", np.zeros_like(P)), Ca=d.get("Ca"), Cb=d.get("Cb"))
    except KeyError as exc:
        raise ModelError(f"missing model key {exc}") from None
    m = PlantModel(**kw)
    e = None
    if "S" in d:
        e = Exosystem(d["S"], d.get("omega0", np.zeros(m.nu)))
    return m, e


def save_model(path, m: PlantModel, e: Exosystem | None = None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(m, e), fh, indent=1)


def load_model(path) -> tuple[PlantModel, Exosystem | None]:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# -- presets ---------------------------------------------------------------

CIRCUIT = dict(R1=1.0, R2=4.0, RL=20.0, C1=0.01, C2=0.02, L1=0.2)
CIRCUIT_K = (-0.07, 0.04, 0.06)
CIRCUIT_W0 = (60.0, 5.0, 0.0, 1.0, 0.0)
NOISE_SCALE = 0.01


def rotation_generator(freq: float) -> np.ndarray:
    """``2*pi*freq * [[0, 1], [-1, 0]]``."""
    return 2 * np.pi * freq * np.array([[0.0, 1.0], [-1.0, 0.0]])


def preset_circuit(d: float = 1.0) -> tuple[PlantModel, Exosystem, GainSet]:
    """Three-state RLC circuit tracking a DC plus two harmonics.

    Parameters
    ----------
    d : float
        Amplitude scale of the exosystem initial state, ``d > 0``.

    Returns
    -------
    PlantModel, Exosystem, GainSet
        The gain set carries ``K`` only; observer gains are left to the
        caller (see :func:`stochreg.control.default_observer_gain`).
    """
    if not d > 0:
        raise ModelError(f"amplitude scale must be positive, got {d}")
    p = CIRCUIT
    R1, R2, RL, C1, C2, L1 = p["R1"], p["R2"], p["RL"], p["C1"], p["C2"], p["L1"]
    A = np.array([[-RL / L1, 1 / L1, -1 / L1],
                  [-1 / C1, -1 / (R1 * C1), 0.0],
                  [1 / C2, 0.0, -1 / (R2 * C2)]])
    B = np.array([-RL / L1, -1 / C1, 0.0])
    PS = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
    P = np.outer([0.0, 1 / (R1 * C1), 0.0], PS)
    m = PlantModel(A=A, B=B, P=P, F=NOISE_SCALE * A, G=NOISE_SCALE * B, R=NOISE_SCALE * P,
                   C=[RL, 0.0, 0.0], D=RL, Q=-np.array([1.0, 1.0, 0.0, 0.0, 0.0]),
                   Ca=[1.0, 0.0, 0.0], Cb=[0.0, 1.0, 0.0])
    S = np.zeros((5, 5))
    S[1:3, 1:3] = rotation_generator(10.0)
    S[3:5, 3:5] = rotation_generator(50.0)
    e = Exosystem(S, d * np.array(CIRCUIT_W0))
    return m, e, GainSet(K=np.array(CIRCUIT_K))


def preset_scalar(c: float, P: float = 1.0, R: float = 1.0, Q: float = 1.0,
                  omega0: float = 1.0) -> tuple[PlantModel, Exosystem]:
    """Scalar plant ``A=0.2, B=0.5, F=0.3, G=0.2, D=0.1`` with ``C = c`` and ``S = 0``."""
    m = PlantModel(A=[[0.2]], B=[0.5], P=[[P]], F=[[0.3]], G=[0.2], R=[[R]],
                   C=[c], D=0.1, Q=[Q])
    return m, Exosystem([[0.0]], [omega0])
