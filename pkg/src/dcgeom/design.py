"""
Pulse design by n-fold symmetric closure.

One period of a periodic pulse traces a curve segment. Repeating the period
``n`` times closes the curve when the frame at the end of the segment is the
start frame turned by ``2 pi k / n`` and the endpoint displacement lies in the
planes of that turn. :func:`symmetric_closure_residual` measures both
conditions and :func:`design` drives it to zero with a multi-start simplex
search.

The frame map between the two ends of a period is the conjugation action of
the one-period propagator ``P`` on the error subspace. The local pulse state
is periodic, so every Frenet vector satisfies ``e_n(t_p) = O e_n(0)`` with
``O = basis.conjugation_matrix(P)``, whether or not the frame is degenerate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, partial
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import polar, schur
from scipy.optimize import least_squares, minimize

from .frenet import frame_at
from .hamiltonians import IsingModel
from .operators import OperatorBasis, pauli
from .propagation import (
    ScalingResult,
    TimeGrid,
    error_curve,
    log_spaced,
    phase_min_infidelity,
    propagate,
    scaling_exponent,
)
from .pulses import Constant, SmoothPulse, SquarePulseSequence

#: gates reachable by symmetric designs on the Ising pair, keyed by name
GATE_TARGETS = {"I": "II", "Z1": "ZI", "Z2": "IZ", "Z1Z2": "ZZ"}

_PENALTY = 1e3


# ---------------------------------------------------------------------------
# step rotation at square-pulse transitions


def step_rotation_integrand(omega, E1: float, E2: float):
    """Rate of the last-plane rotation per unit change of the amplitude."""
    A = E1 * E1 + E2 * E2
    return E1 * E2 * np.sqrt(2 * A) / (np.square(omega) * A + 2 * E1 * E1 * E2 * E2)


def step_rotation_angle(omega1, omega2, E1: float, E2: float):
    """Angle by which the last two frame vectors turn when the drive jumps.

    Closed form of the integral of :func:`step_rotation_integrand` from
    ``omega1`` to ``omega2``: ``arctan(s omega2) - arctan(s omega1)`` with
    ``s = sqrt((E1^2 + E2^2) / 2) / (E1 E2)``.
    """
    if E1 * E2 == 0:
        raise ValueError("E1 * E2 = 0: no rotation of the last frame plane is defined")
    s = math.sqrt((E1 * E1 + E2 * E2) / 2) / (E1 * E2)
    return np.arctan(s * np.asarray(omega2)) - np.arctan(s * np.asarray(omega1))


def rotate_last_plane(frame: np.ndarray, phi: float) -> np.ndarray:
    """Turn the last two rows of a frame by ``phi`` (``e_{d-1}`` towards ``e_d``)."""
    out = np.array(frame, dtype=float, copy=True)
    a, b = frame[-2], frame[-1]
    c, s = math.cos(phi), math.sin(phi)
    out[-2] = c * a + s * b
    out[-1] = -s * a + c * b
    return out


def block_exponential(omega: float, E: float, dt: float) -> np.ndarray:
    """``exp(-i dt (omega X + E Z))`` in closed form."""
    r = math.hypot(omega, E)
    if r == 0:
        return np.eye(2, dtype=complex)
    n = np.array([[E, omega], [omega, -E]]) / r
    return math.cos(r * dt) * np.eye(2) - 1j * math.sin(r * dt) * n


def square_propagators(model: IsingModel, pulse: SquarePulseSequence) -> tuple[np.ndarray, np.ndarray]:
    """Propagators at every segment edge, spliced from closed-form block exponentials.

    Returns ``(times, R)`` with ``R[j]`` the propagator at ``times[j]``; the
    first entry is the identity at ``t = 0``.
    """
    amps = np.tile(pulse.amplitudes, pulse.n_sym)
    durs = np.tile(pulse.durations, pulse.n_sym)
    R = [np.eye(4, dtype=complex)]
    for om, dt in zip(amps, durs):
        U = np.zeros((4, 4), dtype=complex)
        U[:2, :2] = block_exponential(om, model.E1, dt)
        U[2:, 2:] = block_exponential(om, model.E2, dt)
        R.append(U @ R[-1])
    return np.concatenate([[0.0], np.cumsum(durs)]), np.array(R)


@dataclass(frozen=True)
class FrameJump:
    """Frames on either side of one amplitude step.

    With positively oriented frames the last plane turns by ``sign(omega) * phi``:
    flipping the drive sign is a proper rotation of the error space, which
    leaves oriented frames unchanged while ``phi`` changes sign. A step through
    zero passes a degenerate frame (``kappa_1 = 2|omega| = 0``) and has no
    predicted turn.
    """

    time: float
    omega_before: float
    omega_after: float
    phi: float
    before: np.ndarray = field(repr=False)
    after: np.ndarray = field(repr=False)

    @property
    def continuous(self) -> bool:
        return self.omega_before * self.omega_after > 0

    @property
    def oriented_phi(self) -> float:
        return math.copysign(1.0, self.omega_before) * self.phi if self.continuous else math.nan

    @property
    def mismatch(self) -> float:
        """Max deviation of the after-frame from the before-frame turned by ``oriented_phi``."""
        if not self.continuous:
            return math.nan
        return float(np.max(np.abs(rotate_last_plane(self.before, self.oriented_phi) - self.after)))


def amplitude_frame(model: IsingModel, omega: float, R, basis: OperatorBasis | None = None):
    """Frenet frame at propagator ``R`` for a locally constant drive ``omega``."""
    basis = model.basis() if basis is None else basis
    H = model.hamiltonian(Constant(float(omega)))
    return frame_at(H, model.noise_operator(), basis, 0.0, R=R)


def square_frame_track(model: IsingModel, pulse: SquarePulseSequence,
                       basis: OperatorBasis | None = None) -> list[FrameJump]:
    """Frames just before and after every interior amplitude step of a square pulse.

    Across a step that keeps the drive sign only the last two frame vectors
    change, by the rotation :func:`step_rotation_angle` (see
    :class:`FrameJump` for the orientation). Steps with equal amplitudes are
    skipped; steps through zero are reported but have no predicted turn.
    """
    basis = model.basis() if basis is None else basis
    times, R = square_propagators(model, pulse)
    amps = np.tile(pulse.amplitudes, pulse.n_sym)
    out = []
    for j in range(1, len(amps)):
        w1, w2 = amps[j - 1], amps[j]
        if w1 == w2:
            continue
        out.append(FrameJump(
            float(times[j]), float(w1), float(w2),
            float(step_rotation_angle(w1, w2, model.E1, model.E2)),
            amplitude_frame(model, w1, R[j], basis),
            amplitude_frame(model, w2, R[j], basis),
        ))
    return out


# ---------------------------------------------------------------------------
# ansatz families


def _check_bounds(names, bounds):
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    if len(bounds) != len(names):
        raise ValueError(f"expected {len(names)} bounds ({', '.join(names)}), got {len(bounds)}")
    for name, (lo, hi) in zip(names, bounds):
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"bounds for {name} must be finite")
        if lo > hi:
            raise ValueError(f"empty bounds for {name}: [{lo}, {hi}]")
    return bounds


class _Ansatz:
    kind = ""
    names: tuple = ()
    bounds: tuple = ()

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])

    @property
    def free(self) -> np.ndarray:
        """Mask of parameters with a nonzero search interval."""
        return self.upper > self.lower

    def bounds_dict(self) -> dict:
        return {n: list(b) for n, b in zip(self.names, self.bounds)}


@dataclass(frozen=True)
class SmoothAnsatz(_Ansatz):
    """Periodic sum of Lorentzian-like peaks; see :class:`~dcgeom.pulses.SmoothPulse`."""

    n_peaks: int = 2
    bounds: tuple = None
    kind = "smooth"

    DEFAULT_BOUNDS = {"c0": (-2.0, 4.0), "c": (-4.0, 4.0), "a": (0.0, 6.0),
                      "phi": (0.0, math.pi), "t_p": (2.0, 12.0)}

    def __post_init__(self):
        if self.n_peaks not in (2, 3):
            raise ValueError("smooth ansatz supports two or three peaks")
        if self.bounds is None:
            object.__setattr__(self, "bounds", tuple(self._default(n) for n in self.names))
        object.__setattr__(self, "bounds", _check_bounds(self.names, self.bounds))
        if self.bounds[-1][0] <= 0:
            raise ValueError("period t_p must be bounded away from zero")

    def _default(self, name):
        return self.DEFAULT_BOUNDS.get(name) or self.DEFAULT_BOUNDS[name.rstrip("0123456789")]

    @classmethod
    def with_bounds(cls, n_peaks: int = 2, overrides: dict | None = None) -> "SmoothAnsatz":
        base = cls(n_peaks)
        b = dict(zip(base.names, base.bounds))
        for k, v in (overrides or {}).items():
            if k not in b:
                raise ValueError(f"unknown smooth-ansatz parameter {k!r}")
            b[k] = tuple(v)
        return cls(n_peaks, tuple(b[n] for n in base.names))

    @property
    def names(self):
        peaks = [f"{p}{j}" for j in range(1, self.n_peaks + 1) for p in ("c", "a", "phi")]
        return ("c0", *peaks, "t_p")

    def build(self, x, n_sym: int = 1) -> SmoothPulse:
        x = np.asarray(x, dtype=float)
        peaks = x[1:-1].reshape(self.n_peaks, 3)
        return SmoothPulse(x[0], peaks[:, 0], peaks[:, 1], peaks[:, 2], x[-1], n_sym)

    def params(self, pulse: SmoothPulse) -> np.ndarray:
        peaks = np.column_stack([pulse.c, pulse.a, pulse.phi]).ravel()
        return np.concatenate([[pulse.c0], peaks, [pulse.t_p]])


@dataclass(frozen=True)
class SquareAnsatz(_Ansatz):
    """Piecewise-constant drive with ``n_segments`` amplitude/duration pairs per period."""

    n_segments: int = 4
    bounds: tuple = None
    kind = "square"

    DEFAULT_BOUNDS = {"omega": (-4.0, 4.0), "dt": (0.05, 4.0)}

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("need at least one segment")
        if self.bounds is None:
            object.__setattr__(self, "bounds", tuple(
                self.DEFAULT_BOUNDS[n.rstrip("0123456789")] for n in self.names))
        object.__setattr__(self, "bounds", _check_bounds(self.names, self.bounds))
        if min(self.bounds[1::2])[0] <= 0:
            raise ValueError("segment durations must be bounded away from zero")

    @classmethod
    def with_bounds(cls, n_segments: int = 4, overrides: dict | None = None) -> "SquareAnsatz":
        base = cls(n_segments)
        b = dict(zip(base.names, base.bounds))
        for k, v in (overrides or {}).items():
            if k in ("omega", "dt"):
                for n in b:
                    if n.rstrip("0123456789") == k:
                        b[n] = tuple(v)
            elif k in b:
                b[k] = tuple(v)
            else:
                raise ValueError(f"unknown square-ansatz parameter {k!r}")
        return cls(n_segments, tuple(b[n] for n in base.names))

    @property
    def names(self):
        return tuple(f"{p}{j}" for j in range(1, self.n_segments + 1) for p in ("omega", "dt"))

    def build(self, x, n_sym: int = 1) -> SquarePulseSequence:
        x = np.asarray(x, dtype=float).reshape(self.n_segments, 2)
        return SquarePulseSequence(x[:, 0], x[:, 1], n_sym)

    def params(self, pulse: SquarePulseSequence) -> np.ndarray:
        return np.column_stack([pulse.amplitudes, pulse.durations]).ravel()


# ---------------------------------------------------------------------------
# problem definition


@dataclass(frozen=True)
class OptimizerSettings:
    """Multi-start simplex search settings.

    ``max_iter`` caps simplex function evaluations per start and restart;
    ``polish_evals`` caps the trust-region polish of each start.
    """

    tolerance: float = 1e-6
    max_iter: int = 600
    n_starts: int = 32
    seed: int = 0
    restarts: int = 1
    polish: bool = True
    polish_evals: int = 200
    gate_tolerance: float = 1e-6

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.n_starts < 1 or self.max_iter < 1:
            raise ValueError("n_starts and max_iter must be >= 1")
        if self.restarts < 0 or self.polish_evals < 0:
            raise ValueError("restarts and polish_evals must be >= 0")


@dataclass(frozen=True)
class DesignProblem:
    """Symmetric closure problem for the driven Ising pair.

    ``target_gate`` (a key of :data:`GATE_TARGETS`, or None) adds the
    phase-minimized distance between ``P**n_sym`` and the target to the search
    objective; the closure residual itself never includes it.
    """

    model: IsingModel
    ansatz: SmoothAnsatz | SquareAnsatz = field(default_factory=SmoothAnsatz)
    n_sym: int = 3
    k: int = 1
    target_gate: str | None = "Z1"
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    max_product: float = 0.02       # h * spectral radius on the verification grid
    coarse_product: float = 0.1     # same, for the simplex stage
    epsilons: tuple = tuple(log_spaced(1e-4, 1e-1, 12))

    def __post_init__(self):
        if int(self.n_sym) != self.n_sym or self.n_sym < 1:
            raise ValueError("n_sym must be a positive integer")
        if int(self.k) != self.k or math.gcd(int(self.k), int(self.n_sym)) != 1:
            raise ValueError(f"k = {self.k} must be an integer coprime to n_sym = {self.n_sym}")
        if self.target_gate is not None and self.target_gate not in GATE_TARGETS:
            raise ValueError(f"target_gate must be one of {sorted(GATE_TARGETS)}")
        if not (0 < self.max_product and 0 < self.coarse_product):
            raise ValueError("grid products must be positive")
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))

    @property
    def target_angle(self) -> float:
        """``2 pi k / n`` folded into ``[0, pi]``."""
        theta = math.fmod(2 * math.pi * self.k / self.n_sym, 2 * math.pi) % (2 * math.pi)
        return min(theta, 2 * math.pi - theta)

    @cached_property
    def basis(self) -> OperatorBasis:
        return self.model.basis()

    @cached_property
    def target_matrix(self):
        return None if self.target_gate is None else pauli(GATE_TARGETS[self.target_gate])


def soundness_constant(target_angle: float) -> float:
    """``C`` with ``|G(T)| <= C * T * residual`` for an n-fold repeated segment.

    Rotating planes have angle above half the target, so the geometric sum of
    ``n`` turned copies is at most ``n |delta| / (2 sin(target/4))`` times the
    in-plane displacement, with ``delta`` the angle mismatch. Non-rotating
    directions add at most ``n`` times their displacement. Cauchy-Schwarz on
    the two contributions gives the factor ``sqrt(2)``.
    """
    if target_angle <= 0:
        return math.sqrt(2)
    return math.sqrt(2) * max(1.0, 1.0 / (2 * math.sin(target_angle / 4)))


# ---------------------------------------------------------------------------
# closure residual


def _rotation_blocks(O: np.ndarray):
    """Real Schur blocks of an orthogonal map as ``(angle, columns)`` pairs."""
    T, Z = schur(O, output="real")
    d = len(O)
    blocks = []
    i = 0
    while i < d:
        if i + 1 < d and T[i + 1, i] != 0.0:
            c = 0.5 * (T[i, i] + T[i + 1, i + 1])
            s = math.sqrt(abs(T[i, i + 1] * T[i + 1, i]))
            blocks.append((math.atan2(s, c), Z[:, i:i + 2]))
            i += 2
        else:
            blocks.append((0.0 if T[i, i] > 0 else math.pi, Z[:, i:i + 1]))
            i += 1
    return blocks


def closure_terms(O: np.ndarray, g: np.ndarray, t_p: float, target_angle: float):
    """Frame and displacement terms of the symmetric closure residual.

    Every rotation plane of ``O`` is matched either to the identity or to the
    target turn, whichever is nearer, and the mismatch angles are combined as
    a geodesic distance (radians). Planes turning by more than half the target
    are the rotation planes; the displacement term is the part of ``g`` outside
    them, divided by the segment duration. With no rotation plane it is
    ``|g| / t_p``.

    Returns ``(frame_term, displacement_term, plane_angles, rotating_dim)``.
    """
    blocks = _rotation_blocks(O)
    frame_sq = 0.0
    rot = []
    angles = []
    for angle, cols in blocks:
        w = cols.shape[1] / 2          # a lone -1 direction is half a plane
        frame_sq += w * min(angle, abs(angle - target_angle)) ** 2
        angles.append(angle)
        if target_angle > 0 and angle > target_angle / 2:
            rot.append(cols)
    g = np.asarray(g, dtype=float)
    if rot:
        Z = np.hstack(rot)
        perp = g - Z @ (Z.T @ g)
        rdim = Z.shape[1]
    else:
        perp, rdim = g, 0
    return math.sqrt(frame_sq), float(np.linalg.norm(perp)) / t_p, np.array(angles), rdim


@dataclass(frozen=True)
class ClosureDiagnostics:
    """Symmetric closure residual of one period, with its ingredients."""

    residual: float
    frame_term: float
    displacement_term: float
    plane_angles: np.ndarray
    rotating_dim: int
    target_angle: float
    t_p: float
    gate_distance: float | None
    period_map: np.ndarray = field(repr=False)
    displacement: np.ndarray = field(repr=False)
    period_propagator: np.ndarray = field(repr=False)

    @property
    def objective(self) -> float:
        """Residual with the gate distance folded in (what the search minimizes)."""
        gate = self.gate_distance or 0.0
        return math.hypot(self.residual, gate)

    def repeated_endpoint(self, n: int) -> np.ndarray:
        """Endpoint of ``n`` repetitions: ``sum_j O^j g``."""
        out = np.zeros_like(self.displacement)
        v = self.displacement.copy()
        for _ in range(n):
            out += v
            v = self.period_map @ v
        return out


def _period_pulse(params, problem: DesignProblem):
    if hasattr(params, "one_period"):
        return params.one_period()
    return problem.ansatz.build(params, 1)


def period_map(problem: DesignProblem, pulse, max_product: float):
    """One-period propagator ``P``, frame map ``O`` and displacement ``g``."""
    H = problem.model.hamiltonian(pulse)
    grid = TimeGrid.resolving(H, pulse.duration, max_product)
    traj = propagate(H, grid)
    curve = error_curve(traj, problem.model.noise_operator(), problem.basis)
    P = traj.final
    O = polar(problem.basis.conjugation_matrix(P))[0]
    return P, O, curve.endpoint


def symmetric_closure_residual(params, problem: DesignProblem,
                               max_product: float | None = None) -> ClosureDiagnostics:
    """Residual of n-fold closure for one period of the pulse.

    ``params`` is a parameter vector of ``problem.ansatz`` or a periodic pulse
    (anything with ``one_period()``). Zero iff repeating the period
    ``problem.n_sym`` times closes the curve.
    """
    pulse = _period_pulse(params, problem)
    max_product = problem.max_product if max_product is None else max_product
    P, O, g = period_map(problem, pulse, max_product)
    t_p = pulse.duration
    frame, disp, angles, rdim = closure_terms(O, g, t_p, problem.target_angle)
    gate = None
    if problem.target_matrix is not None:
        gate = float(phase_min_infidelity(np.linalg.matrix_power(P, problem.n_sym),
                                          problem.target_matrix))
    return ClosureDiagnostics(math.hypot(frame, disp), frame, disp, angles, rdim,
                              problem.target_angle, t_p, gate, O, g, P)


def _closure_vector(problem: DesignProblem, pulse, max_product: float) -> np.ndarray:
    """Smooth residual vector that vanishes exactly on closed designs.

    Stacks the repeated endpoint over the total duration, ``O^n - 1``, and
    the phase-aligned gate mismatch when a target is set.
    """
    n = problem.n_sym
    P, O, g = period_map(problem, pulse, max_product)
    Gn = np.zeros_like(g)
    v = g
    On = np.eye(len(g))
    for _ in range(n):
        Gn = Gn + v
        v = O @ v
        On = O @ On
    parts = [Gn / (n * pulse.duration), (On - np.eye(len(g))).ravel() / len(g)]
    if problem.target_matrix is not None:
        M = problem.target_matrix.conj().T @ np.linalg.matrix_power(P, n)
        tr = np.trace(M)
        M = M * (np.conj(tr) / abs(tr)) - np.eye(len(M))
        parts += [M.real.ravel() / 2, M.imag.ravel() / 2]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# gate classification


@dataclass(frozen=True)
class GateClassification:
    """Nearest target gate under the phase-minimized distance."""

    label: str
    distance: float
    phase: float                 # R ~ exp(i phase) * target
    distances: dict
    conclusive: bool

    def to_dict(self) -> dict:
        return {"label": self.label, "distance": self.distance, "phase": self.phase,
                "conclusive": self.conclusive, "distances": dict(self.distances)}


def extract_gate(R_final, targets=None, tol: float = 1e-6) -> GateClassification:
    """Classify a propagator against target gates up to global phase.

    ``targets`` maps names to matrices, or lists names from
    :data:`GATE_TARGETS` or Pauli labels; the default is every entry of
    :data:`GATE_TARGETS`.
    """
    R = np.asarray(R_final, dtype=complex)
    if targets is None:
        targets = list(GATE_TARGETS)
    if not isinstance(targets, dict):
        targets = {t: pauli(GATE_TARGETS.get(t, t)) for t in targets}
    dist = {name: float(phase_min_infidelity(R, M)) for name, M in targets.items()}
    best = min(dist, key=dist.get)
    M = np.asarray(targets[best])
    phase = float(np.angle(np.trace(M.conj().T @ R)))
    return GateClassification(best, dist[best], phase, dist, dist[best] < tol)


# ---------------------------------------------------------------------------
# optimization


class DesignError(RuntimeError):
    pass


class ConvergenceError(DesignError):
    """No start reached the tolerance; ``best`` holds the best-effort outcome."""

    def __init__(self, message, best: "StartOutcome", starts: list):
        super().__init__(message)
        self.best = best
        self.starts = starts


class InconclusiveGateError(DesignError):
    """Closed design whose gate matches no target; ``result`` is still complete."""

    def __init__(self, message, result: "DesignResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class StartOutcome:
    index: int
    x0: np.ndarray = field(repr=False)
    params: np.ndarray = field(repr=False)
    residual: float
    objective: float
    nfev: int
    accepted: bool
    simplex_objective: float


def _full_params(problem: DesignProblem, free_x):
    x = problem.ansatz.lower.copy()
    x[problem.ansatz.free] = free_x
    return x


def _objective(free_x, problem: DesignProblem, max_product: float) -> float:
    x = _full_params(problem, np.clip(free_x, problem.ansatz.lower[problem.ansatz.free],
                                      problem.ansatz.upper[problem.ansatz.free]))
    try:
        return symmetric_closure_residual(x, problem, max_product).objective
    except (ValueError, np.linalg.LinAlgError):
        return _PENALTY


def _polish_vector(free_x, problem: DesignProblem, max_product: float) -> np.ndarray:
    pulse = problem.ansatz.build(_full_params(problem, free_x), 1)
    return _closure_vector(problem, pulse, max_product)


def _accepted(diag: ClosureDiagnostics, opt: OptimizerSettings) -> bool:
    ok = diag.residual < opt.tolerance
    if diag.gate_distance is not None:
        ok = ok and diag.gate_distance < opt.gate_tolerance
    return bool(ok)


def run_start(problem: DesignProblem, index: int, x0) -> StartOutcome:
    """Simplex search from ``x0`` with restarts, then a least-squares polish.

    The simplex stage minimizes the residual on a coarse grid; the polish
    works on the smooth closure vector on the verification grid and only
    replaces the simplex point when it lowers the objective there.
    """
    opt = problem.optimizer
    free = problem.ansatz.free
    lo, hi = problem.ansatz.lower[free], problem.ansatz.upper[free]
    x = np.asarray(x0, dtype=float)[free]
    nfev = 0
    fun = _PENALTY
    if free.any():
        for _ in range(1 + opt.restarts):
            res = minimize(_objective, x, args=(problem, problem.coarse_product),
                           method="Nelder-Mead", bounds=list(zip(lo, hi)),
                           options={"maxfev": opt.max_iter, "xatol": 1e-10,
                                    "fatol": 1e-3 * opt.tolerance, "adaptive": True})
            x, fun = np.clip(res.x, lo, hi), float(res.fun)
            nfev += res.nfev
    simplex_fun = fun
    best = symmetric_closure_residual(_full_params(problem, x), problem)
    if opt.polish and free.any() and opt.polish_evals > 0 and not _accepted(best, opt):
        try:
            ls = least_squares(_polish_vector, x, args=(problem, problem.max_product),
                               bounds=(lo, hi), method="trf", x_scale="jac",
                               xtol=1e-15, ftol=1e-15, gtol=1e-15,
                               max_nfev=opt.polish_evals)
            nfev += ls.nfev
            cand = symmetric_closure_residual(_full_params(problem, ls.x), problem)
            if cand.objective < best.objective:
                x, best = ls.x, cand
        except (ValueError, np.linalg.LinAlgError):
            pass
    return StartOutcome(index, np.asarray(x0, dtype=float), _full_params(problem, x),
                        best.residual, best.objective, nfev, _accepted(best, opt), simplex_fun)


def initial_points(problem: DesignProblem) -> np.ndarray:
    """Uniform draws within the bounds from the problem seed."""
    rng = np.random.default_rng(problem.optimizer.seed)
    lo, hi = problem.ansatz.lower, problem.ansatz.upper
    return lo + (hi - lo) * rng.random((problem.optimizer.n_starts, len(lo)))


@dataclass
class DesignResult:
    """Closed design with its gate and noise verification."""

    problem: DesignProblem
    params: np.ndarray
    pulse: object
    closure: ClosureDiagnostics
    full_closure: float           # |G(T)| of the propagated full pulse
    gate: np.ndarray
    classification: GateClassification
    verification: ScalingResult | None
    start: StartOutcome
    starts: list = field(repr=False, default_factory=list)

    @property
    def closure_residual(self) -> float:
        return self.closure.residual

    @property
    def duration(self) -> float:
        return self.pulse.duration

    def recompute_residual(self, max_product: float | None = None) -> float:
        return symmetric_closure_residual(self.params, self.problem, max_product).residual

    def parameters(self) -> dict:
        return dict(zip(self.problem.ansatz.names, map(float, self.params)))

    def headline(self) -> dict:
        return {
            "closure_residual": self.closure.residual,
            "full_closure": self.full_closure,
            "full_closure_over_T": float(self.full_closure / self.duration),
            "gate": self.classification.label,
            "gate_distance": self.classification.distance,
            "gate_phase": self.classification.phase,
            "scaling_slope": None if self.verification is None else self.verification.slope,
            "start_index": self.start.index,
        }


def _choose(outcomes: Sequence[StartOutcome]) -> StartOutcome:
    accepted = [o for o in outcomes if o.accepted]
    if accepted:
        return min(accepted, key=lambda o: o.index)
    return min(outcomes, key=lambda o: (o.objective, o.index))


def verify_design(problem: DesignProblem, params, start: StartOutcome | None = None,
                  starts=(), map_fn: Callable = map, sweep: bool = True) -> DesignResult:
    """Propagate the full repeated pulse, classify its gate and run the noise sweep."""
    params = np.asarray(params, dtype=float)
    closure = symmetric_closure_residual(params, problem)
    pulse = problem.ansatz.build(params, problem.n_sym)
    H = problem.model.hamiltonian(pulse)
    grid = TimeGrid.resolving(H, pulse.duration, problem.max_product)
    traj = propagate(H, grid)
    curve = error_curve(traj, problem.model.noise_operator(), problem.basis)
    R = traj.final
    cls = extract_gate(R, tol=problem.optimizer.gate_tolerance)
    scaling = None
    if sweep and problem.epsilons:
        scaling = scaling_exponent(H, problem.model.noise_operator(), problem.epsilons,
                                   grid, map_fn)
    if start is None:
        start = StartOutcome(-1, params, params, closure.residual, closure.objective, 0,
                             _accepted(closure, problem.optimizer), closure.objective)
    return DesignResult(problem, params, pulse, closure, float(np.linalg.norm(curve.endpoint)),
                        R, cls, scaling, start, list(starts))


def design(problem: DesignProblem, map_fn: Callable = map, batch_size: int = 1,
           sweep: bool = True) -> DesignResult:
    """Multi-start search for a pulse whose n-fold repetition closes the error curve.

    Starts run in index order in batches of ``batch_size`` through ``map_fn``
    (an executor's ``map`` parallelizes a batch). The search stops after the
    first batch with an accepted start, and the lowest accepted index wins, so
    the result does not depend on the batch size.

    Raises
    ------
    ConvergenceError
        No start reached the tolerance.
    InconclusiveGateError
        The closed design's gate is not near any target.
    """
    X0 = initial_points(problem)
    job = partial(run_start, problem)
    outcomes: list[StartOutcome] = []
    for lo in range(0, len(X0), max(1, batch_size)):
        idx = list(range(lo, min(lo + max(1, batch_size), len(X0))))
        outcomes += list(map_fn(job, idx, [X0[i] for i in idx]))
        if any(o.accepted for o in outcomes):
            break
    best = _choose(outcomes)
    if not best.accepted:
        raise ConvergenceError(
            f"no start reached tolerance {problem.optimizer.tolerance:g}; best residual "
            f"{best.residual:.3e} (objective {best.objective:.3e}) from start {best.index}",
            best, outcomes)
    result = verify_design(problem, best.params, best, outcomes, map_fn, sweep)
    if not result.classification.conclusive:
        raise InconclusiveGateError(
            f"gate inconclusive: nearest {result.classification.label} at distance "
            f"{result.classification.distance:.3e}", result)
    return result
