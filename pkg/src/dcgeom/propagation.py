"""
Time-ordered propagation, error curves and infidelity sweeps.

Smooth Hamiltonians are integrated with the fourth-order Magnus scheme
(two Gauss-Legendre nodes per step). Piecewise-constant Hamiltonians are
exponentiated exactly on every constant piece, so jumps in the controls
cost no accuracy.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from ._numerics import differentiate
from .hamiltonians import ControlHamiltonian
from .operators import OperatorBasis, check_hermitian, error_subspace, norm

log = logging.getLogger(__name__)

UNITARY_TOL = 1e-8
_GAUSS = (0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6)


@dataclass(frozen=True)
class TimeGrid:
    """``steps`` uniform intervals on ``[0, t_end]``."""

    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ValueError("steps must be an integer >= 2")

    @property
    def h(self) -> float:
        return self.t_end / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.steps + 1)

    @classmethod
    def resolving(cls, H, t_end: float, max_product: float = 0.02,
                  min_steps: int = 16) -> "TimeGrid":
        """Grid fine enough that ``h * spectral_radius(H) <= max_product``."""
        probe = np.linspace(0.0, t_end, 2001)
        rate = max(_spectral_radius(H, probe), 1e-12)
        steps = max(min_steps, int(np.ceil(t_end * rate / max_product)))
        return cls(t_end, steps)


def _sample(H, t) -> np.ndarray:
    if isinstance(H, ControlHamiltonian):
        return H(t)
    t = np.asarray(t, dtype=float)
    mats = [np.asarray(H(float(ti)), dtype=complex) for ti in t.ravel()]
    return np.array(mats).reshape(t.shape + mats[0].shape)


def _spectral_radius(H, t) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(_sample(H, t)))))


def expm_hermitian(M) -> np.ndarray:
    """``exp(-i M)`` for (batched) Hermitian ``M``."""
    w, V = np.linalg.eigh(M)
    return (V * np.exp(-1j * w)[..., None, :]) @ np.swapaxes(V, -1, -2).conj()


def cumulative_products(steps) -> np.ndarray:
    """``out[k] = steps[k-1] @ ... @ steps[0]`` with ``out[0] = 1``.

    Evaluated as a parallel prefix scan (log2 N batched matmul rounds).
    """
    steps = np.asarray(steps)
    n, dim = steps.shape[0], steps.shape[-1]
    P = steps.copy()
    shift = 1
    while shift < n:
        P[shift:] = P[shift:] @ P[:-shift]
        shift *= 2
    out = np.empty((n + 1, dim, dim), dtype=complex)
    out[0] = np.eye(dim)
    out[1:] = P
    return out


@dataclass(frozen=True)
class PropagatorTrajectory:
    grid: TimeGrid
    unitaries: np.ndarray = field(repr=False)
    hamiltonian: object = field(default=None, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.unitaries[-1]

    @property
    def times(self):
        return self.grid.times

    def unitarity_error(self) -> float:
        U = self.unitaries
        eye = np.eye(U.shape[-1])
        return float(np.max(np.abs(np.swapaxes(U, -1, -2).conj() @ U - eye)))


@dataclass(frozen=True)
class _Pieces:
    times: np.ndarray        # merged time points
    hams: np.ndarray         # constant Hamiltonian on each piece
    unitaries: np.ndarray    # propagator at merged points
    grid_index: np.ndarray   # positions of grid times inside ``times``


def _piecewise_pieces(H: ControlHamiltonian, grid: TimeGrid) -> _Pieces:
    bps = H.breakpoints()
    tol = 1e-12 * max(1.0, grid.t_end)
    bps = bps[(bps > tol) & (bps < grid.t_end - tol)]
    times = np.union1d(grid.times, bps)
    # drop breakpoints that coincide with grid points up to rounding
    keep = np.concatenate([[True], np.diff(times) > tol])
    times = times[keep]
    mids = 0.5 * (times[1:] + times[:-1])
    hams = H(mids)
    check_hermitian(hams, "H(t)", tol=1e-10 * max(1.0, np.max(np.abs(hams))))
    steps = expm_hermitian(hams * np.diff(times)[:, None, None])
    unitaries = cumulative_products(steps)
    idx = np.searchsorted(times, grid.times - tol)
    return _Pieces(times, hams, unitaries, idx)


def _magnus_steps(H, grid: TimeGrid) -> np.ndarray:
    h = grid.h
    t0 = grid.times[:-1]
    H1 = _sample(H, t0 + _GAUSS[0] * h)
    H2 = _sample(H, t0 + _GAUSS[1] * h)
    scale = max(1.0, float(np.max(np.abs(H1))))
    check_hermitian(H1, "H(t)", tol=1e-10 * scale)
    check_hermitian(H2, "H(t)", tol=1e-10 * scale)
    comm = H2 @ H1 - H1 @ H2
    M = 0.5 * h * (H1 + H2) - 1j * (np.sqrt(3) / 12) * h * h * comm
    return expm_hermitian(M)


def propagate(H, grid: TimeGrid) -> PropagatorTrajectory:
    """Noiseless propagator ``R(t_k)`` on every grid time.

    ``H`` is a :class:`ControlHamiltonian` or any callable ``t -> matrix``.
    Global error is fourth order in the step for smooth ``H``; piecewise
    constant Hamiltonians are propagated exactly.
    """
    if isinstance(H, ControlHamiltonian) and H.piecewise_constant:
        pieces = _piecewise_pieces(H, grid)
        U = pieces.unitaries[pieces.grid_index]
    else:
        U = cumulative_products(_magnus_steps(H, grid))
    return PropagatorTrajectory(grid, U, H)


@dataclass(frozen=True)
class NoiseSpec:
    """Quasi-static perturbation ``strength * operator`` with a unit-norm operator."""

    operator: np.ndarray
    strength: float = 0.0

    def __post_init__(self):
        Q = check_hermitian(self.operator, "noise operator")
        if abs(norm(Q) - 1) > 1e-10:
            raise ValueError(f"noise operator must have unit norm, got {norm(Q):.6g}")
        if self.strength < 0:
            raise ValueError("noise strength must be nonnegative")
        object.__setattr__(self, "operator", Q)


def add_static(H, op):
    if isinstance(H, ControlHamiltonian):
        return H.with_term(1.0, op)
    return lambda t: H(t) + op


def noisy_propagate(H0, noise: NoiseSpec, grid: TimeGrid) -> PropagatorTrajectory:
    """Propagate ``H0(t) + strength * operator`` (noise constant during the pulse)."""
    if noise.strength == 0:
        return propagate(H0, grid)
    return propagate(add_static(H0, noise.strength * noise.operator), grid)


@dataclass(frozen=True)
class ErrorCurve:
    """Samples of the accumulated first-order error ``G(t_k)`` in an operator basis."""

    basis: OperatorBasis
    points: np.ndarray = field(repr=False)
    grid: TimeGrid
    trajectory: PropagatorTrajectory | None = field(default=None, repr=False)
    noise_dir: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def times(self):
        return self.grid.times

    @property
    def hamiltonian(self):
        return None if self.trajectory is None else self.trajectory.hamiltonian

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    def velocity(self) -> np.ndarray:
        """dG/dt estimated from the samples (fourth-order finite differences)."""
        return differentiate(self.points, self.grid.h, order=1, accuracy=4)

    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.velocity(), axis=-1)

    def tangents(self) -> np.ndarray:
        """Exact tangents ``coords(R^dag Q R)``; needs the stored trajectory."""
        if self.trajectory is None:
            raise ValueError("curve has no stored trajectory")
        U = self.trajectory.unitaries
        return self.basis.coords(np.swapaxes(U, -1, -2).conj() @ self.noise_dir @ U)


def _check_unit_noise(noise_dir):
    Q = check_hermitian(noise_dir, "noise direction")
    if abs(norm(Q) - 1) > 1e-8:
        raise ValueError(f"noise direction must have unit norm, got {norm(Q):.6g}")
    return Q


def _quad4_increments(f: np.ndarray, h: float) -> np.ndarray:
    """Per-interval integrals of samples with a fourth-order (cubic) rule."""
    n = f.shape[0] - 1
    if n == 2:
        return h / 12 * np.stack([5 * f[0] + 8 * f[1] - f[2], -f[0] + 8 * f[1] + 5 * f[2]])
    inc = np.empty((n,) + f.shape[1:])
    inc[1:-1] = h / 24 * (-f[:-3] + 13 * f[1:-2] + 13 * f[2:-1] - f[3:])
    inc[0] = h / 24 * (9 * f[0] + 19 * f[1] - 5 * f[2] + f[3])
    inc[-1] = h / 24 * (9 * f[-1] + 19 * f[-2] - 5 * f[-3] + f[-4])
    return inc


def _phi1(z):
    """(exp(z) - 1) / z, entire."""
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1 + z / 2, np.expm1(zs) / zs)


def error_curve(traj: PropagatorTrajectory, noise_dir, basis: OperatorBasis | None = None,
                span_tol: float = 1e-8) -> ErrorCurve:
    """Accumulated error ``G(t) = int_0^t R^dag Q R`` in basis coordinates.

    Raises ``ValueError`` if the interaction-picture noise leaves the span of
    ``basis`` (a sign that the error subspace is wrong).
    """
    Q = _check_unit_noise(noise_dir)
    H = traj.hamiltonian
    if basis is None:
        if not isinstance(H, ControlHamiltonian):
            raise ValueError("basis is required when the Hamiltonian is a plain callable")
        basis = error_subspace(H.operators, Q)
    U = traj.unitaries
    Ud = np.swapaxes(U, -1, -2).conj()
    interaction = Ud @ Q @ U
    resid = basis.projection_residual(interaction)
    if np.max(resid) > span_tol:
        raise ValueError(
            f"basis does not span the interaction-picture noise (residual {np.max(resid):.3e}); "
            "the error subspace is probably wrong"
        )
    if isinstance(H, ControlHamiltonian) and H.piecewise_constant:
        pieces = _piecewise_pieces(H, traj.grid)
        inc = _exact_piece_integrals(pieces, Q)
        cum = np.concatenate([np.zeros((1, basis.d)), np.cumsum(basis.coords(inc), axis=0)])
        points = cum[pieces.grid_index]
    else:
        f = basis.coords(interaction)
        inc = _quad4_increments(f, traj.grid.h)
        points = np.concatenate([np.zeros((1, basis.d)), np.cumsum(inc, axis=0)])
    return ErrorCurve(basis, points, traj.grid, traj, Q)


def _exact_piece_integrals(pieces: _Pieces, Q) -> np.ndarray:
    tau = np.diff(pieces.times)
    w, V = np.linalg.eigh(pieces.hams)
    Ra = pieces.unitaries[:-1]
    Vd = np.swapaxes(V, -1, -2).conj()
    # R(t_a + s) = exp(-iHs) R_a, so the integrand is R_a^dag exp(iHs) Q exp(-iHs) R_a
    Qh = Vd @ Q @ V
    dw = w[:, :, None] - w[:, None, :]
    integ = Qh * tau[:, None, None] * _phi1(1j * dw * tau[:, None, None])
    inner = V @ integ @ Vd
    return np.swapaxes(Ra, -1, -2).conj() @ inner @ Ra


def is_unitary(U, tol: float = UNITARY_TOL) -> bool:
    U = np.asarray(U)
    return np.allclose(np.swapaxes(U, -1, -2).conj() @ U, np.eye(U.shape[-1]), atol=tol)


def _check_unitaries(U, R):
    U = np.asarray(U, dtype=complex)
    R = np.asarray(R, dtype=complex)
    if U.shape[-2:] != R.shape[-2:]:
        raise ValueError(f"dimension mismatch: {U.shape} vs {R.shape}")
    for name, M in (("U", U), ("R", R)):
        if not is_unitary(M):
            raise ValueError(f"{name} is not unitary within {UNITARY_TOL}")
    return U, R


def infidelity(U, R) -> float:
    """``|U - R|`` in the normalized trace norm (global-phase sensitive)."""
    U, R = _check_unitaries(U, R)
    return norm(U - R)


def phase_min_infidelity(U, R) -> float:
    """``min_phi |U - exp(i phi) R|``."""
    U, R = _check_unitaries(U, R)
    overlap = np.einsum("...ij,...ij->...", R.conj(), U)
    # align phases and difference directly; 2 - 2|overlap| loses half the digits
    mag = np.abs(overlap)
    phase = np.where(mag > 0, overlap / np.where(mag > 0, mag, 1.0), 1.0)
    diff = U - phase[..., None, None] * R
    dim = U.shape[-1]
    return np.sqrt(np.einsum("...ij,...ij->...", diff.conj(), diff).real / dim)


@dataclass(frozen=True)
class ScalingResult:
    """Log-log fit of infidelity against noise strength."""

    slope: float
    intercept: float
    epsilons: np.ndarray
    infidelities: np.ndarray
    phase_min_infidelities: np.ndarray
    used: np.ndarray  # mask of points kept in the fit

    def rows(self):
        return list(zip(self.epsilons, self.infidelities, self.phase_min_infidelities))


UNDERFLOW = 1e-14


class DegenerateFitError(ValueError):
    """Too few usable sweep points for a power-law fit."""


def _sweep_point(H0, Q, grid, R, eps):
    U = noisy_propagate(H0, NoiseSpec(Q, float(eps)), grid).final
    return infidelity(U, R), phase_min_infidelity(U, R)


def infidelity_sweep(H0, noise_dir, epsilons, grid: TimeGrid, map_fn: Callable = map):
    """Raw and phase-minimized infidelity of the noisy against the noiseless propagator.

    ``map_fn`` may be an executor's ``map``; every evaluation is independent.
    """
    Q = _check_unit_noise(noise_dir)
    R = propagate(H0, grid).final
    res = list(map_fn(partial(_sweep_point, H0, Q, grid, R), list(epsilons)))
    return np.array([r[0] for r in res]), np.array([r[1] for r in res])


def fit_slope(epsilons, values):
    """Least-squares slope of ``log(values)`` against ``log(epsilons)``.

    Points below ``UNDERFLOW`` are dropped with a warning.
    """
    eps = np.asarray(epsilons, dtype=float)
    vals = np.asarray(values, dtype=float)
    used = vals > UNDERFLOW
    if not used.all():
        warnings.warn(f"dropping {np.sum(~used)} sweep point(s) below {UNDERFLOW:g} "
                      "(grid or floating-point precision limit)")
    if used.sum() < 2:
        raise DegenerateFitError("degenerate fit: fewer than two usable infidelity values")
    slope, intercept = np.polyfit(np.log(eps[used]), np.log(vals[used]), 1)
    return float(slope), float(intercept), used


def scaling_exponent(H0, noise_dir, epsilons: Sequence[float], grid: TimeGrid,
                     map_fn: Callable = map, min_decades: float = 2.0) -> ScalingResult:
    """Fit the power law ``infidelity ~ eps**slope`` over a noise sweep.

    Slope 2 means first-order error is cancelled; slope 1 means it is not.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or len(eps) < 2:
        raise DegenerateFitError("degenerate fit: need at least two noise strengths")
    if np.any(eps <= 0):
        raise ValueError("noise strengths must be positive")
    if np.log10(eps.max() / eps.min()) < min_decades - 1e-9:
        raise ValueError(f"noise strengths must span at least {min_decades:g} decades")
    raw, pm = infidelity_sweep(H0, noise_dir, eps, grid, map_fn)
    slope, intercept, used = fit_slope(eps, raw)
    return ScalingResult(slope, intercept, eps, raw, pm, used)


def log_spaced(lo: float = 1e-4, hi: float = 1e-1, n: int = 12) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)
