"""
Frenet-Serret frames and generalized curvatures of error curves.

Three independent routes are provided:

* numerically, by Gram-Schmidt on curve derivatives followed by finite
  differencing of the frame along the samples;
* in closed form for the driven Ising pair (:func:`ising_curvatures`);
* from the anticommutation recursion (:func:`recursion_curvatures`), valid
  when the noise anticommutes with the Hamiltonian.

Sign convention: curvatures ``kappa_1 .. kappa_{d-2}`` are nonnegative and
``kappa_{d-1}`` is signed. The last frame vector completes a positively
oriented frame with respect to the basis ordering, so the sign of the last
curvature flips under an orientation-reversing change of basis.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ._numerics import differentiate
from .hamiltonians import ControlHamiltonian
from .operators import (
    OperatorBasis,
    anticommutator,
    check_hermitian,
    commutator_i,
    error_subspace,
    norm,
    pauli,
)
from .propagation import ErrorCurve, PropagatorTrajectory
from .pulses import Constant

DEGENERATE_TOL = 1e-8
MAX_EXPANSION_ORDER = 6


class DegenerateFrameError(ValueError):
    """Raised when a Frenet frame cannot be built at a requested time."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


# ---------------------------------------------------------------------------
# nested commutators (C + d/dt)^(n-1) Q


class NestedCommutator:
    """``(C + d/dt)^(n-1) Q`` with ``C X = i[H0(t), X]``, expanded symbolically.

    The expansion is stored as a map from monomials in the coefficient
    derivatives (tuples of ``(term index, derivative order)``) to constant
    coordinate vectors in the error-subspace basis. Because ``C`` does not
    commute with ``d/dt``, the product rule generates the mixed terms.
    """

    def __init__(self, n: int, terms: dict, basis: OperatorBasis, hamiltonian: ControlHamiltonian):
        self.n = n
        self.terms = terms
        self.basis = basis
        self.hamiltonian = hamiltonian

    @property
    def max_derivative(self) -> int:
        return max((m for key in self.terms for _, m in key), default=0)

    def coords(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        order = self.max_derivative
        try:
            vals = self.hamiltonian.coefficient_values(t, order)
        except NotImplementedError as exc:
            raise ValueError(f"coefficient is not differentiable to order {order}") from exc
        out = np.zeros(t.shape + (self.basis.d,))
        for key, vec in self.terms.items():
            w = np.ones_like(t)
            for i, m in key:
                w = w * vals[i, m]
            out += w[:, None] * vec
        return out

    def __call__(self, t) -> np.ndarray:
        return self.basis.reconstruct(self.coords(t))

    def __repr__(self):
        return f"NestedCommutator(n={self.n}, {len(self.terms)} monomials)"


def derivative_operators(H0: ControlHamiltonian, Q, n_max: int,
                         basis: OperatorBasis | None = None) -> list[NestedCommutator]:
    """Operators whose interaction-picture images are ``d^n G / dt^n``, ``n = 1..n_max``."""
    if not isinstance(H0, ControlHamiltonian):
        raise TypeError("H0 must be a ControlHamiltonian with differentiable coefficients")
    Q = check_hermitian(Q, "Q")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if n_max > MAX_EXPANSION_ORDER:
        raise ValueError(f"symbolic expansion is capped at n_max = {MAX_EXPANSION_ORDER}")
    if basis is None:
        basis = error_subspace(H0.operators, Q)
    if basis.projection_residual(Q) > 1e-10:
        raise ValueError("Q is not in the span of the basis")
    ad = [basis.adjoint_matrix(V) for V in H0.operators]
    is_const = [isinstance(f, Constant) for f in H0.coefficients]
    level = {(): basis.coords(Q)}
    out = [NestedCommutator(1, level, basis, H0)]
    for n in range(2, n_max + 1):
        new = defaultdict(lambda: np.zeros(basis.d))
        for key, vec in level.items():
            for pos, (i, m) in enumerate(key):
                if is_const[i]:
                    continue
                nk = tuple(sorted(key[:pos] + ((i, m + 1),) + key[pos + 1:]))
                new[nk] = new[nk] + vec
            for i, A in enumerate(ad):
                nk = tuple(sorted(key + ((i, 0),)))
                new[nk] = new[nk] + A @ vec
        level = {k: v for k, v in new.items() if np.max(np.abs(v)) > 1e-14}
        out.append(NestedCommutator(n, level, basis, H0))
    return out


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class FrenetFrames:
    """Frame vectors ``vectors[k, n]`` = e_{n+1}(t_k) in basis coordinates."""

    times: np.ndarray
    vectors: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)
    effective_dim: int
    method: str

    @property
    def d(self):
        return self.vectors.shape[-1]

    def orthonormality_error(self) -> float:
        F = self.vectors
        gram = F @ np.swapaxes(F, -1, -2)
        return float(np.max(np.abs(gram - np.eye(self.d))))

    def at(self, k: int) -> np.ndarray:
        return self.vectors[k]


def _gram_schmidt(D: np.ndarray, tol: float, signed_last: bool = True):
    """Batched Gram-Schmidt of derivative vectors ``D[k, n]``.

    Returns (frames, degenerate mask (Nt, d), residual norms (Nt, d)). The last
    vector completes a positively oriented frame when ``signed_last``.
    """
    nt, d, _ = D.shape
    E = np.zeros_like(D)
    norms = np.zeros((nt, d))
    n_gs = d - 1 if signed_last else d
    for n in range(n_gs):
        v = D[:, n].copy()
        for _ in range(2):
            for j in range(n):
                v -= np.sum(v * E[:, j], axis=-1, keepdims=True) * E[:, j]
        nrm = np.linalg.norm(v, axis=-1)
        norms[:, n] = nrm
        ok = nrm > tol
        E[ok, n] = v[ok] / nrm[ok, None]
    degenerate = norms[:, :n_gs] <= tol
    if signed_last:
        v = D[:, -1].copy()
        for _ in range(2):
            for j in range(d - 1):
                v -= np.sum(v * E[:, j], axis=-1, keepdims=True) * E[:, j]
        norms[:, -1] = np.linalg.norm(v, axis=-1)
        E[:, -1] = _complete(E[:, :-1])
        bad_det = np.linalg.det(E) < 0
        E[bad_det, -1] *= -1
        degenerate = np.concatenate([degenerate, np.zeros((nt, 1), bool)], axis=1)
    return E, degenerate, norms


def _complete(partial: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to the rows of ``partial[k]`` for every k."""
    nt, m, d = partial.shape
    out = np.zeros((nt, d))
    best = np.zeros(nt)
    for a in range(d):
        v = np.zeros((nt, d))
        v[:, a] = 1.0
        for _ in range(2):
            for j in range(m):
                v -= np.sum(v * partial[:, j], axis=-1, keepdims=True) * partial[:, j]
        nrm = np.linalg.norm(v, axis=-1)
        better = nrm > best + 1e-3
        out[better] = v[better] / nrm[better, None]
        best = np.where(better, nrm, best)
    return out


def _interpolate_invalid(times, E, invalid):
    """Replace frames at invalid samples by re-orthonormalized linear interpolation."""
    if not invalid.any() or invalid.all():
        return E
    good = np.flatnonzero(~invalid)
    E = E.copy()
    flat = E.reshape(len(times), -1)
    for col in range(flat.shape[1]):
        flat[invalid, col] = np.interp(times[invalid], times[good], flat[good, col])
    E = flat.reshape(E.shape)
    for k in np.flatnonzero(invalid):
        q, r = np.linalg.qr(E[k].T)
        q = q * np.sign(np.diag(r))
        E[k] = q.T
    return E


def _frame_from_derivatives(times, D, tol, signed_last=True):
    E, degenerate, norms = _gram_schmidt(D, tol, signed_last)
    d = D.shape[1]
    all_bad = degenerate.all(axis=0)
    if signed_last and not all_bad.any() and np.all(norms[:, -1] <= tol):
        # last derivative never leaves the span: the curve is flat in one direction
        eff = d - 1
    elif all_bad.any():
        # rank collapse: the curve lives in a lower-dimensional subspace
        eff = int(np.argmax(all_bad))
        head, degenerate, _ = _gram_schmidt(D[:, :eff], tol, signed_last=False)
        E = np.zeros_like(D)
        E[:, :eff] = head
        for j in range(eff, d):
            E[:, j] = _complete(E[:, :j])
        degenerate = np.concatenate([degenerate, np.zeros((len(times), d - eff), bool)], axis=1)
    else:
        eff = d
    invalid = degenerate.any(axis=1)
    return _interpolate_invalid(times, E, invalid), ~invalid, eff


def frames_from_curve(curve: ErrorCurve, method: str = "auto",
                      tol: float = DEGENERATE_TOL) -> FrenetFrames:
    """Frenet frames at every sample of ``curve``.

    ``method="operator"`` uses the nested-commutator derivatives with the
    stored propagators (exact up to the propagator error); ``"fd"`` uses
    fourth-order finite differences of the sampled points; ``"auto"`` picks
    the operator route when the curve carries its Hamiltonian.
    """
    H = curve.hamiltonian
    if method == "auto":
        method = ("operator" if isinstance(H, ControlHamiltonian) and curve.d <= MAX_EXPANSION_ORDER
                  else "fd")
    d = curve.d
    times = curve.times
    if method == "operator":
        if not isinstance(H, ControlHamiltonian):
            raise ValueError("operator route needs a curve with a ControlHamiltonian")
        ops = derivative_operators(H, curve.noise_dir, d, curve.basis)
        local = np.stack([op.coords(times) for op in ops], axis=1)  # (Nt, d, d)
        O = curve.basis.conjugation_matrix(curve.trajectory.unitaries)
        D = np.einsum("kab,knb->kna", O, local)
    elif method == "fd":
        D = np.stack([differentiate(curve.points, curve.grid.h, order=n, accuracy=4)
                      for n in range(1, d + 1)], axis=1)
    else:
        raise ValueError(f"unknown frame method {method!r}")
    E, valid, eff = _frame_from_derivatives(times, D, tol)
    if not valid.any():
        raise DegenerateFrameError("frame is degenerate at every sample", float(times[0]))
    return FrenetFrames(times, E, valid, eff, method)


def frame_at(H0: ControlHamiltonian, Q, basis: OperatorBasis, t: float, R=None,
             tol: float = DEGENERATE_TOL) -> np.ndarray:
    """Frenet frame at a single time from the local pulse state and ``R(t)``."""
    ops = derivative_operators(H0, Q, basis.d, basis)
    D = np.stack([op.coords([t])[0] for op in ops])
    if R is not None:
        D = D @ basis.conjugation_matrix(R).T
    E, degenerate, norms = _gram_schmidt(D[None], tol)
    if degenerate.any():
        n = int(np.argmax(degenerate[0]))
        raise DegenerateFrameError(
            f"degenerate frame at t={t:.6g}: vector {n + 1} has norm {norms[0, n]:.2e}", t)
    return E[0]


# ---------------------------------------------------------------------------
# curvatures


@dataclass(frozen=True)
class CurvatureProfile:
    times: np.ndarray
    kappas: np.ndarray = field(repr=False)   # (Nt, d-1)
    valid: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.kappas.shape[1]

    def rows(self):
        return np.column_stack([self.times, self.kappas])


def curvatures_numeric(frames: FrenetFrames, curve: ErrorCurve | None = None,
                       accuracy: int = 4) -> CurvatureProfile:
    """``kappa_n = (d e_n/dt) . e_{n+1}`` by finite differences along the samples.

    Samples whose stencil touches a degenerate frame, an unresolved frame
    jump, or a control jump of ``curve``'s Hamiltonian, are flagged invalid
    and reported as NaN.
    """
    times = frames.times
    h = times[1] - times[0]
    E = frames.vectors
    dE = differentiate(E, h, order=1, accuracy=accuracy)
    kap = np.einsum("kni,kni->kn", dE[:, :-1], E[:, 1:])
    if frames.effective_dim < frames.d:
        kap[:, frames.effective_dim - 1:] = 0.0
    reach = (1 + accuracy) // 2 + 1
    bad = ~frames.valid
    # a frame vector turning by more than 60 degrees in one step is unresolved
    # (e.g. a sign flip where kappa_1 passes through zero)
    turn = np.einsum("kni,kni->kn", E[:-1], E[1:]).min(axis=1) < 0.5
    bad = bad | np.concatenate([turn, [False]]) | np.concatenate([[False], turn])
    H = None if curve is None else curve.hamiltonian
    if isinstance(H, ControlHamiltonian):
        for bp in H.breakpoints():
            bad = bad | (np.abs(times - bp) < reach * h)
    if bad.any():
        spread = np.convolve(bad.astype(float), np.ones(2 * reach + 1), mode="same") > 0
        kap[spread] = np.nan
        valid = ~spread
    else:
        valid = np.ones(len(times), bool)
    return CurvatureProfile(times, kap, valid)


def ising_curvatures(E1, E2, omega, domega) -> np.ndarray:
    """Closed-form curvatures ``kappa_1..kappa_5`` of the driven Ising pair.

    Returns an array with trailing axis of length 5; ``kappa_5`` carries the
    sign of ``E1 * E2 * dOmega/dt``.
    """
    E1 = float(E1)
    E2 = float(E2)
    if E1 == 0 and E2 == 0:
        raise ValueError("singular parameters: E1 = E2 = 0")
    om = np.asarray(omega, dtype=float)
    dom = np.asarray(domega, dtype=float)
    s2 = E1 * E1 + E2 * E2
    p2 = E1 * E1 * E2 * E2
    k1 = 2 * np.abs(om)
    k2 = np.full_like(om, np.sqrt(2 * s2))
    k3 = np.full_like(om, np.sqrt(2) * abs(E1 * E1 - E2 * E2) / np.sqrt(s2))
    k4 = 2 * np.sqrt(om * om + 2 * p2 / s2)
    k5 = E1 * E2 * np.sqrt(2 * s2) / (om * om * s2 + 2 * p2) * dom
    return np.stack(np.broadcast_arrays(k1, k2, k3, k4, k5), axis=-1)


# ---------------------------------------------------------------------------
# recursion relation under {H0, Q} = 0


@dataclass(frozen=True)
class RecursionState:
    """Operators ``A_n`` (``ops[n-1]``, order-0 values at each time) and ``Q``."""

    ops: np.ndarray = field(repr=False)   # (n, Nt, D, D)
    Q: np.ndarray = field(repr=False)

    def pattern_error(self) -> float:
        """Largest violation of the commute/anticommute pattern of ``A_n`` with ``Q``."""
        worst = 0.0
        for n, A in enumerate(self.ops, start=1):
            if not np.all(np.isfinite(A)):
                continue
            if n % 4 in (0, 1):
                val = A @ self.Q - self.Q @ A
            else:
                val = A @ self.Q + self.Q @ A
            worst = max(worst, float(np.max(norm(val))))
        return worst

    def norm_error(self) -> float:
        vals = [np.abs(norm(A) - 1) for A in self.ops if np.all(np.isfinite(A))]
        return float(np.max(vals)) if vals else 0.0


@dataclass(frozen=True)
class RecursionResult:
    times: np.ndarray
    kappas: np.ndarray = field(repr=False)   # (Nt, n_max)
    state: RecursionState = field(repr=False)


def _cauchy(A, B, length):
    """Truncated Cauchy product of two jets (leading axis = Taylor order)."""
    return np.stack([sum(A[j] @ B[k - j] for j in range(k + 1)) for k in range(length)])


def _scale_jet(s, A, length):
    return np.stack([sum(s[j][..., None, None] * A[k - j] for j in range(k + 1))
                     for k in range(length)])


def _normsq_jet(A):
    dim = A.shape[-1]
    L = len(A)
    return np.stack([sum(np.real(np.einsum("...ij,...ij->...", A[j].conj(), A[k - j]))
                         for j in range(k + 1)) / dim for k in range(L)])


def _pow_jet(s, alpha):
    y = [s[0] ** alpha]
    for k in range(1, len(s)):
        acc = sum(((alpha + 1) * j - k) * s[j] * y[k - j] for j in range(1, k + 1))
        y.append(acc / (k * s[0]))
    return np.stack(y)


def recursion_curvatures(H0: ControlHamiltonian, Q, n_max: int, times,
                         basis: OperatorBasis | None = None,
                         tol: float = 1e-12) -> RecursionResult:
    """Curvatures from ``kappa_n A_{n+1} = i{H0, A_n}`` (odd n) or ``dA_n/dt`` (even n).

    Requires ``{H0(t), Q} = 0`` and ``Q^2 = 1``. Time derivatives are carried
    exactly as truncated Taylor jets of the pulse coefficients. When the
    recursion reaches ``kappa_{d-1}`` it is signed by the orientation of the
    frame ``{A_n Q}``, matching :func:`curvatures_numeric`.
    """
    Q = check_hermitian(Q, "Q")
    dim = Q.shape[0]
    if not np.allclose(Q @ Q, np.eye(dim), atol=1e-10):
        raise ValueError("Q must square to the identity")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    Hs = H0(times)
    anti = Hs @ Q + Q @ Hs
    scale = max(1.0, float(np.max(np.abs(Hs))))
    if np.max(np.abs(anti)) > 1e-10 * scale:
        raise ValueError(
            "{H0, Q} != 0: the recursion needs an anticommuting noise operator; "
            "transform to a frame where the noise anticommutes with H0 first")
    if basis is None:
        basis = error_subspace(H0.operators, Q)
    K = n_max // 2 + 1
    coeffs = H0.coefficient_values(times, K)        # (terms, K+1, Nt)
    fact = np.array([np.prod(np.arange(1, m + 1)) for m in range(K + 1)], dtype=float)
    Hjet = np.einsum("imt,iab->mtab", coeffs / fact[None, :, None], np.array(H0.operators))
    A = np.zeros((K + 1, len(times), dim, dim), dtype=complex)
    A[0] = np.eye(dim)
    kappas = np.zeros((len(times), n_max))
    ops = [A[0].copy()]
    for n in range(1, n_max + 1):
        if n % 2:
            L = len(A)
            rhs = 1j * (_cauchy(Hjet, A, L) + _cauchy(A, Hjet, L))
        else:
            rhs = np.stack([(m + 1) * A[m + 1] for m in range(len(A) - 1)])
        s = _normsq_jet(rhs)
        kap = np.sqrt(np.maximum(s[0], 0.0))
        kappas[:, n - 1] = kap
        if np.max(kap) <= tol:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = _pow_jet(np.where(s[0] > tol**2, s, np.nan), -0.5)
        A = _scale_jet(inv, rhs, len(rhs))
        ops.append(A[0].copy())
    ops = np.array(ops)
    d = basis.d
    if len(ops) == d and n_max >= d - 1:
        local = basis.coords(ops @ Q)                  # (d, Nt, d)
        with np.errstate(invalid="ignore"):
            sign = np.sign(np.linalg.det(np.swapaxes(local, 0, 1)))
        kappas[:, d - 2] *= np.where(sign == 0, 1.0, sign)
    return RecursionResult(times, kappas, RecursionState(ops, Q))


# ---------------------------------------------------------------------------
# block decomposition of the Ising curve

_BLOCK_PAULIS = ("X", "Y", "Z")


def block_basis() -> OperatorBasis:
    """Single-qubit error basis for a block ``Omega X + E Z`` with noise ``Z``."""
    return error_subspace([pauli("X"), pauli("Z")], pauli("Z"))


def _check_block_diagonal(M, what):
    M = np.asarray(M)
    off = max(np.max(np.abs(M[..., :2, 2:])), np.max(np.abs(M[..., 2:, :2])))
    if off > 1e-10:
        raise ValueError(f"{what} is not block diagonal (off-block {off:.2e})")


def block_decompose(curve6: ErrorCurve) -> tuple[ErrorCurve, ErrorCurve]:
    """Split the six-dimensional Ising error curve into the two 3D block curves.

    For each Pauli P in {X, Y, Z}: ``g1_P = c(IP) + c(ZP)`` and
    ``g2_P = c(IP) - c(ZP)``, so that ``c(IP) = (g1_P + g2_P)/2`` and
    ``c(ZP) = (g1_P - g2_P)/2``.
    """
    labels = curve6.basis.labels
    need = [f"I{p}" for p in _BLOCK_PAULIS] + [f"Z{p}" for p in _BLOCK_PAULIS]
    if any(lab not in labels for lab in need) or curve6.d != 6:
        raise ValueError(f"curve basis {labels} is not the Ising error basis")
    if curve6.noise_dir is not None and not np.allclose(curve6.noise_dir, pauli("IZ"), atol=1e-10):
        raise ValueError("block decomposition requires noise along Z2 (label 'IZ')")
    H = curve6.hamiltonian
    if H is not None:
        if isinstance(H, ControlHamiltonian):
            for V in H.operators:
                _check_block_diagonal(V, "Hamiltonian")
        else:
            _check_block_diagonal(H(0.0), "Hamiltonian")
    if curve6.trajectory is not None:
        _check_block_diagonal(curve6.trajectory.unitaries, "propagator")

    bb = block_basis()
    pts = curve6.points
    curves = []
    for sign, sl in ((1.0, slice(0, 2)), (-1.0, slice(2, 4))):
        g = np.zeros((len(pts), 3))
        for p in _BLOCK_PAULIS:
            g[:, bb.index(p)] = pts[:, labels.index(f"I{p}")] + sign * pts[:, labels.index(f"Z{p}")]
        traj = None
        if curve6.trajectory is not None:
            Hb = None
            if isinstance(H, ControlHamiltonian):
                Hb = ControlHamiltonian([(f, V[sl, sl]) for f, V in zip(H.coefficients, H.operators)
                                         if np.max(np.abs(V[sl, sl])) > 0])
            traj = PropagatorTrajectory(curve6.grid, curve6.trajectory.unitaries[:, sl, sl].copy(), Hb)
        curves.append(ErrorCurve(bb, g, curve6.grid, traj, pauli("Z")))
    return curves[0], curves[1]


def block_reconstruct(curve_a: ErrorCurve, curve_b: ErrorCurve, basis6: OperatorBasis) -> np.ndarray:
    """Inverse of :func:`block_decompose`: six-dimensional coordinates."""
    bb = curve_a.basis
    out = np.zeros((len(curve_a.points), basis6.d))
    for p in _BLOCK_PAULIS:
        ga = curve_a.points[:, bb.index(p)]
        gb = curve_b.points[:, curve_b.basis.index(p)]
        out[:, basis6.index(f"I{p}")] = 0.5 * (ga + gb)
        out[:, basis6.index(f"Z{p}")] = 0.5 * (ga - gb)
    return out


def closure_residual(curve: ErrorCurve) -> float:
    """Distance of the curve endpoint from the origin; zero iff first-order error cancels."""
    return float(np.linalg.norm(curve.points[-1]))
