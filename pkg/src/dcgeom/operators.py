"""
Dense operator algebra on n-qubit Hilbert spaces.

Operators are plain complex ``numpy`` arrays. Pauli strings are written as
compact labels such as ``"IZ"`` or ``"ZX"``; the leftmost character acts on
qubit 1 (the most significant tensor factor).
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
DROP_TOL = 1e-10

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@functools.lru_cache(maxsize=None)
def _pauli_matrix(label: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, _SINGLE[ch])
    out.setflags(write=False)
    return out


@dataclass(frozen=True, order=True)
class PauliString:
    """Tensor product of single-qubit Paulis, e.g. ``PauliString("ZX")``."""

    label: str

    def __post_init__(self):
        if not self.label or set(self.label) - set("IXYZ"):
            raise ValueError(f"invalid Pauli label {self.label!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.label)

    @property
    def is_identity(self) -> bool:
        return set(self.label) == {"I"}

    @property
    def matrix(self) -> np.ndarray:
        return _pauli_matrix(self.label)

    def __str__(self):
        return self.label


def pauli(label: str) -> np.ndarray:
    """Dense matrix of a Pauli label."""
    return PauliString(label).matrix


def all_pauli_strings(n_qubits: int, include_identity: bool = True) -> list[PauliString]:
    labels = ("".join(p) for p in itertools.product("IXYZ", repeat=n_qubits))
    out = [PauliString(lab) for lab in labels]
    if not include_identity:
        out = [p for p in out if not p.is_identity]
    return out


def n_qubits_of(A: np.ndarray) -> int:
    dim = A.shape[-1]
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def is_hermitian(A: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    A = np.asarray(A)
    return A.shape[-1] == A.shape[-2] and np.allclose(
        A, np.swapaxes(A, -1, -2).conj(), rtol=0, atol=tol
    )


def check_hermitian(A, name: str = "operator", tol: float = HERMITIAN_TOL) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    if not is_hermitian(A, tol):
        err = np.max(np.abs(A - np.swapaxes(A, -1, -2).conj()))
        raise ValueError(f"{name} is not Hermitian (max deviation {err:.3e})")
    return A


def _check_same_dim(A, B):
    if A.shape[-2:] != B.shape[-2:]:
        raise ValueError(f"dimension mismatch: {A.shape[-2:]} vs {B.shape[-2:]}")


def inner_product(V, W) -> float:
    """Normalized trace inner product ``tr(VW) / dim``.

    Real for Hermitian arguments and invariant under a common unitary change
    of frame. Broadcasts over leading axes.
    """
    V = np.asarray(V)
    W = np.asarray(W)
    _check_same_dim(V, W)
    dim = V.shape[-1]
    # tr(VW) = sum_ij V_ij W_ji
    val = np.einsum("...ij,...ji->...", V, W) / dim
    return np.real(val)


def norm(V) -> float:
    """Norm induced by the normalized trace inner product (also valid for non-Hermitian V)."""
    V = np.asarray(V)
    dim = V.shape[-1]
    return np.sqrt(np.real(np.einsum("...ij,...ij->...", V.conj(), V)) / dim)


def commutator_i(A, B) -> np.ndarray:
    """Return ``i[A, B]``, which is Hermitian when A and B are."""
    A = np.asarray(A)
    B = np.asarray(B)
    _check_same_dim(A, B)
    return 1j * (A @ B - B @ A)


def anticommutator(A, B) -> np.ndarray:
    A = np.asarray(A)
    B = np.asarray(B)
    _check_same_dim(A, B)
    return A @ B + B @ A


def pauli_decompose(A, tol: float = 1e-14) -> dict[str, float]:
    """Real Pauli-string coefficients ``c_P = inner_product(A, P)`` of a Hermitian matrix.

    Coefficients with magnitude at or below ``tol`` are omitted, so the zero
    operator maps to an empty dict.
    """
    A = check_hermitian(A)
    n = n_qubits_of(A)
    out = {}
    for p in all_pauli_strings(n):
        c = float(inner_product(A, p.matrix))
        if abs(c) > tol:
            out[p.label] = c
    return out


def pauli_reconstruct(coeffs: Mapping[str, float], n_qubits: int | None = None) -> np.ndarray:
    """Inverse of :func:`pauli_decompose`."""
    if n_qubits is None:
        if not coeffs:
            raise ValueError("n_qubits is required for an empty coefficient map")
        n_qubits = len(next(iter(coeffs)))
    out = np.zeros((2**n_qubits, 2**n_qubits), dtype=complex)
    for label, c in coeffs.items():
        if len(label) != n_qubits:
            raise ValueError(f"label {label!r} does not act on {n_qubits} qubits")
        out += c * pauli(label)
    return out


@dataclass(frozen=True)
class OperatorBasis:
    """Ordered orthonormal basis of a subspace of traceless Hermitian operators.

    ``matrices`` has shape ``(d, D, D)``. ``labels`` holds the Pauli label of
    each element, or ``None`` for elements that are not single Pauli strings.
    """

    matrices: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=complex)
        if mats.ndim != 3:
            raise ValueError("basis matrices must have shape (d, D, D)")
        mats = mats.copy()
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)
        labels = tuple(self.labels) if self.labels else (None,) * len(mats)
        if len(labels) != len(mats):
            raise ValueError("one label per basis element required")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "OperatorBasis":
        return cls(np.array([pauli(lab) for lab in labels]), tuple(labels))

    @property
    def d(self) -> int:
        return self.matrices.shape[0]

    @property
    def hilbert_dim(self) -> int:
        return self.matrices.shape[-1]

    def __len__(self):
        return self.d

    def gram(self) -> np.ndarray:
        return inner_product(self.matrices[:, None], self.matrices[None, :])

    def coords(self, ops) -> np.ndarray:
        """Coordinates of operator(s) ``(..., D, D)`` -> ``(..., d)``."""
        ops = np.asarray(ops)
        # basis elements are Hermitian, so tr(b A) = sum_ij conj(b_ij) A_ij
        c = np.einsum("aij,...ij->...a", self.matrices.conj(), ops)
        return np.real(c) / self.hilbert_dim

    def reconstruct(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        return np.einsum("...a,aij->...ij", coords, self.matrices)

    def projection_residual(self, ops) -> np.ndarray:
        """Norm of the part of ``ops`` lying outside the span."""
        ops = np.asarray(ops)
        return norm(ops - self.reconstruct(self.coords(ops)))

    def adjoint_matrix(self, V) -> np.ndarray:
        """Real d x d matrix of ``X -> i[V, X]`` restricted to the span."""
        images = commutator_i(np.asarray(V)[None], self.matrices)
        return self.coords(images).T

    def conjugation_matrix(self, U) -> np.ndarray:
        """Matrix ``O[a, b] = b_a . (U^dag b_b U)``, batched over leading axes of U."""
        U = np.asarray(U)
        Ud = np.swapaxes(U, -1, -2).conj()
        conj = Ud[..., None, :, :] @ self.matrices @ U[..., None, :, :]
        return np.swapaxes(self.coords(conj), -1, -2)

    def rotated(self, M) -> "OperatorBasis":
        """New basis with elements ``b'_a = sum_b M[a, b] b_b`` (M orthogonal)."""
        M = np.asarray(M, dtype=float)
        if not np.allclose(M @ M.T, np.eye(self.d), atol=1e-12):
            raise ValueError("basis change must be orthogonal")
        return OperatorBasis(np.einsum("ab,bij->aij", M, self.matrices))

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def to_json(self) -> list:
        if any(lab is None for lab in self.labels):
            return [pauli_decompose(m) for m in self.matrices]
        return list(self.labels)


def error_subspace(h0_terms: Sequence[np.ndarray], delta_h: np.ndarray,
                   tol: float = DROP_TOL) -> OperatorBasis:
    """Smallest subspace containing ``delta_h`` that is closed under ``i[V_i, .]``.

    Elements are listed in order of first appearance during a breadth-first
    closure. Whenever a new direction is a single Pauli string it is stored
    exactly (with positive sign); otherwise the modified Gram-Schmidt residual
    is used.
    """
    delta_h = check_hermitian(delta_h, "deltaH")
    terms = [check_hermitian(V, "Hamiltonian term") for V in h0_terms]
    for V in terms:
        _check_same_dim(V, delta_h)
    if norm(delta_h) <= tol:
        raise ValueError("deltaH must be nonzero")
    dim = delta_h.shape[0]
    max_d = dim * dim - 1

    elements: list[np.ndarray] = []
    labels: list = []

    def add(op) -> bool:
        r = np.array(op, dtype=complex)
        for _ in range(2):  # re-orthogonalize once for stability
            for b in elements:
                r = r - inner_product(b, r) * b
        nrm = norm(r)
        if nrm <= tol * max(1.0, norm(op)):
            return False
        r = r / nrm
        coeffs = pauli_decompose(r, tol=1e-9)
        if len(coeffs) == 1:
            (lab, c), = coeffs.items()
            elements.append(pauli(lab).copy())
            labels.append(lab)
        else:
            elements.append(r)
            labels.append(None)
        return True

    add(delta_h)
    head = 0
    while head < len(elements) and len(elements) < max_d:
        b = elements[head]
        head += 1
        for V in terms:
            add(commutator_i(V, b))
            if len(elements) >= max_d:
                break
    return OperatorBasis(np.array(elements), tuple(labels))
