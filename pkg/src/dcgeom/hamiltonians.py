"""
Time-dependent Hamiltonians of the form ``H(t) = sum_i f_i(t) V_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import OperatorBasis, check_hermitian, error_subspace, norm, pauli
from .pulses import Constant, PulseShape


def _as_shape(f) -> PulseShape:
    if isinstance(f, PulseShape):
        return f
    if np.isscalar(f):
        return Constant(float(f))
    raise TypeError(f"coefficient must be a number or PulseShape, got {type(f).__name__}")


class ControlHamiltonian:
    """Sum of Hermitian operators weighted by real coefficient functions.

    Coefficients are numbers or :class:`~dcgeom.pulses.PulseShape` objects;
    their analytic derivatives feed the nested-commutator and recursion
    machinery in :mod:`dcgeom.frenet`.
    """

    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("Hamiltonian needs at least one term")
        self.coefficients = tuple(_as_shape(f) for f, _ in terms)
        self.operators = tuple(check_hermitian(V, "Hamiltonian term") for _, V in terms)
        dims = {V.shape for V in self.operators}
        if len(dims) != 1:
            raise ValueError(f"terms act on different spaces: {dims}")
        self.dim = self.operators[0].shape[0]

    def __repr__(self):
        return f"ControlHamiltonian({len(self.operators)} terms, dim={self.dim})"

    @property
    def duration(self):
        durs = [f.duration for f in self.coefficients if f.duration is not None]
        return min(durs) if durs else None

    @property
    def piecewise_constant(self) -> bool:
        return all(f.piecewise_constant for f in self.coefficients)

    def breakpoints(self) -> np.ndarray:
        pts = [f.breakpoints() for f in self.coefficients]
        return np.unique(np.concatenate(pts)) if pts else np.array([])

    def coefficient_values(self, t, order: int = 0) -> np.ndarray:
        """Array ``(n_terms, order + 1, *t.shape)`` of coefficient derivatives."""
        return np.stack([f.derivatives(t, order) for f in self.coefficients])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        vals = self.coefficient_values(t)[:, 0]
        return np.einsum("k...,kij->...ij", vals, np.array(self.operators))

    def with_term(self, coeff, op) -> "ControlHamiltonian":
        return ControlHamiltonian(list(zip(self.coefficients, self.operators)) + [(coeff, op)])

    def max_rate(self, t) -> float:
        """Upper bound of ``sum_i |f_i(t)| * ||V_i||_2`` over the sample times."""
        vals = np.abs(self.coefficient_values(np.asarray(t, dtype=float))[:, 0])
        spec = np.array([np.max(np.abs(np.linalg.eigvalsh(V))) for V in self.operators])
        return float(np.max(np.tensordot(spec, vals, axes=1)))


@dataclass(frozen=True)
class IsingModel:
    """Two qubits with an Ising coupling, driven on qubit 2.

    ``H0 = Omega(t) X2 + (E1 + E2)/2 Z2 + (E1 - E2)/2 Z1 Z2``: block diagonal,
    with block ``b`` equal to ``Omega X + E_b Z``.
    """

    E1: float
    E2: float
    noise: str = "IZ"

    def __post_init__(self):
        if self.E1 == 0 and self.E2 == 0:
            raise ValueError("E1 and E2 cannot both vanish")
        if len(self.noise) != 2:
            raise ValueError("noise must be a two-qubit Pauli label")

    @property
    def static_terms(self) -> list:
        """Nonzero static ``(coefficient, label)`` pairs."""
        out = []
        ep, em = 0.5 * (self.E1 + self.E2), 0.5 * (self.E1 - self.E2)
        if ep != 0:
            out.append((ep, "IZ"))
        if em != 0:
            out.append((em, "ZZ"))
        return out

    def hamiltonian(self, pulse) -> ControlHamiltonian:
        return ControlHamiltonian([(pulse, pauli("IX"))] +
                                  [(c, pauli(lab)) for c, lab in self.static_terms])

    def h0_terms(self) -> list:
        return [pauli("IX")] + [pauli(lab) for _, lab in self.static_terms]

    def noise_operator(self) -> np.ndarray:
        Q = pauli(self.noise)
        return Q / norm(Q)

    def basis(self) -> OperatorBasis:
        return error_subspace(self.h0_terms(), self.noise_operator())

    @property
    def energies(self):
        return (self.E1, self.E2)
