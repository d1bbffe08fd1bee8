"""
Control-amplitude shapes.

Every shape is a real function of time with analytic derivatives:
``shape(t)`` gives the amplitude and ``shape.derivatives(t, order)`` stacks
the amplitude and its first ``order`` time derivatives. ``eval(t)`` returns
the ``(omega, domega_dt)`` pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

_RANGE_TOL = 1e-9


class PulseShape:
    """Common interface for control amplitudes."""

    duration: float | None = None
    #: True when the amplitude is constant between breakpoints
    piecewise_constant = False

    def derivatives(self, t, order: int) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t):
        return self.derivatives(t, 0)[0]

    def eval(self, t):
        d = self.derivatives(t, 1)
        return d[0], d[1]

    def breakpoints(self) -> np.ndarray:
        return np.array([])

    def _check_range(self, t):
        t = np.asarray(t, dtype=float)
        if self.duration is not None:
            tol = _RANGE_TOL * max(1.0, self.duration)
            if np.any(t < -tol) or np.any(t > self.duration + tol):
                raise ValueError(
                    f"time outside pulse range [0, {self.duration}]: "
                    f"min {t.min():.6g}, max {t.max():.6g}"
                )
        return t


@dataclass(frozen=True)
class Constant(PulseShape):
    value: float
    piecewise_constant = True

    def derivatives(self, t, order):
        t = np.asarray(t, dtype=float)
        out = np.zeros((order + 1,) + t.shape)
        out[0] = self.value
        return out


@dataclass(frozen=True)
class SmoothPulse(PulseShape):
    """Periodic sum of Lorentzian-like peaks.

    ``omega(t) = c0 + sum_j c_j / (1 + a_j^2 sin^2(pi t / t_p + phi_j))``,
    repeated for ``n_sym`` periods. Two peaks by default; a third may be given.
    """

    c0: float
    c: tuple
    a: tuple
    phi: tuple
    t_p: float
    n_sym: int = 1

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "phi", tuple(float(x) for x in self.phi))
        if not len(self.c) == len(self.a) == len(self.phi):
            raise ValueError("c, a and phi must have equal length")
        if self.t_p <= 0:
            raise ValueError("period t_p must be positive")
        if self.n_sym < 1:
            raise ValueError("n_sym must be >= 1")

    @property
    def duration(self):
        return self.n_sym * self.t_p

    @property
    def n_peaks(self):
        return len(self.c)

    def one_period(self) -> "SmoothPulse":
        return SmoothPulse(self.c0, self.c, self.a, self.phi, self.t_p, 1)

    def repeated(self, n_sym: int) -> "SmoothPulse":
        return SmoothPulse(self.c0, self.c, self.a, self.phi, self.t_p, n_sym)

    def derivatives(self, t, order):
        t = self._check_range(t)
        out = np.zeros((order + 1,) + t.shape)
        out[0] = self.c0
        nu = 2 * np.pi / self.t_p
        for cj, aj, phij in zip(self.c, self.a, self.phi):
            # 1 + a^2 sin^2(u) = alpha - beta cos(2u)
            beta = 0.5 * aj * aj
            alpha = 1.0 + beta
            w = nu * t + 2 * phij
            g = [alpha - beta * np.cos(w)]
            for m in range(1, order + 1):
                g.append(-beta * nu**m * np.cos(w + m * np.pi / 2))
            # Leibniz on f*g = cj
            f = [cj / g[0]]
            for n in range(1, order + 1):
                acc = sum(comb(n, k) * f[k] * g[n - k] for k in range(n))
                f.append(-acc / g[0])
            out += np.array(f)
        return out

    def to_dict(self) -> dict:
        d = {"c0": self.c0}
        for j, (cj, aj, pj) in enumerate(zip(self.c, self.a, self.phi), start=1):
            d[f"c{j}"], d[f"a{j}"], d[f"phi{j}"] = cj, aj, pj
        d["t_p"] = self.t_p
        d["n_sym"] = self.n_sym
        return d

    @classmethod
    def from_dict(cls, d) -> "SmoothPulse":
        n = 3 if "c3" in d else 2
        return cls(
            d["c0"],
            [d[f"c{j}"] for j in range(1, n + 1)],
            [d[f"a{j}"] for j in range(1, n + 1)],
            [d[f"phi{j}"] for j in range(1, n + 1)],
            d["t_p"],
            int(d.get("n_sym", 1)),
        )


@dataclass(frozen=True)
class SquarePulseSequence(PulseShape):
    """Piecewise-constant amplitudes; one period of segments repeated ``n_sym`` times."""

    amplitudes: tuple
    durations: tuple
    n_sym: int = 1
    piecewise_constant = True

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(float(x) for x in self.amplitudes))
        object.__setattr__(self, "durations", tuple(float(x) for x in self.durations))
        if len(self.amplitudes) != len(self.durations) or not self.amplitudes:
            raise ValueError("need one duration per amplitude")
        if min(self.durations) <= 0:
            raise ValueError("segment durations must be positive")
        if self.n_sym < 1:
            raise ValueError("n_sym must be >= 1")

    @property
    def t_p(self):
        return float(sum(self.durations))

    @property
    def duration(self):
        return self.n_sym * self.t_p

    def one_period(self) -> "SquarePulseSequence":
        return SquarePulseSequence(self.amplitudes, self.durations, 1)

    def repeated(self, n_sym: int) -> "SquarePulseSequence":
        return SquarePulseSequence(self.amplitudes, self.durations, n_sym)

    def breakpoints(self):
        """Interior times where the amplitude jumps."""
        edges = np.cumsum(self.durations)
        pts = [k * self.t_p + e for k in range(self.n_sym) for e in edges]
        return np.array(pts[:-1])

    def segment_index(self, t):
        t = self._check_range(t)
        tau = np.mod(t, self.t_p)
        # the final instant belongs to the last segment
        tau = np.where(np.isclose(t, self.duration), self.t_p, tau)
        edges = np.concatenate([[0.0], np.cumsum(self.durations)])
        idx = np.searchsorted(edges, tau, side="right") - 1
        return np.clip(idx, 0, len(self.amplitudes) - 1)

    def derivatives(self, t, order):
        idx = self.segment_index(t)
        out = np.zeros((order + 1,) + np.shape(idx))
        out[0] = np.asarray(self.amplitudes)[idx]
        return out

    def to_dict(self) -> dict:
        return {"amplitudes": list(self.amplitudes), "durations": list(self.durations),
                "n_sym": self.n_sym}


@dataclass(frozen=True)
class Waveform(PulseShape):
    """Piecewise-linear interpolation of sampled ``(t, omega)`` data."""

    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
            raise ValueError("waveform needs matching 1-D time and value arrays (>= 2 samples)")
        if abs(t[0]) > 1e-12 or np.any(np.diff(t) <= 0):
            raise ValueError("waveform times must start at 0 and increase strictly")
        if not np.all(np.isfinite(v)):
            raise ValueError("waveform values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def duration(self):
        return float(self.times[-1])

    def derivatives(self, t, order):
        t = self._check_range(t)
        out = np.zeros((order + 1,) + t.shape)
        out[0] = np.interp(t, self.times, self.values)
        if order >= 1:
            slopes = np.diff(self.values) / np.diff(self.times)
            idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(slopes) - 1)
            out[1] = slopes[idx]
        return out


@dataclass(frozen=True)
class Sinusoid(PulseShape):
    """``offset + amplitude * cos(freq * t + phase)``."""

    offset: float = 0.0
    amplitude: float = 1.0
    freq: float = 1.0
    phase: float = 0.0

    def derivatives(self, t, order):
        t = np.asarray(t, dtype=float)
        out = np.empty((order + 1,) + t.shape)
        for m in range(order + 1):
            out[m] = self.amplitude * self.freq**m * np.cos(self.freq * t + self.phase + m * np.pi / 2)
        out[0] += self.offset
        return out
