"""
Fourier-space representation of odd-in-y fields on [0, 1] x [-L, L].

A field is stored through its sine coefficients,

    u(x, y) = sum_m a_m(x) sin(k_m y),    k_m = pi m / L,

sampled on a graded x-grid.  The scalar energy is

    S_L(u) = sum_m int_0^1 a_m'(x)^2 + a_m(x)^2 k_m^4 dx

and the admissible class imposes sum_m a_m(x)^2 k_m^2 = 2x.

Discretization
--------------
The membrane part int a'^2 is evaluated with the two-point difference
(a_{i+1} - a_i)/h_i, which is the centered second-order derivative at the
cell midpoint, integrated exactly over each cell (piecewise-linear
interpolant).  The bending part and the constraint live on the nodes and
use trapezoidal weights.  With this choice the discrete energy keeps the
two structural properties the constructions rely on: it is subadditive
under ``combine`` and does not increase under ``symmetrize_odd``, for
every input and not just for smooth ones.

Node-based first and second derivative operators (three-point, one-sided
at the ends) are provided separately for diagnostics such as mu_k and the
recovered multiplier.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.sparse as sp

SCHEMA_VERSION = 1
NEG_CLAMP = 1e-14


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def default_mode_count(L: float) -> int:
    """Default mode cap ``2 floor(L) 2^8`` (eight cascade octaves)."""
    return 2 * int(math.floor(L)) * 2**8


@dataclass(frozen=True)
class FrequencyGrid:
    """Admissible wavenumbers ``k_m = pi m / L`` for ``m = 1..M``.

    Parameters
    ----------
    L : float
        Half-period in y, at least 1.
    M : int, optional
        Number of modes.  Defaults to ``2 floor(L) 2^8``.
    """

    L: float
    M: int = -1

    def __post_init__(self):
        L = float(self.L)
        if not np.isfinite(L) or L < 1.0:
            raise ValueError(f"L must be >= 1, got {self.L}")
        object.__setattr__(self, "L", L)
        M = default_mode_count(L) if self.M == -1 else int(self.M)
        if M < 2 * math.floor(L):
            raise ValueError(f"M={M} too small: need M >= 2*floor(L) = {2 * math.floor(L)}")
        object.__setattr__(self, "M", M)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(1, self.M + 1)

    @property
    def k(self) -> np.ndarray:
        return np.pi * self.modes / self.L

    @property
    def base_wavenumber(self) -> float:
        """P = pi floor(L) / L, the first cascade wavenumber."""
        return np.pi * math.floor(self.L) / self.L

    def with_modes(self, M: int) -> "FrequencyGrid":
        return FrequencyGrid(self.L, M)


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def first_derivative_matrix(x: np.ndarray) -> sp.csr_matrix:
    """Three-point nonuniform first derivative (one-sided at the ends)."""
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 nodes")
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        h1 = x[i] - x[i - 1]
        h2 = x[i + 1] - x[i]
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))]
    # one-sided second-order stencils
    for i, (j0, j1, j2) in ((0, (0, 1, 2)), (n - 1, (n - 1, n - 2, n - 3))):
        d1 = x[j1] - x[j0]
        d2 = x[j2] - x[j0]
        c1 = d2 / (d1 * (d2 - d1))
        c2 = -d1 / (d2 * (d2 - d1))
        rows += [i, i, i]
        cols += [j0, j1, j2]
        vals += [-(c1 + c2), c1, c2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def second_derivative_matrix(x: np.ndarray) -> sp.csr_matrix:
    """Three-point nonuniform second derivative on interior nodes.

    Rows 0 and n-1 are left empty; callers restrict to interior nodes.
    """
    n = len(x)
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        h1 = x[i] - x[i - 1]
        h2 = x[i + 1] - x[i]
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [2 / (h1 * (h1 + h2)), -2 / (h1 * h2), 2 / (h2 * (h1 + h2))]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class XGrid:
    """Strictly increasing nodes ``0 = x_0 < ... < x_N = 1`` with trapezoid weights."""

    nodes: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        x = np.array(self.nodes, dtype=float)
        if x.ndim != 1 or len(x) < 3:
            raise ValueError("x-grid needs at least 3 nodes")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise ValueError("x-grid endpoints must be exactly 0 and 1")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x-grid must be strictly increasing")
        x.flags.writeable = False
        object.__setattr__(self, "nodes", x)

    @classmethod
    def graded(cls, N: int, gamma: float = 2.0) -> "XGrid":
        """Nodes ``x_i = (i/N)^gamma``, i = 0..N."""
        if N < 2:
            raise ValueError("N must be >= 2")
        x = (np.arange(N + 1) / N) ** gamma
        x[-1] = 1.0
        return cls(x, gamma=gamma)

    @property
    def N(self) -> int:
        return len(self.nodes) - 1

    @cached_property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @cached_property
    def weights(self) -> np.ndarray:
        return _trapezoid_weights(self.nodes)

    @cached_property
    def D1(self) -> sp.csr_matrix:
        return first_derivative_matrix(self.nodes)

    @cached_property
    def D2(self) -> sp.csr_matrix:
        return second_derivative_matrix(self.nodes)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoidal integral over [0, 1] along the last axis."""
        return np.asarray(values) @ self.weights

    def same_as(self, other: "XGrid") -> bool:
        return self is other or np.array_equal(self.nodes, other.nodes)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _clean_amplitudes(a: np.ndarray, what: str = "amplitudes") -> np.ndarray:
    a = np.array(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} must be finite")
    if np.any(a < -NEG_CLAMP):
        raise ValueError(f"{what} must be nonnegative (min {a.min():.3e})")
    a[a < 0] = 0.0
    return a


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Sine coefficients ``a[m, i] = a_{k_m}(x_i)``.

    Amplitudes are nonnegative and vanish at ``x = 0``.  Tiny negatives
    (above ``-1e-14``) left over from arithmetic are clamped to zero.
    """

    freq: FrequencyGrid
    xgrid: XGrid
    a: np.ndarray

    def __post_init__(self):
        a = _clean_amplitudes(self.a)
        shape = (self.freq.M, self.xgrid.N + 1)
        if a.shape != shape:
            raise ValueError(f"amplitude shape {a.shape} != {shape}")
        if np.any(a[:, 0] > NEG_CLAMP):
            raise ValueError("amplitudes must vanish at x = 0")
        a[:, 0] = 0.0
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    @classmethod
    def zeros(cls, freq: FrequencyGrid, xgrid: XGrid) -> "CoefficientField":
        return cls(freq, xgrid, np.zeros((freq.M, xgrid.N + 1)))

    @classmethod
    def from_function(cls, freq, xgrid, func) -> "CoefficientField":
        """Build from ``func(k, x) -> array`` broadcast over (modes, nodes)."""
        a = func(freq.k[:, None], xgrid.nodes[None, :])
        a = np.broadcast_to(a, (freq.M, xgrid.N + 1)).copy()
        a[:, 0] = 0.0
        return cls(freq, xgrid, a)

    @property
    def L(self) -> float:
        return self.freq.L

    @property
    def k(self) -> np.ndarray:
        return self.freq.k

    @property
    def x(self) -> np.ndarray:
        return self.xgrid.nodes

    def replace(self, a: np.ndarray) -> "CoefficientField":
        return CoefficientField(self.freq, self.xgrid, a)

    def with_modes(self, M: int) -> "CoefficientField":
        """Zero-pad (or truncate zero modes) to ``M`` modes."""
        if M < self.freq.M and np.any(self.a[M:] != 0):
            raise ValueError("cannot drop nonzero modes")
        a = np.zeros((M, self.xgrid.N + 1))
        n = min(M, self.freq.M)
        a[:n] = self.a[:n]
        return CoefficientField(self.freq.with_modes(M), self.xgrid, a)

    def active_modes(self, floor: float = 1e-9) -> np.ndarray:
        """Indices of modes whose sup amplitude exceeds ``floor * max``."""
        amax = self.a.max(initial=0.0)
        if amax == 0:
            return np.array([], dtype=int)
        return np.flatnonzero(self.a.max(axis=1) > floor * amax)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "L": self.freq.L,
            "x_nodes": self.xgrid.nodes.tolist(),
            "modes": self.freq.modes.tolist(),
            "amplitudes": self.a.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientField":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')}")
        modes = np.asarray(d["modes"], dtype=int)
        if not np.array_equal(modes, np.arange(1, len(modes) + 1)):
            raise ValueError("modes must be 1..M")
        return cls(FrequencyGrid(d["L"], len(modes)), XGrid(d["x_nodes"]), np.asarray(d["amplitudes"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "CoefficientField":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True, eq=False)
class FullField:
    """Two-sided field ``sum_k a_k sin(ky) + c_k cos(ky)`` (k > 0)."""

    freq: FrequencyGrid
    xgrid: XGrid
    sine: np.ndarray
    cosine: np.ndarray

    def __post_init__(self):
        shape = (self.freq.M, self.xgrid.N + 1)
        for name in ("sine", "cosine"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape} != {shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class EnergySample:
    """Energy split of a field.

    Attributes
    ----------
    total, membrane, bending : float
        ``membrane = sum int a'^2``, ``bending = sum int a^2 k^4``.
    membrane_density : ndarray
        ``sum_m a_m'^2`` on cell midpoints.
    bending_density : ndarray
        ``B(x) = sum_m a_m^2 k_m^4`` on nodes.
    """

    total: float
    membrane: float
    bending: float
    membrane_density: np.ndarray = dc_field(repr=False)
    bending_density: np.ndarray = dc_field(repr=False)


# ---------------------------------------------------------------------------
# energy and constraint
# ---------------------------------------------------------------------------


def _energy_parts(a, k, xgrid):
    d = np.diff(a, axis=1) / xgrid.h
    mem_density = np.sum(d * d, axis=0)
    bend_density = (k**4) @ (a * a)
    membrane = float(mem_density @ xgrid.h)
    bending = float(bend_density @ xgrid.weights)
    return membrane, bending, mem_density, bend_density


def energy(field: CoefficientField) -> EnergySample:
    """Discrete ``S_L`` of a coefficient field."""
    mem, bend, md, bd = _energy_parts(field.a, field.k, field.xgrid)
    # total is defined as the sum so that membrane + bending == total exactly
    return EnergySample(mem + bend, mem, bend, md, bd)


def energy_array(a: np.ndarray, k: np.ndarray, xgrid: XGrid) -> float:
    mem, bend, _, _ = _energy_parts(a, k, xgrid)
    return mem + bend


def energy_gradient(a: np.ndarray, k: np.ndarray, xgrid: XGrid) -> np.ndarray:
    """Exact gradient of the discrete energy with respect to ``a[m, i]``."""
    d = np.diff(a, axis=1) / xgrid.h
    g = 2.0 * (k**4)[:, None] * a * xgrid.weights[None, :]
    g[:, :-1] -= 2.0 * d
    g[:, 1:] += 2.0 * d
    return g


def constraint_sum(field: CoefficientField) -> np.ndarray:
    """``sum_m a_m(x_i)^2 k_m^2`` at every node."""
    return (field.k**2) @ (field.a**2)


def constraint_residual(field: CoefficientField) -> np.ndarray:
    """``r_i = sum_m a_m(x_i)^2 k_m^2 - 2 x_i``."""
    return constraint_sum(field) - 2.0 * field.x


def bending_density(field: CoefficientField) -> np.ndarray:
    """``B(x_i) = sum_m a_m^2 k_m^4``."""
    return (field.k**4) @ (field.a**2)


# ---------------------------------------------------------------------------
# combinators
# ---------------------------------------------------------------------------


def _check_same_grids(f1, f2):
    if f1.freq != f2.freq or not f1.xgrid.same_as(f2.xgrid):
        raise ValueError("fields live on different grids")


def combine(a: CoefficientField, b: CoefficientField) -> CoefficientField:
    """``c_k = sqrt(a_k^2 + b_k^2)``: constraint sums add, energy is subadditive."""
    _check_same_grids(a, b)
    return a.replace(np.hypot(a.a, b.a))


def symmetrize_odd(full: FullField) -> CoefficientField:
    """Odd field ``c_k = sqrt(a_k^2 + a_{-k}^2)`` from sine and cosine parts."""
    return CoefficientField(full.freq, full.xgrid, np.hypot(full.sine, full.cosine))


def full_energy(full: FullField) -> float:
    """Energy of a two-sided field (sine and cosine modes are orthogonal)."""
    k = full.freq.k
    return energy_array(full.sine, k, full.xgrid) + energy_array(full.cosine, k, full.xgrid)


def full_constraint_sum(full: FullField) -> np.ndarray:
    k2 = full.freq.k**2
    return k2 @ (full.sine**2) + k2 @ (full.cosine**2)


# ---------------------------------------------------------------------------
# physical samples
# ---------------------------------------------------------------------------


def y_samples(L: float, n: int) -> np.ndarray:
    """Uniform periodic y-samples on [-L, L) (n points)."""
    return -L + 2.0 * L * np.arange(n) / n


def synthesize(field: CoefficientField, n_y: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``u(x_i, y_j)`` on a uniform periodic y-grid.

    Returns
    -------
    y : ndarray, shape (n_y,)
    u : ndarray, shape (N+1, n_y)
    """
    if n_y < 2 * field.freq.M + 1:
        raise ValueError(f"aliasing: need at least 2M+1 = {2 * field.freq.M + 1} y-samples, got {n_y}")
    y = y_samples(field.L, n_y)
    S = np.sin(np.outer(field.k, y))
    return y, field.a.T @ S


def parseval_sums(field: CoefficientField, n_y: int) -> tuple[np.ndarray, np.ndarray]:
    """``(1/L) int u^2 dy`` from samples versus ``sum_m a_m^2``."""
    _, u = synthesize(field, n_y)
    # periodic trapezoid on [-L, L]: dy = 2L/n_y
    lhs = (2.0 / n_y) * np.sum(u * u, axis=1)
    return lhs, np.sum(field.a**2, axis=0)


# ---------------------------------------------------------------------------
# period changes
# ---------------------------------------------------------------------------


def as_rational(alpha, max_den: int = 1000) -> Fraction:
    """Return ``alpha`` as a Fraction; reject values with no small-denominator form."""
    if isinstance(alpha, Fraction):
        return alpha
    if isinstance(alpha, (int, np.integer)):
        return Fraction(int(alpha))
    if isinstance(alpha, str):
        return Fraction(alpha)
    q = Fraction(float(alpha)).limit_denominator(max_den)
    if abs(float(q) - float(alpha)) > 1e-12 * max(1.0, abs(float(alpha))):
        raise ValueError(f"alpha={alpha!r} is not a rational with denominator <= {max_den}")
    return q


def rescale_alpha(field: CoefficientField, alpha) -> CoefficientField:
    """``v(x, y) = alpha u(x, y/alpha)`` on the period ``2 alpha L``.

    Mode ``m`` keeps its index: ``k/alpha = pi m / (alpha L)`` is the m-th
    wavenumber of the new grid.  Amplitudes are multiplied by ``alpha``,
    so the membrane part scales by ``alpha^2`` and the bending part by
    ``alpha^-2`` while the constraint sums are unchanged.
    """
    q = as_rational(alpha)
    if q < 1:
        raise ValueError("alpha must be >= 1")
    newL = field.L * q.numerator / q.denominator
    M = max(field.freq.M, 2 * int(math.floor(newL)))
    a = np.zeros((M, field.xgrid.N + 1))
    a[: field.freq.M] = float(q) * field.a
    return CoefficientField(FrequencyGrid(newL, M), field.xgrid, a)


def periodic_extend(field: CoefficientField, N: int, max_modes: int | None = None) -> CoefficientField:
    """Periodic extension to ``2 N L``; mode m moves to mode ``N m``."""
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    N = int(N)
    M = N * field.freq.M
    if max_modes is not None and M > max_modes:
        raise ValueError(f"mode cap exceeded: need M = {M}, cap is {max_modes}")
    a = np.zeros((M, field.xgrid.N + 1))
    a[N - 1 :: N] = field.a
    return CoefficientField(FrequencyGrid(N * field.L, M), field.xgrid, a)
