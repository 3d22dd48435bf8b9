"""
Rescaled Foppl-von Karman energy and the upper-bound deformation.

With ``L = h^{-1/2}`` and the rescaled displacements

    w1(x, y) = W1(x, y/L),   w2 = L W2(x, y/L),   u3 = L U3(x, y/L)

on ``[-1, 1] x [-L, L]``, the energy E_h(W, U3) equals

    E_L = int fint (w1_x + u3_x^2 / (2L^2) - 1)^2            (T1a)
          - 2                                                 (T1b)
          + int_{-1}^0 fint |w2_y + u3_y^2/2 - x|^2           (T1c)
          + int_0^1 fint |w2_y + u3_y^2/2 - x|^2              (T2)
          + L^-2 int fint |L^2 w1_y + w2_x + u3_x u3_y|^2 / 2 (T3)
          + L^-2 int fint u3_x^2 + u3_yy^2                    (T4)
          + L^-4 int fint 2 u3_xy^2 + L^-2 u3_xx^2            (T5)

where ``fint`` is the average over one period in y.  The relaxed minimum
is ``E_0 = -5/3``.

Discretization
--------------
Samples live on a tensor grid: arbitrary increasing x-nodes on [-1, 1]
(0 must be a node) and ``n_y`` uniform periodic y-samples.

* y-derivatives and y-averages are spectral (FFT), exact for resolved
  trigonometric polynomials.
* Terms containing only one x-derivative of a squared quantity (the
  stretch term, ``u3_x^2``, ``u3_xy^2``) use the two-point difference on
  each cell and the midpoint rule, so ``sum_cells h w1_x`` telescopes to
  ``w1(1) - w1(-1)``.  This makes the completed square in T1a agree with
  the boundary term of E_h to rounding.
* Node quantities (the constraint term and the shear term) are integrated
  as the exact integral of the square of their piecewise-linear
  interpolant.  Planar deformations therefore give T1c = T2 = 1/3 on any
  grid.
* ``u3_yy^2`` and ``u3_xx^2`` use trapezoidal weights, which matches the
  scalar energy of ``spectral.energy``.
* The shear term uses the three-point node derivative in x, and the
  upper-bound assembly uses the same operator, so T3 vanishes to rounding.

A field ``u = sqrt(2) sum_m a_m sin(k_m y)`` has ``fint u_y^2 = sum a^2 k^2``,
so a feasible coefficient field satisfies ``fint u_y^2 = 2x`` and
``T4 = L^-2 S(u)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from .cascade import smoothstep5
from .spectral import CoefficientField, XGrid, first_derivative_matrix, second_derivative_matrix

E0 = -5.0 / 3.0
SQRT2 = math.sqrt(2.0)
PERIODIC_TOL = 1e-10
NYQUIST_MARGIN = 2


class NyquistError(ValueError):
    """The y-grid does not resolve the band of the sampled fields."""


# ---------------------------------------------------------------------------
# y operations
# ---------------------------------------------------------------------------


def y_grid(L: float, n_y: int) -> np.ndarray:
    """Uniform periodic samples on [-L, L); y = 0 is sample ``n_y // 2``."""
    if n_y < 4 or n_y % 2:
        raise ValueError("n_y must be even and >= 4")
    return -L + 2.0 * L * np.arange(n_y) / n_y


def _wavenumbers(L: float, n_y: int) -> np.ndarray:
    return np.pi * np.arange(n_y // 2 + 1) / L


def dy(f: np.ndarray, L: float, order: int = 1) -> np.ndarray:
    """Spectral y-derivative along the last axis (period 2L)."""
    n = f.shape[-1]
    F = sfft.rfft(f, axis=-1)
    ik = (1j * _wavenumbers(L, n)) ** order
    ik[-1] = 0.0 if order % 2 else ik[-1]  # odd derivatives of the Nyquist mode are not real
    return sfft.irfft(F * ik, n=n, axis=-1)


def antiderivative_y(g: np.ndarray, L: float) -> tuple[np.ndarray, np.ndarray]:
    """Periodic antiderivative ``int_0^y g`` along the last axis.

    Returns the antiderivative of ``g - mean(g)`` anchored at y = 0 and the
    per-row closure mismatch ``int_{-L}^{L} g dy``; a periodic
    antiderivative exists only when the mismatch vanishes.
    """
    n = g.shape[-1]
    G = sfft.rfft(g, axis=-1)
    closure = 2.0 * L * G[..., 0].real / n
    k = _wavenumbers(L, n)
    inv = np.zeros_like(k, dtype=complex)
    inv[1:-1] = 1.0 / (1j * k[1:-1])
    F = sfft.irfft(G * inv, n=n, axis=-1)
    return F - F[..., n // 2 : n // 2 + 1], closure


def y_band(f: np.ndarray, rel: float = 1e-13) -> int:
    """Highest FFT index carrying a coefficient above ``rel`` of the largest."""
    F = np.abs(sfft.rfft(f, axis=-1))
    if F.size == 0:
        return 0
    top = F.max()
    if top == 0.0:
        return 0
    idx = np.nonzero(np.any(F > rel * top, axis=tuple(range(F.ndim - 1))))[0]
    return int(idx.max())


def required_ny(band: int) -> int:
    """Smallest even FFT-friendly sample count whose Nyquist index exceeds ``band``."""
    n = max(2 * band + 2, 8)
    n = sfft.next_fast_len(n, real=True)
    return n + (n % 2)


# ---------------------------------------------------------------------------
# x quadrature rules
# ---------------------------------------------------------------------------


def _stagger(f: np.ndarray, h: np.ndarray) -> np.ndarray:
    return np.diff(f, axis=0) / h[:, None]


def _cell_sum(v: np.ndarray, h: np.ndarray) -> float:
    """Midpoint rule for cell values, averaged in y."""
    return float(h @ np.mean(v, axis=1))


def _linear_sq(v: np.ndarray, h: np.ndarray) -> float:
    """Exact integral of the squared piecewise-linear interpolant, averaged in y."""
    p, q = v[:-1], v[1:]
    return float(h @ np.mean(p * p + p * q + q * q, axis=1) / 3.0)


def _trap(v: np.ndarray, x: np.ndarray) -> float:
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return float(w @ np.mean(v, axis=1))


# ---------------------------------------------------------------------------
# deformation fields
# ---------------------------------------------------------------------------


def _frozen(a, shape=None, name="array"):
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Rescaled deformation ``(w1, w2, u3)`` sampled on ``x x y``.

    Attributes
    ----------
    x : ndarray, shape (Nx,)
        Increasing nodes from -1 to 1, containing 0.
    L : float
        Half-period in y.
    w1, w2, u3 : ndarray, shape (Nx, n_y)
        Samples at ``y_grid(L, n_y)``.
    closure : dict
        Largest periodic closure mismatch of each component, when the
        field was assembled from y-integrals.
    """

    x: np.ndarray
    L: float
    w1: np.ndarray
    w2: np.ndarray
    u3: np.ndarray
    closure: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        x = _frozen(self.x, name="x")
        if x.ndim != 1 or len(x) < 3 or x[0] != -1.0 or x[-1] != 1.0:
            raise ValueError("x must run from -1 to 1 with at least 3 nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x must be strictly increasing")
        if not np.any(x == 0.0):
            raise ValueError("x = 0 must be a node")
        object.__setattr__(self, "x", x)
        shape = np.shape(self.w1)
        if len(shape) != 2 or shape[0] != len(x):
            raise ValueError("w1 must have shape (len(x), n_y)")
        y_grid(self.L, shape[1])
        for name in ("w1", "w2", "u3"):
            object.__setattr__(self, name, _frozen(getattr(self, name), shape, name))
        for name, gap in self.closure.items():
            if gap > PERIODIC_TOL:
                raise ValueError(f"{name} is not periodic in y: closure mismatch {gap:.3e}")

    @property
    def n_y(self) -> int:
        return self.w1.shape[1]

    @property
    def y(self) -> np.ndarray:
        return y_grid(self.L, self.n_y)

    @property
    def zero_index(self) -> int:
        return int(np.nonzero(self.x == 0.0)[0][0])

    def band(self) -> int:
        """Band of the quantities that get squared: ``max(w1, w2, u3^2)``.

        Requiring the Nyquist index to exceed it means every active
        wavenumber of u3 sits at most at half the Nyquist index (margin 2)
        and all squared terms are integrated exactly in y.
        """
        return max(y_band(self.w1), y_band(self.w2), NYQUIST_MARGIN * y_band(self.u3))

    def check_nyquist(self):
        b = self.band()
        if self.n_y <= 2 * b:
            raise NyquistError(f"n_y = {self.n_y} does not resolve band {b}; need n_y >= {required_ny(b)}")

    @classmethod
    def planar(cls, x, L: float, n_y: int) -> "DeformationField":
        """``w = (x, 0)``, ``u3 = 0``."""
        x = np.asarray(x, dtype=float)
        w1 = np.repeat(x[:, None], n_y, axis=1)
        z = np.zeros_like(w1)
        return cls(x, L, w1, z, z)

    @classmethod
    def zero(cls, x, L: float, n_y: int) -> "DeformationField":
        z = np.zeros((len(x), n_y))
        return cls(x, L, z, z, z)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "L": self.L,
            "x": self.x.tolist(),
            "shape": list(self.w1.shape),
            "w1": self.w1.ravel().tolist(),
            "w2": self.w2.ravel().tolist(),
            "u3": self.u3.ravel().tolist(),
            "closure": dict(self.closure),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeformationField":
        shape = tuple(d["shape"])
        arrs = [np.asarray(d[k], dtype=float).reshape(shape) for k in ("w1", "w2", "u3")]
        return cls(np.asarray(d["x"]), float(d["L"]), *arrs, closure=dict(d.get("closure", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "DeformationField":
        return cls.from_dict(json.loads(s))


def uniform_x(n: int) -> np.ndarray:
    """``n`` nodes on [-1, 1], uniform on each side of the node x = 0."""
    if n < 3:
        raise ValueError("need at least 3 nodes")
    n_neg = n // 2
    return np.concatenate([np.linspace(-1.0, 0.0, n_neg + 1)[:-1], np.linspace(0.0, 1.0, n - n_neg)])


def two_sided_x(xgrid: XGrid, n_neg: int = 16) -> np.ndarray:
    """``n_neg`` uniform cells on [-1, 0) followed by the nodes of ``xgrid``."""
    neg = np.linspace(-1.0, 0.0, n_neg + 1)[:-1]
    return np.concatenate([neg, xgrid.nodes])


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyBreakdown:
    """Terms of the rescaled energy; ``total`` is their sum."""

    T1a: float
    T1b: float
    T1c: float
    T2: float
    T3: float
    T4: float
    T5: float
    total: float

    @property
    def excess(self) -> float:
        """``E_L - E_0``."""
        return self.total - E0

    def to_dict(self) -> dict:
        return asdict(self)


def _xx(D2, f: np.ndarray) -> np.ndarray:
    """Second x-derivative on nodes; end rows copy their interior neighbours.

    The end nodes carry trapezoid weight O(h), so the copy keeps the
    integrated term second-order accurate.
    """
    out = D2 @ f
    out[0], out[-1] = out[1], out[-2]
    return out


def _ops(x):
    return first_derivative_matrix(x), second_derivative_matrix(x), np.diff(x)


def evaluate_EL(d: DeformationField) -> EnergyBreakdown:
    """Term-by-term rescaled energy of a sampled deformation.

    Raises
    ------
    NyquistError
        If the y-grid under-resolves the fields.
    """
    d.check_nyquist()
    x, L = d.x, d.L
    D1, D2, h = _ops(x)
    iz = d.zero_index
    Lm2 = L**-2

    u_y = dy(d.u3, L)
    u_yy = dy(d.u3, L, 2)
    u_xc = _stagger(d.u3, h)
    w1_xc = _stagger(d.w1, h)

    T1a = _cell_sum((w1_xc + 0.5 * Lm2 * u_xc**2 - 1.0) ** 2, h)
    r = dy(d.w2, L) + 0.5 * u_y**2 - x[:, None]
    T1c = _linear_sq(r[: iz + 1], h[:iz])
    T2 = _linear_sq(r[iz:], h[iz:])
    shear = L**2 * dy(d.w1, L) + D1 @ d.w2 + (D1 @ d.u3) * u_y
    T3 = 0.5 * Lm2 * _linear_sq(shear, h)
    T4 = Lm2 * (_cell_sum(u_xc**2, h) + _trap(u_yy**2, x))
    u_xyc = _stagger(u_y, h)
    T5 = L**-4 * (2.0 * _cell_sum(u_xyc**2, h) + Lm2 * _trap(_xx(D2, d.u3) ** 2, x))
    parts = dict(T1a=T1a, T1b=-2.0, T1c=T1c, T2=T2, T3=T3, T4=T4, T5=T5)
    return EnergyBreakdown(**parts, total=float(sum(parts.values())))


def scalar_energy(d: DeformationField) -> float:
    """``S(u3) = int fint u3_x^2 + u3_yy^2`` with the rules of T4."""
    h = np.diff(d.x)
    return _cell_sum(_stagger(d.u3, h) ** 2, h) + _trap(dy(d.u3, d.L, 2) ** 2, d.x)


def slice_arclength(d: DeformationField) -> np.ndarray:
    """``fint u3_y^2 / 2`` at every x-node."""
    return 0.5 * np.mean(dy(d.u3, d.L) ** 2, axis=1)


def upsilon(x) -> np.ndarray:
    """``x`` on [0, 1] and 0 on [-1, 0)."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, 0.0)


def lower_bound_terms(d: DeformationField) -> dict:
    """Pieces of ``L^2 (E_L - E_0) >= S(u3) + L^2 int (fint u3_y^2/2 - Upsilon)^2``."""
    s = slice_arclength(d)[:, None] - upsilon(d.x)[:, None]
    pen = d.L**2 * _linear_sq(s, np.diff(d.x))
    return {"scalar_energy": scalar_energy(d), "penalty": pen}


# ---------------------------------------------------------------------------
# cutoff and upper-bound assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cutoff:
    """``phi_delta(x) = phi(x/delta)``: 0 below delta/2, 1 above delta, quintic between."""

    delta: float

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")

    def __call__(self, x, nu: int = 0) -> np.ndarray:
        t = (np.asarray(x, dtype=float) / self.delta - 0.5) / 0.5
        return smoothstep5(t, nu) * (2.0 / self.delta) ** nu

    @property
    def derivative_bounds(self) -> tuple[float, float]:
        """``(max |phi'|, max |phi''|)``: 15/8 * 2/delta and 10/sqrt(3) * 4/delta^2."""
        return 15.0 / 8.0 * 2.0 / self.delta, 10.0 / math.sqrt(3.0) * 4.0 / self.delta**2


def cutoff(delta: float) -> Cutoff:
    return Cutoff(delta)


def _odd_synthesis(field: CoefficientField, N: int, y: np.ndarray, floor: float = 0.0):
    """``sqrt(2) sum a_m sin(k_m y)`` and its y-derivative, on the extended period."""
    rows = np.nonzero(np.max(field.a, axis=1) > floor)[0]
    k = field.k[rows]  # unchanged by periodic extension
    S = np.sin(np.outer(k, y))
    C = np.cos(np.outer(k, y))
    a = SQRT2 * field.a[rows]
    return a.T @ S, (a * k[:, None]).T @ C, rows


def assemble_upper_bound(
    u: CoefficientField,
    N: int,
    delta: float | None = None,
    n_y: int | None = None,
    n_neg: int = 16,
) -> DeformationField:
    """Upper-bound deformation on ``L = N L0`` from a scalar field on ``L0``.

    ``u3 = phi_delta u``, ``w2 = phi_delta^2 (x y - int_0^y u_y^2/2)`` and
    ``w1 = x - L^-2 int_0^y (w2_x + u3_x u3_y)``, with u extended
    periodically in y and by zero to x < 0.

    Parameters
    ----------
    u : CoefficientField
        Odd field on the period ``2 L0``, ideally a feasible minimizer.
    N : int
        Number of periods; ``L = N L0``.
    delta : float, optional
        Cutoff scale, defaults to ``1/L``.
    n_y : int, optional
        y-samples; defaults to the smallest count with Nyquist margin 2.
    n_neg : int
        Uniform cells on [-1, 0).
    """
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    L = N * u.L
    delta = 1.0 / L if delta is None else delta
    phi = Cutoff(delta)
    rows = np.nonzero(np.max(u.a, axis=1) > 0)[0]
    top = int(N * (rows.max() + 1)) if len(rows) else 1
    need = required_ny(NYQUIST_MARGIN * top)
    if n_y is None:
        n_y = need
    elif n_y < need:
        raise NyquistError(f"n_y = {n_y} too small for mode index {top}; need {need}")
    y = y_grid(L, n_y)
    x = two_sided_x(u.xgrid, n_neg)
    D1 = first_derivative_matrix(x)

    up = np.zeros((len(x), n_y))
    uy = np.zeros_like(up)
    up[n_neg:], uy[n_neg:], _ = _odd_synthesis(u, N, y)
    ph = phi(x)[:, None]
    u3 = ph * up
    g = 0.5 * uy**2 - x[:, None]
    G, closure2 = antiderivative_y(g, L)
    w2 = -(ph**2) * G
    integrand = D1 @ w2 + (D1 @ u3) * dy(u3, L)
    F, closure1 = antiderivative_y(integrand, L)
    w1 = x[:, None] - F / L**2
    # phi^2 kills the closure of w2 for x < delta/2, where g need not average to 0
    c2 = float(np.max(np.abs(ph[:, 0] ** 2 * closure2)))
    c1 = float(np.max(np.abs(closure1))) / L**2
    return DeformationField(x, L, w1, w2, u3, closure={"w1": c1, "w2": c2})


# ---------------------------------------------------------------------------
# physical variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Unrescaled ``(W1, W2, U3)`` on ``[-1, 1] x [-1, 1)`` with thickness ``h``."""

    x: np.ndarray
    h: float
    W1: np.ndarray
    W2: np.ndarray
    U3: np.ndarray

    @property
    def L(self) -> float:
        return self.h**-0.5


def unrescale(d: DeformationField) -> PhysicalField:
    """``W1(x, Y) = w1(x, L Y)``, ``W2 = w2 / L``, ``U3 = u3 / L``, ``h = L^-2``."""
    L = d.L
    return PhysicalField(d.x, L**-2, d.w1.copy(), d.w2 / L, d.u3 / L)


def rescale(p: PhysicalField) -> DeformationField:
    L = p.L
    return DeformationField(p.x, L, p.W1.copy(), L * p.W2, L * p.U3)


def evaluate_Eh(p: PhysicalField) -> float:
    """Direct evaluation of the unrescaled energy E_h on the period [-1, 1).

    Uses the same quadrature rules as :func:`evaluate_EL`, the boundary term
    ``W1(1, y) - W1(-1, y)`` and the Frobenius norm of the strain without
    completing the square.
    """
    x = p.x
    D1, D2, hx = _ops(x)
    U_Y = dy(p.U3, 1.0)
    U_YY = dy(p.U3, 1.0, 2)
    U_xc = _stagger(p.U3, hx)
    W1_xc = _stagger(p.W1, hx)
    stretch = _cell_sum((W1_xc + 0.5 * U_xc**2) ** 2, hx)
    shear = 0.5 * _linear_sq(dy(p.W1, 1.0) + D1 @ p.W2 + (D1 @ p.U3) * U_Y, hx)
    trans = _linear_sq(dy(p.W2, 1.0) + 0.5 * U_Y**2 - x[:, None], hx)
    bend = p.h**2 * (
        _trap(_xx(D2, p.U3) ** 2, x) + 2.0 * _cell_sum(_stagger(U_Y, hx) ** 2, hx) + _trap(U_YY**2, x)
    )
    boundary = -2.0 * float(np.mean(p.W1[-1] - p.W1[0]))
    return stretch + shear + trans + bend + boundary
