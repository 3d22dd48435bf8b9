"""
Repair of an arbitrary periodic field into an admissible one.

Given a 2L-periodic field ``v`` on ``[-1, 1] x [-L, L]`` with Fourier
coefficients ``a_k`` (sine) and ``c_k`` (cosine), the construction

1. mollifies the mode densities: ``b_k^2 = (a_k^2 + c_k^2) * phi_eta``,
   with ``phi_eta(x) = phi((x - 2 eta) / eta) / eta`` supported in
   ``(eta, 3 eta)``, so ``b_k(x)`` only sees ``v`` on ``(x - 3eta, x - eta)``;
2. zeroes modes with ``k <= 1/2`` and ramps the others to zero at x = 0
   (linearly on [0, eta] for ``k < eta^{-1/2}``, with slope ``k^2`` on
   ``[eta - k^-2, eta]`` otherwise), giving ``c_k``;
3. measures the deficit ``r = 2x - sum c_k^2 k^2``;
4. covers the deficit on ``[0, eta^{2/3}]`` with a cascade ``e`` that is
   exact there, and on ``[eta^{2/3}, 1]`` with one mode
   ``k0 in [eta^{-1/6}, 2 eta^{-1/6}]`` of constant arclength ``R``;
5. combines ``d = sqrt(e^2 + f^2)`` and ``g = sqrt(c^2 + d^2)``.

The output satisfies ``sum g_k^2 k^2 >= 2x`` and ``g(0) = 0``.  The
measured overhead ``delta_hat = S(g) - S(v) - penalty(v)`` is the smallest
constant for which ``sigma_L <= S(v) + penalty(v) + delta`` is witnessed
by g.

Normalization: ``v = sqrt(2) sum (a_k sin(ky) + c_k cos(ky)) + c_0`` so
that ``fint v_y^2 = sum (a_k^2 + c_k^2) k^2`` matches the constraint
``sum a_k^2 k^2 = 2x`` of coefficient fields.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .cascade import ModeCapError, build_cascade, plan_cascade
from .fvk import E0, DeformationField, evaluate_EL, upsilon
from .spectral import CoefficientField, FrequencyGrid, XGrid, energy, energy_array

ETA_MAX = math.pi**-6
FEAS_TOL = 1e-10


# ---------------------------------------------------------------------------
# two-sided fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SlabField:
    """Periodic field on ``[-1, 1] x [-L, L]`` through its Fourier coefficients.

    Attributes
    ----------
    freq : FrequencyGrid
    x : ndarray
        Increasing nodes from -1 to 1 containing 0.
    sine, cosine : ndarray, shape (M, len(x))
        Coefficients of ``sqrt(2) sin(k_m y)`` and ``sqrt(2) cos(k_m y)``.
    mean : ndarray, shape (len(x),)
        The y-average of v (the k = 0 mode).
    """

    freq: FrequencyGrid
    x: np.ndarray
    sine: np.ndarray
    cosine: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x[0] != -1.0 or x[-1] != 1.0 or not np.any(x == 0.0) or np.any(np.diff(x) <= 0):
            raise ValueError("x must increase from -1 to 1 and contain 0")
        shape = (self.freq.M, len(x))
        for name in ("sine", "cosine"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape} != {shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "mean", np.broadcast_to(np.asarray(self.mean, dtype=float), x.shape).copy())

    @property
    def L(self) -> float:
        return self.freq.L

    @property
    def zero_index(self) -> int:
        return int(np.nonzero(self.x == 0.0)[0][0])

    @property
    def density(self) -> np.ndarray:
        """``a_k^2 + c_k^2`` per mode and node."""
        return self.sine**2 + self.cosine**2

    def arclength(self) -> np.ndarray:
        """``fint v_y^2 / 2`` at every node."""
        return 0.5 * (self.freq.k**2 @ self.density)

    @classmethod
    def extend_by_zero(cls, field: CoefficientField, n_neg: int = 16) -> "SlabField":
        """Odd field on [0, 1] extended by 0 to ``n_neg`` uniform cells on [-1, 0)."""
        x = np.concatenate([np.linspace(-1.0, 0.0, n_neg + 1)[:-1], field.x])
        sine = np.zeros((field.freq.M, len(x)))
        sine[:, n_neg:] = field.a
        return cls(field.freq, x, sine, np.zeros_like(sine), np.zeros(len(x)))

    @classmethod
    def from_deformation(cls, d: DeformationField) -> "SlabField":
        """Coefficients of ``u3`` from its samples."""
        n = d.n_y
        F = sfft.rfft(d.u3, axis=-1) / n
        M = n // 2 - 1
        m = np.arange(1, M + 1)
        # samples start at y = -L, which multiplies mode m by (-1)^m
        sign = np.where(m % 2, -1.0, 1.0)
        sine = (-2.0 * F[:, 1 : M + 1].imag * sign).T / math.sqrt(2.0)
        cosine = (2.0 * F[:, 1 : M + 1].real * sign).T / math.sqrt(2.0)
        return cls(FrequencyGrid(d.L, M), d.x, sine, cosine, F[:, 0].real)


def slab_energy(v: SlabField) -> float:
    """``S(v) = int fint v_x^2 + v_yy^2`` over [-1, 1] with the discrete rules of S."""
    k = v.freq.k
    h = np.diff(v.x)
    w = np.zeros_like(v.x)
    w[:-1] += h / 2
    w[1:] += h / 2
    mem = 0.0
    for arr in (v.sine, v.cosine):
        d = np.diff(arr, axis=1) / h
        mem += float(np.sum(d * d, axis=0) @ h)
    bend = float((k**4 @ v.density) @ w)
    dm = np.diff(v.mean) / h
    return mem + bend + float(dm * dm @ h)


def _linear_sq(v: np.ndarray, x: np.ndarray) -> float:
    h = np.diff(x)
    p, q = v[:-1], v[1:]
    return float(h @ (p * p + p * q + q * q) / 3.0)


def penalty(v) -> float:
    """``L^2 int_{-1}^{1} (fint v_y^2/2 - Upsilon)^2 dx``.

    The integrand is the square of the piecewise-linear interpolant of
    ``fint v_y^2/2 - Upsilon`` and is integrated exactly on each cell.
    Accepts a :class:`SlabField` or a :class:`CoefficientField`, which is
    extended by zero to x < 0.
    """
    if isinstance(v, CoefficientField):
        v = SlabField.extend_by_zero(v)
    s = v.arclength() - upsilon(v.x)
    return v.L**2 * _linear_sq(s, v.x)


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------


def bump(s, nu: int = 0) -> np.ndarray:
    """Even C^2 bump ``(35/32)(1 - s^2)^3`` on (-1, 1) with unit mass.

    The cube makes the profile and its first two derivatives vanish at
    ``s = +-1``, so the zero extension is C^2.
    """
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    if nu == 0:
        return np.where(inside, 35.0 / 32.0 * (1 - s * s) ** 3, 0.0)
    if nu == 1:
        return np.where(inside, -105.0 / 16.0 * s * (1 - s * s) ** 2, 0.0)
    raise ValueError("nu must be 0 or 1")


def mollifier(eta: float):
    """``phi_eta(x) = phi((x - 2 eta) / eta) / eta``, supported in (eta, 3 eta)."""
    return lambda x: bump((np.asarray(x, dtype=float) - 2 * eta) / eta) / eta


def _mollify_matrix(xs: np.ndarray, targets: np.ndarray, eta: float, q: int = 24) -> sp.csr_matrix:
    """Sparse map from node values on ``xs`` to ``(f * phi_eta)(targets)``.

    ``f`` is the piecewise-linear interpolant; the convolution integral is
    taken with a q-point Gauss-Legendre rule in the kernel variable.
    """
    s, w = np.polynomial.legendre.leggauss(q)
    wk = w * bump(s)
    pos = targets[:, None] - 2 * eta - eta * s[None, :]
    pos = np.clip(pos, xs[0], xs[-1])
    j = np.clip(np.searchsorted(xs, pos, side="right") - 1, 0, len(xs) - 2)
    t = (pos - xs[j]) / (xs[j + 1] - xs[j])
    rows = np.repeat(np.arange(len(targets)), q)
    data = np.concatenate([((1 - t) * wk).ravel(), (t * wk).ravel()])
    cols = np.concatenate([j.ravel(), (j + 1).ravel()])
    return sp.csr_matrix((data, (np.tile(rows, 2), cols)), shape=(len(targets), len(xs)))


# ---------------------------------------------------------------------------
# repair
# ---------------------------------------------------------------------------


def default_eta(L: float) -> float:
    """``min(L^{-1/2}, pi^{-6}/2)``."""
    return min(L**-0.5, ETA_MAX / 2)


@dataclass(frozen=True)
class RepairBudget:
    """Energy accounting of a repair.

    Attributes
    ----------
    eta : float
    penalty : float
        ``L^2 int (fint v_y^2/2 - Upsilon)^2``.
    energy_v, energy_b, energy_c, energy_d, energy_g : float
        Scalar energies of the input (on [-1, 1]), the mollified field, the
        ramped field, the deficit compensator and the output.
    ramp_overhead : float
        ``max(S(c) - S(b), 0)``: cost of forcing c(0) = 0.
    cascade_energy, single_mode_energy : float
        ``S(e)`` and ``S(f)``.
    deficit_max : float
        ``R = max r`` on ``[eta^{2/3}, 1]``.
    deficit_constant : float
        ``C_hat`` with ``R = 4 eta + C_hat L^-1 eta^{-1/2}``.
    k0 : float
    delta_hat : float
        ``S(g) - S(v) - penalty``.
    theory_terms : tuple
        ``(L^-1 eta^{-3/2}, eta^{2/3}, L^-1 eta^{-5/6})``.
    """

    L: float
    eta: float
    penalty: float
    energy_v: float
    energy_b: float
    energy_c: float
    energy_d: float
    energy_g: float
    ramp_overhead: float
    cascade_energy: float
    single_mode_energy: float
    deficit_max: float
    deficit_constant: float
    k0: float
    delta_hat: float
    theory_terms: tuple

    @property
    def components(self) -> dict:
        """The three overhead components, each nonnegative."""
        return {
            "ramp": self.ramp_overhead,
            "cascade": self.cascade_energy,
            "single_mode": self.single_mode_energy,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theory_terms"] = list(self.theory_terms)
        return d


@dataclass(frozen=True, eq=False)
class RepairResult:
    field: CoefficientField
    budget: RepairBudget
    c: CoefficientField
    d: CoefficientField
    deficit: np.ndarray

    @property
    def feasibility_margin(self) -> float:
        """``min_i (sum g^2 k^2 - 2x_i)``."""
        g = self.field
        return float(np.min(g.k**2 @ g.a**2 - 2 * g.x))


def output_grid(v: SlabField, eta: float) -> XGrid:
    """Nonnegative nodes of v plus the breakpoints eta and eta^{2/3}."""
    xs = v.x[v.zero_index :]
    return XGrid(np.union1d(xs, [eta, eta ** (2.0 / 3.0)]))


def choose_k0(L: float, eta: float) -> int:
    """Index m of the smallest wavenumber ``pi m / L`` in ``[eta^{-1/6}, 2 eta^{-1/6}]``."""
    lo = eta ** (-1.0 / 6.0)
    m = int(math.ceil(lo * L / math.pi - 1e-12))
    if math.pi * m / L > 2 * lo:
        raise ValueError("no admissible wavenumber in [eta^-1/6, 2 eta^-1/6]")
    return m


def repair(v, eta: float | None = None, max_modes: int | None = None) -> RepairResult:
    """Turn a periodic field into an admissible one.

    Parameters
    ----------
    v : SlabField or CoefficientField
        A coefficient field is extended by zero to x < 0.
    eta : float, optional
        Mollification scale in (0, pi^-6); defaults to ``default_eta(L)``.
    max_modes : int, optional
        Cap on the output frequency grid.  The output grid holds the input
        modes, the compensating cascade and k0; by default it grows as needed.

    Raises
    ------
    ValueError
        If ``eta >= pi^-6``.
    ModeCapError
        If the compensating modes need more than ``max_modes`` modes.
    """
    if isinstance(v, CoefficientField):
        v = SlabField.extend_by_zero(v)
    L = v.L
    eta = default_eta(L) if eta is None else float(eta)
    if not 0 < eta < ETA_MAX:
        raise ValueError(f"eta must lie in (0, pi^-6) = (0, {ETA_MAX:.6g}); got {eta}")
    b23 = eta ** (2.0 / 3.0)
    xg = output_grid(v, eta)
    x = xg.nodes

    # mode budget: input modes, the cascade on [0, eta^{2/3}] and k0
    plan = plan_cascade(L, b23, xg)
    m0 = choose_k0(L, eta)
    M = max(v.freq.M, plan.required_M, m0)
    if max_modes is not None and M > max_modes:
        raise ModeCapError(f"repair needs M >= {M} (cap {max_modes})", M)
    freq = FrequencyGrid(L, M)
    k = freq.k

    # 1. mollified densities on the output nodes and at x = eta
    Q = _mollify_matrix(v.x, np.append(x, eta), eta)
    rho = v.density
    b2 = np.maximum((Q @ rho.T).T, 0.0)
    b2_eta = b2[:, -1]
    b = np.zeros((M, len(x)))
    b[: v.freq.M] = np.sqrt(b2[:, :-1])
    beta = np.zeros(M)
    beta[: v.freq.M] = np.sqrt(b2_eta)

    # 2. ramps
    c = b.copy()
    low = k <= 0.5
    c[low] = 0.0
    mid = (~low) & (k < eta**-0.5)
    high = k >= eta**-0.5
    below = x < eta
    c[np.ix_(mid, below)] = np.outer(beta[mid], x[below] / eta)
    if np.any(high):
        kh = k[high][:, None]
        ramp = np.clip(kh**2 * (x[None, below] - eta + kh**-2), 0.0, 1.0)
        c[np.ix_(high, below)] = beta[high][:, None] * ramp
    c[:, 0] = 0.0

    # 3. deficit
    r = 2 * x - k**2 @ c**2
    tail = x >= b23 * (1 - 1e-14)
    R = max(float(np.max(r[tail])), 0.0)
    C_hat = (R - 4 * eta) * L * eta**0.5

    # 4. compensator
    e = build_cascade(L, b23, xg, freq).a
    f = np.zeros_like(e)
    k0 = k[m0 - 1]
    f[m0 - 1] = np.minimum(x / b23, 1.0) * math.sqrt(R) / k0
    d = np.hypot(e, f)

    # 5. combination
    g = np.hypot(c, d)
    g[:, 0] = 0.0

    out = CoefficientField(freq, xg, g)
    en = lambda arr: energy_array(arr, k, xg)  # noqa: E731
    Sv = slab_energy(v)
    pen = penalty(v)
    Sg = energy(out).total
    Sb, Sc = en(b), en(c)
    budget = RepairBudget(
        L=L,
        eta=eta,
        penalty=pen,
        energy_v=Sv,
        energy_b=Sb,
        energy_c=Sc,
        energy_d=en(d),
        energy_g=Sg,
        ramp_overhead=max(Sc - Sb, 0.0),
        cascade_energy=en(e),
        single_mode_energy=en(f),
        deficit_max=R,
        deficit_constant=C_hat,
        k0=float(k0),
        delta_hat=Sg - Sv - pen,
        theory_terms=(1 / (L * eta**1.5), eta ** (2.0 / 3.0), 1 / (L * eta ** (5.0 / 6.0))),
    )
    return RepairResult(out, budget, CoefficientField(freq, xg, c), CoefficientField(freq, xg, d), r)


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------


def certificate_terms(d: DeformationField, sigma_hat: float, eta: float | None = None) -> dict:
    """Pieces of ``L^2 (E_L - E_0) + delta_hat - sigma_hat``."""
    e = evaluate_EL(d)
    rep = repair(SlabField.from_deformation(d), eta)
    scaled = d.L**2 * (e.total - E0)
    return {
        "L": d.L,
        "scaled_excess": scaled,
        "delta_hat": rep.budget.delta_hat,
        "sigma_hat": sigma_hat,
        "certificate": scaled + rep.budget.delta_hat - sigma_hat,
        "budget": rep.budget,
        "energy": e,
    }


def lower_bound_certificate(d: DeformationField, sigma_hat: float, eta: float | None = None) -> float:
    """``L^2 (E_L(w, u3) - E_0) + delta_hat - sigma_hat``.

    ``delta_hat`` comes from repairing ``u3``.  Since
    ``L^2 (E_L - E_0) >= S(u3) + penalty(u3)`` and the repaired field is
    admissible, a nonnegative value means the lower-bound chain closes on
    this input.
    """
    return certificate_terms(d, sigma_hat, eta)["certificate"]
