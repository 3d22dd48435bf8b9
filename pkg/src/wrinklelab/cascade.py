"""
Self-similar dyadic cascade of wrinkles.

The cascade is an explicit admissible field with bounded energy: octave n
carries the wavenumber ``k_n = 2^n P`` with ``P = pi floor(L) / L`` and the
amplitude

    a_{k_n}(x) = P^{-1} 4^{-n} f(4^n x),

where the profile f is supported in [1/4, 4] and satisfies

    f(t)^2 + f(4t)^2 / 4 = 2t    for t in [1/4, 1].

Two consecutive octaves overlap at every x, and the identity above makes
their constraint contributions add up to exactly 2x.  The field serves as
the solver initializer, a feasibility oracle and the deficit compensator
of the repair construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import CoefficientField, FrequencyGrid, XGrid

MOMENT_ORDERS = ((0, 0), (1, 0), (0, 2), (1, 1), (2, 0), (1, 2))


class ModeCapError(ValueError):
    """The frequency grid is too small for the requested construction."""

    def __init__(self, msg: str, required_M: int):
        super().__init__(msg)
        self.required_M = required_M


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------


def smoothstep5(u, nu: int = 0):
    """Quintic smoothstep ``6u^5 - 15u^4 + 10u^3`` clipped to [0, 1], or its derivatives."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0) & (u < 1)
    uc = np.clip(u, 0.0, 1.0)
    if nu == 0:
        return uc**3 * (10 - 15 * uc + 6 * uc**2)
    if nu == 1:
        return np.where(inside, 30 * uc**2 * (1 - uc) ** 2, 0.0)
    if nu == 2:
        return np.where(inside, 60 * uc * (1 - uc) * (1 - 2 * uc), 0.0)
    raise ValueError("nu must be 0, 1 or 2")


def plateau(t, nu: int = 0):
    """C^2 plateau: 1 on [1/2, 2], 0 outside [1/4, 4], quintic transitions."""
    t = np.asarray(t, dtype=float)
    rise = smoothstep5((t - 0.25) / 0.25, nu) * 4.0**nu
    fall = smoothstep5((4.0 - t) / 2.0, nu) * (-0.5) ** nu
    out = np.where(t < 0.5, rise, fall)
    if nu == 0:
        out = np.where((t >= 0.5) & (t <= 2.0), 1.0, out)
    else:
        out = np.where((t >= 0.5) & (t <= 2.0), 0.0, out)
    return out


@dataclass(frozen=True)
class CascadeProfile:
    """The profile ``f = sqrt(t) phi(t)`` with ``phi^2(t) + phi^2(4t) = 2`` on [1/4, 1].

    ``phi(t) = sqrt(2) pb(t) / sqrt(pb(t)^2 + pb(s)^2)`` where ``pb`` is the
    plateau and ``s = 4t`` on [1/4, 1], ``s = t/4`` on [1, 4].
    """

    def _parts(self, t):
        t = np.asarray(t, dtype=float)
        low = t <= 1.0
        s = np.where(low, 4.0 * t, t / 4.0)
        c = np.where(low, 4.0, 0.25)
        p, p1, p2 = (plateau(t, nu) for nu in range(3))
        q, q1, q2 = (plateau(s, nu) for nu in range(3))
        g = p * p + q * q
        g1 = 2 * p * p1 + 2 * c * q * q1
        g2 = 2 * p1 * p1 + 2 * p * p2 + 2 * c * c * (q1 * q1 + q * q2)
        support = (t > 0.25) & (t < 4.0)
        g = np.where(support, g, 1.0)
        return t, support, p, p1, p2, g, g1, g2

    def phi(self, t):
        t, support, p, *_, g, g1, g2 = self._parts(t)
        return np.where(support, np.sqrt(2.0) * p / np.sqrt(g), 0.0)

    def __call__(self, t, nu: int = 0):
        """Evaluate ``f`` (nu = 0) or its first two derivatives."""
        t, support, p, p1, p2, g, g1, g2 = self._parts(t)
        ts = np.where(support, t, 1.0)
        F = np.sqrt(2 * ts)
        G = p / np.sqrt(g)
        if nu == 0:
            out = F * G
        else:
            F1 = 1.0 / np.sqrt(2 * ts)
            G1 = p1 * g**-0.5 - 0.5 * p * g**-1.5 * g1
            if nu == 1:
                out = F1 * G + F * G1
            elif nu == 2:
                F2 = -0.5 / (np.sqrt(2.0) * ts**1.5)
                G2 = p2 * g**-0.5 - p1 * g**-1.5 * g1 + 0.75 * p * g**-2.5 * g1**2 - 0.5 * p * g**-1.5 * g2
                out = F2 * G + 2 * F1 * G1 + F * G2
            else:
                raise ValueError("nu must be 0, 1 or 2")
        return np.where(support, out, 0.0)


def build_profile() -> CascadeProfile:
    return CascadeProfile()


def identity_residual(profile: CascadeProfile, n: int = 10_000) -> float:
    """max |f^2(t) + f^2(4t)/4 - 2t| over an n-point grid of [1/4, 1]."""
    t = np.linspace(0.25, 1.0, n)
    return float(np.max(np.abs(profile(t) ** 2 + 0.25 * profile(4 * t) ** 2 - 2 * t)))


# ---------------------------------------------------------------------------
# cascade field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CascadePlan:
    """Octave bookkeeping of a cascade on a given x-grid.

    Attributes
    ----------
    P : float
        Base wavenumber ``pi floor(L) / L``.
    n0, n_max : int
        First and last populated octave.
    exact_until : float
        The constraint holds exactly on ``[0, exact_until] = [0, 4^-n0]``.
    support_end : float
        The field vanishes for ``x >= support_end = 4^(1-n0)``.
    truncation_x : float
        Octaves beyond n_max only live below this point (no grid nodes there
        except x = 0).
    truncation_deficit : float
        Largest pointwise constraint deficit caused by the omitted octaves,
        attained strictly inside (0, truncation_x).
    required_M : int
        Mode index of the top octave.
    """

    L: float
    b: float
    P: float
    n0: int
    n_max: int
    exact_until: float
    support_end: float
    truncation_x: float
    truncation_deficit: float
    required_M: int

    @property
    def octaves(self) -> range:
        return range(self.n0, self.n_max + 1)

    def mode_index(self, n: int) -> int:
        return 2**n * int(math.floor(self.L))


def choose_n0(b: float) -> int:
    """Smallest n >= 0 with ``1/4 < 4^n b <= 1``."""
    if not 0 < b <= 1:
        raise ValueError("b must lie in (0, 1]")
    n = 0
    while 4.0**n * b <= 0.25:
        n += 1
    return n


def plan_cascade(L: float, b: float, xgrid: XGrid) -> CascadePlan:
    if L < 1:
        raise ValueError("L must be >= 1")
    n0 = choose_n0(b)
    x1 = xgrid.nodes[1]
    n_max = 0
    while 4.0**-n_max >= x1:
        n_max += 1
    n_max = max(n_max, n0)
    t = np.linspace(0.25, 4.0, 4001)
    fmax2 = float(np.max(build_profile()(t) ** 2))
    return CascadePlan(
        L=float(L),
        b=float(b),
        P=np.pi * math.floor(L) / L,
        n0=n0,
        n_max=n_max,
        exact_until=4.0**-n0,
        support_end=4.0 ** (1 - n0),
        truncation_x=4.0**-n_max,
        truncation_deficit=fmax2 * 4.0 ** -(n_max + 1),
        required_M=2**n_max * int(math.floor(L)),
    )


def build_cascade(L: float, b: float, xgrid: XGrid, freq: FrequencyGrid | None = None) -> CoefficientField:
    """Cascade field on the given grids.

    Parameters
    ----------
    L : float
        Half-period, at least 1.
    b : float
        The constraint holds exactly on [0, b] (in fact on [0, 4^-n0]).
    xgrid : XGrid
    freq : FrequencyGrid, optional
        Defaults to ``FrequencyGrid(L)``; must contain the top octave.

    Raises
    ------
    ModeCapError
        If the frequency grid cannot hold octave ``n_max``.
    """
    plan = plan_cascade(L, b, xgrid)
    freq = FrequencyGrid(L) if freq is None else freq
    if abs(freq.L - L) > 1e-12 * L:
        raise ValueError("frequency grid has a different L")
    if plan.required_M > freq.M:
        raise ModeCapError(
            f"cascade on this grid needs M >= {plan.required_M} (have {freq.M})", plan.required_M
        )
    f = build_profile()
    x = xgrid.nodes
    a = np.zeros((freq.M, len(x)))
    for n in plan.octaves:
        a[plan.mode_index(n) - 1] = f(4.0**n * x) / (plan.P * 4.0**n)
    a[:, 0] = 0.0
    return CoefficientField(freq, xgrid, a)


def cascade_moment(plan: CascadePlan, x, alpha: int, beta: int) -> np.ndarray:
    """Exact ``sum_k (d^alpha a_k)^2 k^(2 beta)`` of the continuum cascade at x."""
    f = build_profile()
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    # include a few octaves past n_max so small x is not truncated
    for n in range(plan.n0, plan.n_max + 8):
        kn = 2.0**n * plan.P
        dn = 4.0 ** (n * alpha) * f(4.0**n * x, alpha) / (plan.P * 4.0**n)
        out += dn**2 * kn ** (2 * beta)
    return out


@dataclass(frozen=True)
class MomentReport:
    """Fitted constants ``max_x moment / x^(2 - 2 alpha - beta)``."""

    constants: dict
    x_lo: float

    def as_rows(self):
        return [{"alpha": a, "beta": b, "C": c} for (a, b), c in self.constants.items()]


def field_moments(field: CoefficientField, alpha: int, beta: int) -> np.ndarray:
    """``sum_k (d^alpha a_k / dx^alpha)^2 k^(2 beta)`` on nodes from node-based differences."""
    a = field.a
    if alpha == 0:
        d = a
    elif alpha == 1:
        d = (field.xgrid.D1 @ a.T).T
    elif alpha == 2:
        d = (field.xgrid.D2 @ a.T).T
    else:
        raise ValueError("alpha must be 0, 1 or 2")
    m = (field.k ** (2 * beta)) @ (d * d)
    if alpha == 2:
        m[0] = m[-1] = np.nan
    return m


def verify_cascade_bounds(field: CoefficientField, x_lo: float = 0.0) -> MomentReport:
    """Fitted constants for the six derivative moments of a cascade field.

    Ratios ``moment / x^(2 - 2 alpha - beta)`` are maximized over nodes with
    ``x >= x_lo`` (and x > 0).  Second x-derivatives are taken on interior
    nodes only.
    """
    x = field.x
    sel = (x > 0) & (x >= x_lo)
    out = {}
    for alpha, beta in MOMENT_ORDERS:
        m = field_moments(field, alpha, beta)
        ratio = m[sel] / x[sel] ** (2 - 2 * alpha - beta)
        ratio = ratio[np.isfinite(ratio)]
        out[(alpha, beta)] = float(ratio.max(initial=0.0))
    return MomentReport(out, x_lo)
