"""Rate fitting and regularity diagnostics.

Helpers that turn convergence histories into fitted algebraic rates and
that evaluate the smoothness predictions for corner-singular data:

* :func:`fit_rate` fits ``value ~ C n^-slope`` on a log-log window;
* :func:`predicted_gamma` evaluates the best n-term exponent predictor;
* :func:`lemma_a1_check`, :func:`weighted_sobolev_finiteness` and
  :func:`sobolev_ceiling_check` probe the regularity of ``|x - nu|^-alpha``;
* :func:`best_nterm_reference` measures ``sigma_n`` on a fine uniform solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate

from .basis import best_n_term_curve, uniform_tree
from .discretize import QuadConfig, RightHandSide
from .surface import Surface

__all__ = [
    "RateFit",
    "RegularityParams",
    "GammaPrediction",
    "fit_rate",
    "default_window",
    "predicted_gamma",
    "point_singularity_params",
    "uniform_rate",
    "adaptive_rate",
    "lemma_a1_check",
    "FinitenessReport",
    "weighted_sobolev_finiteness",
    "sobolev_ceiling_check",
    "best_nterm_reference",
    "default_n_list",
]


# ---------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log value = intercept - slope * log n``."""

    slope: float
    intercept: float
    r2: float
    window: tuple

    def predict(self, n) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(n, dtype=float) ** (-self.slope)


def default_window(n_points: int) -> tuple:
    """Last two thirds of a history (at least three points)."""
    if n_points < 3:
        raise ValueError("a rate fit needs at least 3 points")
    start = min(n_points // 3, n_points - 3)
    return (start, n_points)


def fit_rate(history: Iterable, window: tuple | None = None) -> RateFit:
    """Fit an algebraic decay rate to ``(n, value)`` pairs.

    Args:
        history: Sequence of ``(n, value)`` pairs with positive entries.
        window: Half-open index range ``(start, stop)`` into ``history``;
            defaults to :func:`default_window`.

    Returns:
        The fitted :class:`RateFit`. A perfect power law gives ``r2 == 1``.

    Raises:
        ValueError: For fewer than three points or nonpositive entries.
    """
    pts = np.asarray([(float(n), float(v)) for n, v in history], dtype=float).reshape(-1, 2)
    if window is None:
        window = default_window(len(pts))
    lo, hi = int(window[0]), int(window[1])
    sel = pts[lo:hi]
    if len(sel) < 3:
        raise ValueError("a rate fit needs at least 3 points")
    if np.any(sel <= 0):
        raise ValueError("dof counts and values must be positive")
    x, y = np.log(sel[:, 0]), np.log(sel[:, 1])
    A = np.column_stack([np.ones_like(x), -x])
    (c, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ np.array([c, slope])
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(res @ res) / ss if ss > 0 else 1.0
    return RateFit(float(slope), float(c), r2, (lo, hi))


# ---------------------------------------------------------------------------
# rate predictors


@dataclass(frozen=True)
class RegularityParams:
    """Smoothness data for the best n-term predictor.

    ``s`` is the smoothness of the data, ``s_prime`` the smoothness in which
    the error is measured, ``p`` the integrability, ``k`` and ``rho`` the
    order and strength of the corner weights.
    """

    s: float
    s_prime: float = 0.0
    p: float = 2.0
    k: float = 1.0
    rho: float = 0.0

    @property
    def tau(self) -> float:
        return self.p

    def check(self) -> None:
        if not self.p > 0:
            raise ValueError("p > 0 violated")
        ip = 1.0 / self.p
        if not 0.5 - 1e-14 <= ip <= self.s / 2 + 0.5 + 1e-14:
            raise ValueError("admissibility 1/2 <= 1/p <= s/2 + 1/2 violated")
        if self.s_prime < 0:
            raise ValueError("s' >= 0 violated")
        if self.s - self.s_prime < 2 * (ip - 0.5) - 1e-14:
            raise ValueError("s - s' >= 2 (1/p - 1/2) violated")
        if self.rho < 0 or self.k < self.rho:
            raise ValueError("0 <= rho <= k violated")


@dataclass(frozen=True)
class GammaPrediction:
    alpha_star: float
    theta: float
    gamma_star: float
    #: upper bound for the specialised exponent, ``2 (1 - s'/s) min(rho, k - rho, s)``
    gamma_bound: float

    @property
    def rate(self) -> float:
        return self.gamma_star / 2


def predicted_gamma(params: RegularityParams) -> GammaPrediction:
    """Exponent ``gamma*`` with ``sigma_n <~ n^(-gamma*/2)``.

    ``alpha* = min(rho, k - rho, s - (1/p - 1/2))``,
    ``Theta = 1 - s' / (s - 2 (1/p - 1/2))`` and
    ``gamma* = s - s' + Theta (2 alpha* - s)``.
    """
    params.check()
    d = 1.0 / params.p - 0.5
    a_star = min(params.rho, params.k - params.rho, params.s - d)
    den = params.s - 2 * d
    theta = 1.0 - params.s_prime / den if den > 0 else 0.0
    gamma = params.s - params.s_prime + theta * (2 * a_star - params.s)
    bound = 2 * (1 - params.s_prime / params.s) * min(params.rho, params.k - params.rho, params.s) if params.s > 0 else 0.0
    return GammaPrediction(a_star, theta, gamma, bound)


def point_singularity_params(alpha: float, eps: float = 1e-3) -> RegularityParams:
    """Parameters for ``|x - nu|^-alpha`` measured in ``L2``: ``s = rho = 1 - alpha - eps``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    s = 1.0 - alpha - eps
    return RegularityParams(s=s, s_prime=0.0, p=2.0, k=1.0, rho=s)


def adaptive_rate(alpha: float) -> float:
    """Limit of the best n-term rate for the corner singularity, ``1 - alpha``."""
    return 1.0 - alpha


def uniform_rate(alpha: float) -> float:
    """Rate of uniform refinement, ``(1 - alpha) / 2``."""
    return (1.0 - alpha) / 2


# ---------------------------------------------------------------------------
# regularity checks


def lemma_a1_check(x, h, alpha: float, M: float) -> bool:
    """Test ``| |x|^-a - |x+h|^-a | >= (M^a - 2^a) |h|^-a``.

    Requires nonnegative components and ``0 < |x| <= |h| / M``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if alpha <= 0 or M <= 2:
        raise ValueError("need alpha > 0 and M > 2")
    if x.shape != h.shape or np.any(x < 0) or np.any(h < 0):
        raise ValueError("x and h must be nonnegative vectors of equal length")
    nx, nh = float(np.linalg.norm(x)), float(np.linalg.norm(h))
    if not 0 < nx <= nh / M * (1 + 1e-14):
        raise ValueError("need 0 < |x| <= |h| / M")
    lhs = abs(nx**-alpha - float(np.linalg.norm(x + h)) ** -alpha)
    rhs = (M**alpha - 2**alpha) * nh**-alpha
    return bool(lhs >= rhs * (1 - 1e-12))


@dataclass(frozen=True)
class FinitenessReport:
    predicate: bool
    exponent: float
    m_values: tuple
    integrals: tuple
    #: growth exponent per decade of the last increments (0 for log growth)
    growth: float
    divergent: bool

    @property
    def consistent(self) -> bool:
        return self.divergent == (not self.predicate)


def _radial_integral(alpha: float, rho: float, lo: float, hi: float) -> float:
    e = 1.0 - 2 * alpha - 2 * rho

    # substitute r = exp(u) to remove the endpoint singularity
    def f(u):
        r = math.exp(u)
        return (1 + r) ** (2 * rho) * r ** (e + 1)

    val, _ = integrate.quad(f, math.log(lo), math.log(hi), epsabs=0.0, epsrel=1e-12, limit=200)
    return val


def weighted_sobolev_finiteness(alpha: float, rho: float, r0: float = 1.0,
                                m_values: Sequence[int] = (10, 100, 1000, 10000),
                                growth_tol: float = 0.01) -> FinitenessReport:
    """Finiteness of the weighted norm of ``|x|^-alpha`` on a cone face.

    The norm reduces to ``int_0^R0 (1+r)^(2 rho) r^(1-2alpha-2rho) dr``.  The
    truncations at ``1/m`` are computed numerically; the divergence flag is
    raised when the increments between successive decades stop shrinking,
    i.e. their per-decade growth exponent exceeds ``-growth_tol``.
    """
    if not 0.5 <= alpha < 1:
        raise ValueError("alpha must lie in [1/2, 1)")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    m_values = tuple(int(m) for m in m_values)
    if len(m_values) < 3:
        raise ValueError("need at least three truncations")
    vals = tuple(_radial_integral(alpha, rho, 1.0 / m, r0) for m in m_values)
    inc = np.diff(vals)
    decades = np.diff(np.log10(m_values))
    growth = float(np.log10(inc[-1] / inc[-2]) / decades[-1])
    return FinitenessReport(
        predicate=rho < 1 - alpha,
        exponent=1 - 2 * alpha - 2 * rho,
        m_values=m_values,
        integrals=vals,
        growth=growth,
        divergent=growth > -growth_tol,
    )


def _corner_face(surface: Surface, nu) -> tuple:
    """Side lengths of a patch having ``nu`` as a corner, oriented away from it."""
    nu = np.asarray(nu, dtype=float)
    for p in surface.patches:
        o, e1, e2 = (np.asarray(v, dtype=float) for v in (p.origin, p.e1, p.e2))
        for c in (o, o + e1, o + e2, o + e1 + e2):
            if np.linalg.norm(c - nu) < 1e-12:
                if abs(np.dot(e1, e2)) > 1e-12 * np.linalg.norm(e1) * np.linalg.norm(e2):
                    continue
                return float(np.linalg.norm(e1)), float(np.linalg.norm(e2))
    raise ValueError(f"no rectangular patch has {tuple(nu)} as a corner")


def _difference_norm(alpha: float, t: float, L1: float, L2: float) -> float:
    """``|| g(. + h) - g ||_L2`` over ``{x in [0,L1]x[0,L2] : x + h inside}``, ``g = |x|^-alpha``.

    ``h`` has length ``t`` along the diagonal.  Polar coordinates around the
    corner make the integrand bounded in ``phi`` and integrable in ``r``.
    """
    h = t / math.sqrt(2.0)
    a, b = L1 - h, L2 - h

    def inner(phi):
        c, s = math.cos(phi), math.sin(phi)
        rmax = min(a / c if c > 0 else math.inf, b / s if s > 0 else math.inf)

        def f(r):
            x, y = r * c, r * s
            d = (x**2 + y**2) ** (-alpha / 2) - ((x + h) ** 2 + (y + h) ** 2) ** (-alpha / 2)
            return d * d * r

        pts = [p for p in (t, 10 * t) if p < rmax]
        val, _ = integrate.quad(f, 0.0, rmax, points=pts or None, epsabs=0.0, epsrel=1e-10, limit=200)
        return val

    pk = math.atan2(b, a)
    v1, _ = integrate.quad(inner, 0.0, pk, epsabs=0.0, epsrel=1e-9, limit=200)
    v2, _ = integrate.quad(inner, pk, math.pi / 2, epsabs=0.0, epsrel=1e-9, limit=200)
    return math.sqrt(v1 + v2)


def sobolev_ceiling_check(surface: Surface, alpha: float, t_list: Iterable[float],
                          nu=(0.5, 0.5, 0.5)) -> list:
    """``[(t, ||Delta_h g|| / t^(1-alpha))]`` on a face touching the singular corner.

    Bounded-below ratios show ``omega(g, t)_2 >~ t^(1-alpha)``, hence
    ``g`` is not in ``H^s`` for ``s >= 1 - alpha``.
    """
    if not 0.5 <= alpha < 1:
        raise ValueError("alpha must lie in [1/2, 1)")
    L1, L2 = _corner_face(surface, nu)
    t_max = min(L1, L2)
    out = []
    for t in t_list:
        t = float(t)
        if not 0 < t < t_max:
            raise ValueError(f"t must lie in (0, {t_max})")
        out.append((t, _difference_norm(alpha, t, L1, L2) / t ** (1 - alpha)))
    return out


# ---------------------------------------------------------------------------
# best n-term reference


def default_n_list(n_dofs: int, n_patches: int, points: int = 12) -> list:
    """Geometric grid from ``4 * n_patches`` to a quarter of the reference size."""
    lo, hi = 4 * n_patches, max(n_dofs // 4, 4 * n_patches + 1)
    return sorted({int(round(v)) for v in np.geomspace(lo, hi, points)})


def best_nterm_reference(surface: Surface, g: RightHandSide, j_ref: int,
                         n_list: Iterable[int] | None = None, quad: QuadConfig = QuadConfig(),
                         fast=None, solver_opts: dict | None = None) -> list:
    """``[(n, sigma_n)]`` of the Galerkin solution on the uniform tree of depth ``j_ref``.

    The uniform tree holds levels ``0..j_ref`` (``n_patches * 4^(j_ref+1)`` dofs).
    """
    from .layer import ApplyParams
    from .solver import LEVEL_LIMIT, RhsApproximator, SolverConfig, solve_galerkin

    if not 0 <= j_ref < LEVEL_LIMIT:
        raise ValueError(f"j_ref must lie in [0, {LEVEL_LIMIT})")
    tree = uniform_tree(surface.n_patches, j_ref + 1)
    cfg = SolverConfig(quad=quad, fast=fast or ApplyParams(), **(solver_opts or {}))
    rhs = RhsApproximator(surface, g, quad, LEVEL_LIMIT)
    u = solve_galerkin(surface, tree, rhs.exact(tree.keys), cfg)
    if n_list is None:
        n_list = default_n_list(len(tree), surface.n_patches)
    return best_n_term_curve(u, n_list)
