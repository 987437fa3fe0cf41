"""Self-check suites run by ``awbem verify``.

Each suite returns a list of :class:`Check` results; a suite passes when
every check passes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .analysis import lemma_a1_check, sobolev_ceiling_check, weighted_sobolev_finiteness
from .basis import (
    Kind,
    WaveletIndex,
    evaluate,
    haar_analysis,
    haar_synthesis,
    uniform_tree,
)
from .discretize import RightHandSide, SingularEvaluationError, galerkin_matrix_dense, solid_angle
from .surface import make_cube, make_fichera

__all__ = ["Check", "SUITES", "run_suite", "format_table"]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


def _rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# quadrature


def _total_solid_angle(surface, x) -> float:
    return sum(solid_angle(p.corners, x) for p in surface.patches)


def _fichera_interior(rng, n):
    out = []
    while len(out) < n:
        x = rng.uniform(0.02, 0.98, 3)
        if np.any(x > 0.52):
            out.append(x)
    return np.array(out)


def _fichera_exterior(rng, n):
    half = n // 2
    notch = rng.uniform(0.02, 0.48, (half, 3))
    far = rng.uniform(-2.0, 3.0, (4 * n, 3))
    far = far[np.any((far < -0.02) | (far > 1.02), axis=1)][: n - half]
    return np.vstack([notch, far])


def gauss_closure(n_points: int = 200, tol: float = 1e-10, seed: int = 0) -> list:
    """Solid angles summed over all patches: ``4 pi`` inside, ``0`` outside."""
    rng = _rng(seed)
    checks = []
    for name, surf, inner, outer in (
        ("fichera", make_fichera(), _fichera_interior(rng, n_points), _fichera_exterior(rng, n_points)),
        ("cube", make_cube(), rng.uniform(-0.98, 0.98, (n_points, 3)), None),
    ):
        if outer is None:
            pts = rng.uniform(-4.0, 4.0, (8 * n_points, 3))
            outer = pts[np.any(np.abs(pts) > 1.02, axis=1)][:n_points]
        e_in = max(abs(_total_solid_angle(surf, x) - 4 * math.pi) for x in inner)
        e_out = max(abs(_total_solid_angle(surf, x)) for x in outer)
        checks.append(Check(f"gauss closure interior ({name})", e_in <= tol, f"max err {e_in:.2e}"))
        checks.append(Check(f"gauss closure exterior ({name})", e_out <= tol, f"max err {e_out:.2e}"))
    return checks


def coplanar_zero(n_points: int = 200, seed: int = 1) -> list:
    """Points in a patch plane but off the patch see a zero solid angle."""
    rng = _rng(seed)
    surf = make_fichera()
    worst, singular_ok = 0.0, True
    for _ in range(n_points):
        p = surf.patches[rng.integers(surf.n_patches)]
        s, t = rng.uniform(-2.0, 3.0, 2)
        if 0.0 <= s <= 1.0 and 0.0 <= t <= 1.0:
            s += 2.0
        worst = max(worst, abs(solid_angle(p.corners, p.lift(s, t))))
    p = surf.patches[0]
    try:
        solid_angle(p.corners, p.lift(0.3, 0.6))
        singular_ok = False
    except SingularEvaluationError:
        pass
    return [
        Check("coplanar pairs vanish exactly", worst == 0.0, f"max |omega| {worst:.1e}"),
        Check("point on panel is rejected", singular_ok),
    ]


def additivity(n_points: int = 200, tol: float = 1e-12, seed: int = 2) -> list:
    """The solid angle of a panel equals the sum over its four quarters."""
    rng = _rng(seed)
    surf = make_fichera()
    worst = 0.0
    for _ in range(n_points):
        p = surf.patches[rng.integers(surf.n_patches)]
        x = p.centroid + rng.normal(size=3) * rng.uniform(0.05, 2.0)
        o, e1, e2 = p.origin, p.e1, p.e2
        whole = solid_angle(p.corners, x)
        parts = 0.0
        for a in (0, 1):
            for b in (0, 1):
                c0 = o + 0.5 * (a * e1 + b * e2)
                q = np.array([c0, c0 + 0.5 * e1, c0 + 0.5 * (e1 + e2), c0 + 0.5 * e2])
                parts += solid_angle(q, x)
        worst = max(worst, abs(whole - parts))
    return [Check("solid angle additivity", worst <= tol, f"max err {worst:.2e}")]


def quadrature_suite() -> list:
    return gauss_closure() + coplanar_zero() + additivity()


# ---------------------------------------------------------------------------
# basis


def _grid_values(lam: WaveletIndex, n_levels: int, jac: float) -> np.ndarray:
    n = 2**n_levels
    c = (np.arange(n) + 0.5) / n
    s, t = np.meshgrid(c, c, indexing="ij")
    return evaluate(lam, s, t, jac)


def _random_index(rng, max_level: int) -> WaveletIndex:
    j = int(rng.integers(-1, max_level + 1))
    if j < 0:
        return WaveletIndex.scaling(0)
    n = 2**j
    kind = [Kind.HORIZ, Kind.VERT, Kind.DIAG][int(rng.integers(3))]
    return WaveletIndex.make(0, j, int(rng.integers(n)), int(rng.integers(n)), kind)


def basis_suite(n_pairs: int = 300, tol: float = 1e-12, seed: int = 3) -> list:
    rng = _rng(seed)
    jac = 0.75
    J = 7
    cell = jac / 4.0**J
    worst_on = 0.0
    for _ in range(n_pairs):
        a, b = _random_index(rng, 6), _random_index(rng, 6)
        ip = float(np.sum(_grid_values(a, J, jac) * _grid_values(b, J, jac)) * cell)
        worst_on = max(worst_on, abs(ip - (1.0 if a == b else 0.0)))
    worst_vm = 0.0
    for j in range(4):
        for kind in (Kind.HORIZ, Kind.VERT, Kind.DIAG):
            for k in range(2**j):
                lam = WaveletIndex.make(0, j, k, (3 * k) % 2**j, kind)
                worst_vm = max(worst_vm, abs(float(np.sum(_grid_values(lam, J, jac)) * cell)))
    vals = rng.normal(size=(2**6, 2**6))
    coef = haar_analysis(vals, jac)
    energy = float(np.sum(vals**2) * jac / 4.0**6)
    parseval = abs(coef.norm() ** 2 - energy) / energy
    back = haar_synthesis(coef, 6, jac)
    roundtrip = float(np.max(np.abs(back - vals)))
    coef2 = haar_analysis(back, jac)
    rt2 = float(np.max(np.abs(coef2.values_on(coef.keys) - coef.values)))
    return [
        Check("orthonormality (level-7 grid)", worst_on <= tol, f"max dev {worst_on:.2e}"),
        Check("vanishing moments", worst_vm <= tol, f"max |int psi| {worst_vm:.2e}"),
        Check("parseval", parseval <= tol, f"rel dev {parseval:.2e}"),
        Check("synthesis o analysis = id", roundtrip <= tol, f"max dev {roundtrip:.2e}"),
        Check("analysis o synthesis = id", rt2 <= tol, f"max dev {rt2:.2e}"),
    ]


# ---------------------------------------------------------------------------
# regularity checks


def lemma_a1_suite(n_samples: int = 10_000, seed: int = 4) -> Check:
    rng = _rng(seed)
    fails = 0
    for i in range(n_samples):
        d = 1 + i % 3
        alpha = rng.uniform(0.05, 3.0)
        M = rng.uniform(2.01, 20.0)
        h = rng.uniform(0.0, 1.0, d) + 1e-3
        x = rng.uniform(0.0, 1.0, d) + 1e-9
        x *= rng.uniform(1e-3, 1.0) * np.linalg.norm(h) / (M * np.linalg.norm(x))
        fails += not lemma_a1_check(x, h, alpha, M)
    return Check("power-difference inequality (randomized)", fails == 0, f"{fails} violations in {n_samples}")


def finiteness_grid() -> list:
    """20 ``(alpha, rho)`` pairs on both sides of ``rho = 1 - alpha``."""
    out = []
    for alpha in (0.5, 0.6, 0.7, 0.8, 0.9):
        c = 1 - alpha
        out += [(alpha, 0.0), (alpha, 0.5 * c), (alpha, c), (alpha, c + 0.1)]
    return out


def finiteness_suite() -> Check:
    bad = [(a, r) for a, r in finiteness_grid() if not weighted_sobolev_finiteness(a, r).consistent]
    return Check("weighted Sobolev finiteness grid", not bad, f"mismatches {bad}" if bad else "20/20 consistent")


def ceiling_suite(t_list=(1e-1, 1e-2, 1e-3), factor: float = 3.0) -> list:
    surf = make_fichera()
    out = []
    for alpha in (0.5, 0.75):
        r = [v for _, v in sobolev_ceiling_check(surf, alpha, t_list)]
        spread = max(r) / min(r)
        out.append(Check(f"modulus ratio bounded (alpha={alpha})", min(r) > 0 and spread <= factor, f"spread {spread:.3f}"))
    return out


def appendix_suite() -> list:
    return [lemma_a1_suite(), finiteness_suite()] + ceiling_suite()


# ---------------------------------------------------------------------------
# oracle


def constant_density_check(tol: float = 5e-3) -> Check:
    """``g = 1`` on the cube, uniform level 2: the density is the constant 1."""
    from .solver import RhsApproximator, SolverConfig, solve_galerkin

    surf = make_cube()
    tree = uniform_tree(surf.n_patches, 3)
    cfg = SolverConfig()
    rhs = RhsApproximator(surf, RightHandSide.constant(), cfg.quad)
    u = solve_galerkin(surf, tree, rhs.exact(tree.keys), cfg)
    one = rhs.exact(tree.keys)  # coefficients of the constant 1
    err = (u - one).norm()
    return Check("constant density oracle", err <= tol, f"|u - 1| = {err:.2e}")


def dense_oracle_checks(delta: float = 1e-4, tol: float = 1e-8) -> list:
    """Fast apply and Krylov solve against the dense Galerkin matrix."""
    from .basis import CoeffVector
    from .solver import Applier, RhsApproximator, SolverConfig, solve_galerkin

    surf = make_cube()
    src = uniform_tree(surf.n_patches, 3)
    rng = _rng(5)
    v = CoeffVector(src.keys, rng.normal(size=len(src)))
    A = galerkin_matrix_dense(surf, src)
    w = Applier(surf, v, SolverConfig().fast)(delta, src.keys)
    err_apply = float(np.linalg.norm(w.values_on(src.keys) - A @ v.values))
    fsurf = make_fichera()
    tree = uniform_tree(fsurf.n_patches, 2)
    # GMRES on the assembled matrix against an independent LU factorization
    cfg = SolverConfig()
    rhs = RhsApproximator(fsurf, RightHandSide.point(0.5), cfg.quad)
    f = rhs.exact(tree.keys)
    u = solve_galerkin(fsurf, tree, f, cfg)
    ref = np.linalg.solve(galerkin_matrix_dense(fsurf, tree, cfg.quad), f.values_on(tree.keys))
    err_solve = float(np.linalg.norm(u.values_on(tree.keys) - ref))
    return [
        Check("apply vs dense", err_apply <= delta, f"err {err_apply:.2e} (delta {delta:g})"),
        Check("solve vs dense LU", err_solve <= tol, f"err {err_solve:.2e}"),
    ]


def oracle_suite() -> list:
    return [constant_density_check()] + dense_oracle_checks()


SUITES = {
    "quadrature": quadrature_suite,
    "basis": basis_suite,
    "appendix": appendix_suite,
    "oracle": oracle_suite,
}


def run_suite(name: str) -> tuple:
    """Run a named suite; returns ``(checks, seconds)``."""
    if name not in SUITES:
        raise KeyError(name)
    t0 = time.perf_counter()
    checks = SUITES[name]()
    return checks, time.perf_counter() - t0


def format_table(checks) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}" for c in checks]
    return "\n".join(lines)
