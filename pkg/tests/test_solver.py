import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awbem.basis import (
    CoeffVector,
    Tree,
    WaveletIndex,
    ancestors_closure,
    decode,
    key_levels,
    parent_keys,
    root_keys,
    uniform_tree,
)
from awbem.discretize import RightHandSide, apply_dense, galerkin_matrix_dense
from awbem.layer import ApplyParams
from awbem.solver import (
    HISTORY_HEADER,
    Applier,
    ConvergenceRecord,
    PartialResultError,
    RhsApproximator,
    RhsCertificationError,
    SolverConfig,
    SolverError,
    SolverState,
    apply,
    coarse,
    estimate_residual,
    greedy_truncate,
    operator_norm_bound,
    rhs_approx,
    solve,
    solve_adaptive,
    solve_galerkin,
    solve_uniform,
    write_history_csv,
)
from awbem.surface import CUBE_TOP, make_cube, make_fichera

CUBE = make_cube()
FICHERA = make_fichera()


def ones_on(surface, keys):
    """Coefficients of the constant 1 (scaling entries sqrt(area))."""
    roots = keys[key_levels(keys) < 0]
    vals = [math.sqrt(surface.patches[int(p)].jacobian) for p in decode(roots)[0]]
    return CoeffVector(roots, vals)


def test_config_defaults_and_validation():
    cfg = SolverConfig()
    assert (cfg.omega, cfg.theta) == (0.4, 0.3)
    assert (cfg.gmres_restart, cfg.gmres_tol, cfg.gmres_maxiter) == (50, 1e-8, 500)
    for bad in ({"omega": 1.0}, {"theta": 0.0}, {"eps": 0.0}, {"mode": "lazy"}, {"j_max": 99}, {"delta_init": -1.0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    assert cfg.replace(eps=0.5).eps == 0.5


def test_solve_galerkin_zero_rhs():
    tree = uniform_tree(CUBE.n_patches, 2)
    assert len(solve_galerkin(CUBE, tree, CoeffVector())) == 0


def test_solve_galerkin_constant_density():
    tree = uniform_tree(CUBE.n_patches, 3)
    one = ones_on(CUBE, tree.keys)
    u = solve_galerkin(CUBE, tree, one)
    assert (u - one).norm() <= 5e-3


def test_solve_galerkin_matches_dense_lu():
    tree = uniform_tree(FICHERA.n_patches, 2)
    ra = RhsApproximator(FICHERA, RightHandSide.point(0.5))
    f = ra.exact(tree.keys)
    u = solve_galerkin(FICHERA, tree, f)
    ref = np.linalg.solve(galerkin_matrix_dense(FICHERA, tree), f.values_on(tree.keys))
    assert np.linalg.norm(u.values_on(tree.keys) - ref) <= 1e-8


def test_solve_galerkin_fast_operator_path():
    # above dense_max the compressed operator and GMRES tolerance are used
    tree = uniform_tree(CUBE.n_patches, 3)
    f = RhsApproximator(CUBE, RightHandSide.cartoon()).exact(tree.keys)
    cfg = SolverConfig(dense_max=0)
    u = solve_galerkin(CUBE, tree, f, cfg)
    A = galerkin_matrix_dense(CUBE, tree)
    b = f.values_on(tree.keys)
    assert np.linalg.norm(A @ u.values_on(tree.keys) - b) <= 1e-3 * np.linalg.norm(b)


def test_solve_galerkin_errors():
    tree = uniform_tree(CUBE.n_patches, 2)
    with pytest.raises(ValueError):
        solve_galerkin(CUBE, uniform_tree(6, 1), ones_on(CUBE, tree.keys) + CoeffVector([tree.keys[-1]], [1.0]))
    f = RhsApproximator(CUBE, RightHandSide.cartoon()).exact(tree.keys)
    with pytest.raises(SolverError) as exc:
        solve_galerkin(CUBE, tree, f, SolverConfig(gmres_restart=1, gmres_maxiter=1, dense_max=0, gmres_tol=1e-12))
    assert exc.value.residual > 1e-12


def test_apply_examples():
    tree = uniform_tree(CUBE.n_patches, 3)
    assert len(apply(CUBE, 1e-3, CoeffVector())) == 0
    rng = np.random.default_rng(0)
    v = CoeffVector(tree.keys, rng.normal(size=len(tree)))
    assert operator_norm_bound(CUBE) < 2.0
    half = apply(CUBE, 2.0 * v.norm(), v, targets=tree)
    assert np.array_equal(half.values_on(tree.keys), 0.5 * v.values)
    w = apply(CUBE, 1e-4, v, targets=tree)
    ref = apply_dense(CUBE, tree, v)
    assert (w - ref).norm() <= 1e-4
    with pytest.raises(ValueError):
        apply(CUBE, 0.0, v)


def test_apply_auto_grows_targets():
    v = ones_on(FICHERA, root_keys(12)) + CoeffVector([WaveletIndex.make(9, 2, 3, 3, "diag").key], [0.3])
    w = Applier(FICHERA, v).auto(1e-3)
    assert np.all(np.isin(v.keys, w.keys))
    Tree(w.keys, 12).validate()
    assert len(w) > len(v)


def test_rhs_constant_is_exact_on_roots():
    f = rhs_approx(CUBE, RightHandSide.constant(), 1e-6)
    assert np.array_equal(f.keys, root_keys(6))
    assert np.allclose(f.values, 2.0, rtol=1e-14)


def test_rhs_cartoon_vanishes_off_the_disc():
    ra = RhsApproximator(CUBE, RightHandSide.cartoon())
    f = ra.approx(0.05)
    patches = decode(f.keys)[0]
    assert np.all(patches[np.abs(f.values) > 0] == CUBE_TOP)
    c = ra.coefficients()
    # zeros are not stored, so every stored coefficient sits on the top face
    assert np.all(decode(c.keys)[0] == CUBE_TOP)


def test_rhs_point_tail_certified():
    ra = RhsApproximator(FICHERA, RightHandSide.point(0.5), j_max=7)
    f = ra.approx(0.1)
    assert ra.tail_bound() <= 0.05
    norms = ra.level_norms()
    assert np.all(np.diff(np.log(norms[2:])) < 0)
    assert 0 < ra.decay_ratio() <= RhsApproximator.RHO_CAP
    assert key_levels(f.keys).max() <= 7


def test_rhs_certification_errors():
    ra = RhsApproximator(FICHERA, RightHandSide.point(0.5), start_levels=4)
    ra.coef = ra.coef * (8.0 ** ra.levels)[:, None]
    with pytest.raises(RhsCertificationError) as exc:
        ra.decay_ratio()
    assert exc.value.level_norms is not None
    capped = RhsApproximator(FICHERA, RightHandSide.point(0.75), j_max=4)
    with pytest.raises(RhsCertificationError):
        capped.approx(1e-3)


def test_rhs_cache_round_trip(tmp_path):
    g = RightHandSide.point(0.5)
    ra = RhsApproximator(FICHERA, g)
    f = ra.approx(0.05)
    path = tmp_path / "rhs.npz"
    ra.save_cache(path)
    fresh = RhsApproximator(FICHERA, g)
    assert fresh.load_cache(path)
    assert len(fresh.store.keys) == len(ra.store.keys)
    f2 = fresh.approx(0.05)
    assert np.array_equal(f.keys, f2.keys) and np.array_equal(f.values, f2.values)
    other = RhsApproximator(FICHERA, RightHandSide.point(0.75))
    assert not other.load_cache(path)


def test_greedy_truncate_budget():
    rng = np.random.default_rng(4)
    keys = uniform_tree(12, 3).keys
    v = CoeffVector(keys, rng.normal(size=keys.size) * 0.1)
    t = greedy_truncate(v, 0.3, 12)
    assert (v - t).norm() <= 0.3
    Tree(t.keys, 12).validate()


# -- estimate_residual


def _state_on_roots(surface, g, cfg):
    rhs = RhsApproximator(surface, g, cfg.quad)
    tree = Tree(root_keys(surface.n_patches), surface.n_patches)
    u = solve_galerkin(surface, tree, rhs.exact(tree.keys), cfg)
    return SolverState(tree, u, delta=1.0), rhs


def test_estimate_residual_converged_guard():
    cfg = SolverConfig(eps=1e-3)
    state, rhs = _state_on_roots(CUBE, RightHandSide.constant(), cfg)
    r, delta = estimate_residual(CUBE, RightHandSide.constant(), state, cfg, rhs)
    assert r.norm() + delta <= cfg.eps


def test_estimate_residual_monotone_in_omega_and_band():
    g = RightHandSide.point(0.5)
    out = {}
    for om in (0.2, 0.8):
        cfg = SolverConfig(omega=om)
        state, rhs = _state_on_roots(FICHERA, g, cfg)
        out[om] = estimate_residual(FICHERA, g, state, cfg, rhs)
    assert out[0.2][1] <= out[0.8][1]
    om = 0.4
    cfg = SolverConfig(omega=om)
    state, rhs = _state_on_roots(FICHERA, g, cfg)
    r, delta = estimate_residual(FICHERA, g, state, cfg, rhs)
    assert delta <= om * r.norm()
    f = rhs.approx(delta / 4)
    w = Applier(FICHERA, state.u).auto(delta / 4)
    ratio = (f - w).norm() / r.norm()
    assert (1 - om) / (1 + om) <= ratio <= (1 + om) / (1 - om)


# -- coarse


def test_coarse_examples():
    roots = root_keys(4)
    r = CoeffVector(roots, [1.0, -2.0, 0.5, 3.0])
    assert np.array_equal(coarse(0.3, r, 4).keys, roots)
    deep = WaveletIndex.make(2, 5, 17, 3, "vert").key
    t = coarse(0.3, CoeffVector([deep], [1.0]), 4)
    expect = ancestors_closure(np.array([deep]), 4)
    assert np.array_equal(t.keys, expect)
    with pytest.raises(ValueError):
        coarse(0.3, CoeffVector(), 4)
    with pytest.raises(ValueError):
        coarse(1.0, r, 4)


def _minimal_tree_size(r: CoeffVector, theta: float, n_patches: int) -> int:
    """Exhaustive search over parent-closed subsets of the candidate tree."""
    roots = root_keys(n_patches)
    cand = ancestors_closure(r.keys, n_patches)
    inner = [k for k in cand if k not in set(roots)]
    par = {int(k): int(p) for k, p in zip(inner, parent_keys(np.array(inner, dtype=np.int64)))}
    val = dict(zip(r.keys.tolist(), (r.values**2).tolist()))
    need = (1 - theta**2) * float(np.dot(r.values, r.values))
    base = sum(val.get(int(k), 0.0) for k in roots)
    root_set = set(int(k) for k in roots)
    for size in range(len(inner) + 1):
        for sub in itertools.combinations(inner, size):
            s = set(int(k) for k in sub)
            if all(par[k] in s or par[k] in root_set for k in s):
                if base + sum(val.get(k, 0.0) for k in s) >= need - 1e-15:
                    return len(roots) + size
    return len(cand)


@pytest.mark.parametrize("seed", range(8))
def test_coarse_near_best_against_exhaustive(seed):
    rng = np.random.default_rng(seed)
    # one patch, levels 0..1 (16 non-root indices), sparse heavy tail
    keys = uniform_tree(1, 2).keys
    vals = rng.standard_cauchy(keys.size) * (rng.random(keys.size) < 0.7)
    r = CoeffVector(keys, vals)
    if len(r) == 0:
        return
    theta = 0.3
    t = coarse(theta, r, 1)
    dropped = r.norm() ** 2 - np.sum(r.values_on(t.keys) ** 2)
    assert math.sqrt(max(dropped, 0.0)) <= theta * r.norm() * (1 + 1e-12)
    best = _minimal_tree_size(r, theta, 1)
    depth_overhead = int(key_levels(t.keys).max()) + 1
    assert len(t) <= best + depth_overhead


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=5, max_size=200), st.floats(0.05, 0.95))
def test_coarse_retains_mass(vals, theta):
    keys = uniform_tree(2, 4).keys[: len(vals)]
    r = CoeffVector(keys, vals)
    if r.norm() == 0:
        return
    t = coarse(theta, r, 2)
    Tree(t.keys, 2).validate()
    kept = np.sum(r.values_on(t.keys) ** 2)
    assert r.norm() ** 2 - kept <= (theta * r.norm()) ** 2 * (1 + 1e-12)


# -- drivers


def test_adaptive_constant_density():
    st_ = solve_adaptive(CUBE, RightHandSide.constant(), SolverConfig(eps=1e-2))
    assert st_.converged
    assert len(st_.tree) <= 6 + 18
    assert (st_.u - ones_on(CUBE, st_.tree.keys)).norm() <= 5e-3


def test_uniform_dof_ladders():
    with pytest.raises(PartialResultError) as exc:
        solve_uniform(CUBE, RightHandSide.cartoon(), SolverConfig(mode="uniform", eps=1e-6, j_max=2))
    hist = exc.value.state.history
    assert [h.dofs for h in hist] == [24, 96, 384]
    assert all(h.dofs == 6 * (1 + 3 * sum(4**m for m in range(lev + 1))) for lev, h in enumerate(hist))
    with pytest.raises(PartialResultError) as exc:
        solve(FICHERA, RightHandSide.point(0.5), SolverConfig(mode="uniform", eps=1e-6, j_max=1))
    assert [h.dofs for h in exc.value.state.history] == [48, 192]


def test_adaptive_history_and_determinism(tmp_path):
    cfg = SolverConfig(eps=0.12, theta=0.6)
    runs = []
    for threads in (1, 4):
        c = cfg.replace(fast=ApplyParams(threads=threads))
        s = solve_adaptive(CUBE, RightHandSide.cartoon(), c)
        runs.append(s)
        dofs = [h.dofs for h in s.history]
        assert all(a < b for a, b in zip(dofs, dofs[1:]))
        bounds = [h.residual_norm * (1 + c.omega) for h in s.history]
        assert all(b < a for a, b in zip(bounds, bounds[1:]))
        s.tree.validate()
        assert np.all(np.isin(s.u.keys, s.tree.keys))
    a, b = runs
    assert [h.csv_row(False) for h in a.history] == [h.csv_row(False) for h in b.history]
    assert a.u.dumps() == b.u.dumps()
    path = tmp_path / "h.csv"
    write_history_csv(a.history, path, timing=False)
    lines = path.read_text().splitlines()
    assert lines[0] == HISTORY_HEADER
    assert len(lines) == len(a.history) + 1
    assert lines[1].split(",")[-1] == "0"


def test_partial_result_on_dof_cap():
    with pytest.raises(PartialResultError) as exc:
        solve_adaptive(FICHERA, RightHandSide.point(0.5), SolverConfig(eps=1e-3, max_dofs=60))
    assert exc.value.state.history
    assert exc.value.state.history[-1].dofs <= 60


def test_record_csv_row():
    rec = ConvergenceRecord(step=3, dofs=100, residual_norm=0.25, delta=0.01, wall_time=1.23456)
    assert rec.csv_row() == "3,100,2.5000000000e-01,1.0000000000e-02,1.235"
    assert rec.csv_row(timing=False).endswith(",0")
