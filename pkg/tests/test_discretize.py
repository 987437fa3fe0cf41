import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awbem.basis import CoeffVector, Kind, WaveletIndex, key_levels, uniform_tree
from awbem.discretize import (
    EntryCache,
    QuadConfig,
    RightHandSide,
    SingularEvaluationError,
    apply_dense,
    cell_integrals,
    corner_constant,
    galerkin_entry_K,
    galerkin_matrix_dense,
    rhs_coefficient,
    rhs_eval,
    solid_angle,
)
from awbem.surface import CUBE_TOP, make_cube, make_fichera
from awbem import verify

# Frozen oracle values (scipy adaptive quadrature of closed forms, see comments).
# int_{[0,1]^2} -1 / ((a-.5)^2 + (b-.5)^2 + 1)^{3/2}
SQUARE_SOLID_ANGLE = -0.8054316831613232
# top/side cube face scaling entry; inner integral by the rectangle arctan
# formula, outer by dblquad
PERP_FACE_ENTRY = -0.11113873321050181
# int over {1} x [0,1]^2 of |x - nu|^-1/2
POINT_SCALING_PATCH0 = 1.2571343577912142

CUBE = make_cube()
FICHERA = make_fichera()


def unit_square():
    return np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)


def test_solid_angle_examples():
    face = CUBE.patches[CUBE_TOP].corners
    assert solid_angle(face, [0, 0, 0]) == pytest.approx(4 * math.pi / 6, abs=1e-13)
    assert solid_angle(unit_square(), [3.0, 0.5, 0.0]) == 0.0
    assert solid_angle(unit_square(), [0.5, 0.5, 1.0]) == pytest.approx(SQUARE_SOLID_ANGLE, rel=1e-10)
    with pytest.raises(SingularEvaluationError):
        solid_angle(unit_square(), [0.5, 0.5, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3).filter(lambda z: abs(z) > 1e-3))
def test_solid_angle_bounded_and_antisymmetric(x, y, z):
    w = solid_angle(unit_square(), [x, y, z])
    assert abs(w) <= 2 * math.pi
    assert solid_angle(unit_square(), [x, y, -z]) == pytest.approx(-w, abs=1e-14)


def test_quadrature_identities():
    for check in verify.gauss_closure(n_points=100) + verify.coplanar_zero(50) + verify.additivity(100):
        assert check.passed, f"{check.name}: {check.detail}"


def test_perpendicular_entry_oracle():
    side = next(p.id for p in CUBE.patches if p.normal[0] > 0.5)
    val = galerkin_entry_K(CUBE, WaveletIndex.scaling(CUBE_TOP), WaveletIndex.scaling(side))
    assert val == pytest.approx(PERP_FACE_ENTRY, rel=1e-6)


def _indices(patch, max_level):
    out = [WaveletIndex.scaling(patch)]
    for j in range(max_level + 1):
        for k1 in range(2**j):
            for k2 in range(2**j):
                out += [WaveletIndex.make(patch, j, k1, k2, k) for k in (Kind.HORIZ, Kind.VERT, Kind.DIAG)]
    return out


@pytest.mark.parametrize("surface", [CUBE, FICHERA], ids=["cube", "fichera"])
def test_coplanar_annihilation_exhaustive(surface):
    idx = {p.id: _indices(p.id, 3) for p in surface.patches}
    n_pairs = 0
    for p in surface.patches:
        for q in surface.patches:
            if not surface.relations[p.id][q.id].coplanar:
                continue
            for a in idx[p.id]:
                for b in idx[q.id]:
                    assert galerkin_entry_K(surface, a, b) == 0.0
                    n_pairs += 1
    assert n_pairs >= surface.n_patches * 256**2


def test_coplanar_cells_vanish_without_shortcut():
    # the kernel itself annihilates coplanar pairs, not only the relation table
    from awbem.discretize import pair_integrals

    p, q = FICHERA.patches[0], FICHERA.patches[1]
    same_plane = [(i, j) for i in range(12) for j in range(12)
                  if i != j and FICHERA.relations[i][j].coplanar]
    assert same_plane
    for i, j in same_plane:
        p, q = FICHERA.patches[i], FICHERA.patches[j]
        v = pair_integrals(p.origin, p.e1, p.e2, q.origin, q.e1, q.e2)
        assert v[0] == 0.0


@pytest.fixture(scope="module")
def cube_level2():
    tree = uniform_tree(CUBE.n_patches, 3)
    return tree, galerkin_matrix_dense(CUBE, tree)


def test_gauss_row_identity(cube_level2):
    tree, A = cube_level2
    one = CoeffVector(tree.keys[key_levels(tree.keys) < 0], [math.sqrt(p.jacobian) for p in CUBE.patches])
    K_one = (0.5 * np.eye(len(tree)) - A) @ one.values_on(tree.keys)
    assert np.max(np.abs(K_one + 0.5 * one.values_on(tree.keys))) < 1e-6


def test_apply_dense_examples(cube_level2):
    tree, A = cube_level2
    assert len(apply_dense(CUBE, tree, CoeffVector(), matrix=A)) == 0
    one = CoeffVector(tree.keys[key_levels(tree.keys) < 0], [2.0] * 6)
    assert (apply_dense(CUBE, tree, one, matrix=A) - one).norm() <= 2e-3
    rng = np.random.default_rng(0)
    v = CoeffVector(tree.keys, rng.normal(size=len(tree)))
    w = apply_dense(CUBE, tree, v, matrix=A)
    assert np.max(np.abs(w.values_on(tree.keys) - A @ v.values)) <= 1e-14
    with pytest.raises(ValueError):
        apply_dense(CUBE, uniform_tree(6, 1), v, matrix=A)


def test_entry_decay(cube_level2):
    tree, A = cube_level2
    idx = [WaveletIndex.from_key(k) for k in tree.keys]

    def center(lam):
        h = 2.0 ** -lam.level
        k1, k2 = lam.pos
        return CUBE.patches[lam.patch].lift((k1 + 0.5) * h, (k2 + 0.5) * h)

    sel = np.flatnonzero(key_levels(tree.keys) == 2)
    cs = np.array([center(idx[i]) for i in sel])
    C = 0.0
    for a, i in enumerate(sel):
        d = np.linalg.norm(cs - cs[a], axis=1)
        m = d >= 1.0
        C = max(C, float(np.max(np.abs(A[i, sel[m]]) * 16**2 * d[m] ** 4)))
    # level 2 does not realize every relative position; allow a factor 2
    C *= 2.0
    rng = np.random.default_rng(1)
    kinds = (Kind.HORIZ, Kind.VERT, Kind.DIAG)
    for j in (3, 4):
        n, seen = 2**j, 0
        while seen < 150:
            a = WaveletIndex.make(int(rng.integers(6)), j, *map(int, rng.integers(0, n, 2)), kinds[rng.integers(3)])
            b = WaveletIndex.make(int(rng.integers(6)), j, *map(int, rng.integers(0, n, 2)), kinds[rng.integers(3)])
            d = float(np.linalg.norm(center(a) - center(b)))
            if d < 1.0:
                continue
            seen += 1
            assert abs(galerkin_entry_K(CUBE, a, b)) <= C * 16.0**-j * d**-4


def test_quadrature_order_convergence():
    # doubling the outer order moves level <= 2 entries by <= 1e-8 of the
    # entry scale; the near-field depth must be deep enough for the edge cells
    ref = QuadConfig(order=6, near_depth=10)
    dbl = QuadConfig(order=12, near_depth=10)
    rng = np.random.default_rng(2)
    kinds = (Kind.HORIZ, Kind.VERT, Kind.DIAG)
    pairs = [(WaveletIndex.make(3, 1, 0, 0, "diag"), WaveletIndex.make(6, 1, 0, 0, "vert")),
             (WaveletIndex.scaling(9), WaveletIndex.scaling(10)),
             (WaveletIndex.make(9, 2, 3, 3, "diag"), WaveletIndex.make(10, 2, 3, 3, "diag"))]
    for _ in range(12):
        p, q = rng.integers(12, size=2)
        ja, jb = rng.integers(0, 3, size=2)
        pairs.append((WaveletIndex.make(int(p), int(ja), *map(int, rng.integers(0, 2**ja, 2)), kinds[rng.integers(3)]),
                      WaveletIndex.make(int(q), int(jb), *map(int, rng.integers(0, 2**jb, 2)), kinds[rng.integers(3)])))
    scale = 0.0
    diffs = []
    for a, b in pairs:
        v1 = galerkin_entry_K(FICHERA, a, b, ref)
        v2 = galerkin_entry_K(FICHERA, a, b, dbl)
        scale = max(scale, abs(v2))
        diffs.append(abs(v1 - v2))
    assert max(diffs) <= 1e-8 * scale


def test_entry_cache_bit_identical_and_dump(tmp_path):
    cache = EntryCache(FICHERA)
    a, b = WaveletIndex.make(0, 1, 1, 0, "horiz"), WaveletIndex.scaling(4)
    v = cache.get(a, b)
    assert cache.get(a, b) == v and len(cache) == 1
    assert cache.order_of(a, b) == QuadConfig().order
    out = []
    threads = [threading.Thread(target=lambda: out.append(cache.get(b, a))) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(out)) == 1
    path = tmp_path / "entries.bin"
    cache.dump(path)
    raw = path.read_bytes()
    assert int.from_bytes(raw[:8], "little") == 2 and len(raw) == 8 + 2 * 28
    fresh = EntryCache(FICHERA)
    fresh.load(path)
    assert fresh.get(a, b) == v


def test_quad_config_validation():
    with pytest.raises(ValueError):
        QuadConfig(order=0)
    with pytest.raises(ValueError):
        QuadConfig(near_depth=-1)


def test_rhs_eval_examples():
    g = RightHandSide.point(0.5)
    assert rhs_eval(g, [1, 1, 1]) == pytest.approx(0.75**-0.25)
    c = RightHandSide.cartoon()
    assert rhs_eval(c, [0, 0, 1]) == 1.0
    assert rhs_eval(c, [1, 1, 1]) == 0.0
    with pytest.raises(SingularEvaluationError):
        rhs_eval(g, [0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        RightHandSide.point(1.0)
    with pytest.raises(ValueError):
        RightHandSide.point(0.5).check_surface(CUBE)


def test_rhs_coefficient_examples():
    c = RightHandSide.cartoon()
    assert rhs_coefficient(CUBE, c, WaveletIndex.scaling(CUBE_TOP)) == pytest.approx(math.pi / 4, rel=1e-12)
    for k in ("horiz", "vert", "diag"):
        assert rhs_coefficient(CUBE, c, WaveletIndex.make(CUBE_TOP, 3, 3, 3, k)) == 0.0
    g = RightHandSide.point(0.5)
    assert rhs_coefficient(FICHERA, g, WaveletIndex.scaling(0)) == pytest.approx(POINT_SCALING_PATCH0, rel=1e-8)


def test_corner_cells_sum_to_patch_integral():
    # graded corner cells add up to the closed form on a notch face
    g = RightHandSide.point(0.5)
    fine = cell_integrals(g, FICHERA, [9] * 16, [2] * 16, np.repeat(np.arange(4), 4), np.tile(np.arange(4), 4))
    whole = cell_integrals(g, FICHERA, [9], [0], [0], [0])[0]
    assert fine.sum() == pytest.approx(whole, rel=1e-10)
    # the notch face is 0.5 x 0.5 with nu at a corner: 0.5^(2-alpha) * corner constant
    assert whole == pytest.approx(0.5**1.5 * corner_constant(0.5), rel=1e-10)


def test_cartoon_cells_area():
    c = RightHandSide.cartoon()
    n = 16
    i1, i2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    v = cell_integrals(c, CUBE, [CUBE_TOP] * n * n, [4] * n * n, i1.ravel(), i2.ravel())
    assert v.sum() == pytest.approx(math.pi / 2, rel=1e-9)
    assert np.all((v >= 0) & (v <= 4.0 / n**2 + 1e-15))
