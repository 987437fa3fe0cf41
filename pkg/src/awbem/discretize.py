"""Galerkin entries of the double layer operator and right-hand sides.

Kernel convention::

    k(x, y) = <eta(y), x - y> / (4 pi |x - y|^3)

so that ``int k(x, y) dy`` is ``-1`` inside, ``0`` outside and ``-1/2`` at
smooth boundary points, and the operator ``S = 1/2 I - K`` maps the constant
1 to itself.  For a flat panel ``F`` the inner integral is exact,

    int_F k(x, y) dy = -Omega_F(x) / (4 pi),

with ``Omega_F(x)`` the signed solid angle of ``F`` seen from ``x``,
positive from the interior side.  Pairs on coplanar patches give exactly 0.

This module is the reference route: entries are integrated cell pair by
cell pair with adaptive outer Gauss rules.  The fast operator in
:mod:`awbem.layer` is checked against it.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.integrate import quad

from ._kernels_py import FOUR_PI, gauss01, solid_angle_quad
from .basis import QUAD_SIGNS, CoeffVector, Kind, Tree, WaveletIndex
from .forest import build_forest, cell_geometry, synthesis_matrix
from .surface import Surface

__all__ = [
    "QuadConfig",
    "RightHandSide",
    "EntryCache",
    "SingularEvaluationError",
    "solid_angle",
    "pair_integrals",
    "galerkin_entry_K",
    "galerkin_matrix_dense",
    "apply_dense",
    "rhs_eval",
    "rhs_coefficient",
    "cell_integrals",
]


class SingularEvaluationError(ValueError):
    """Raised when a kernel or right-hand side is evaluated at its singularity."""


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature settings of the reference route.

    Attributes
    ----------
    order : int
        Outer Gauss order per direction.
    near_depth : int
        Maximal subdivision depth of an outer cell; cells are split until
        their diameter does not exceed their distance to the source.
    rhs_order : int
        Gauss order per direction for smooth right-hand-side cells.
    rhs_depth : int
        Maximal grading depth of right-hand-side cells toward a singularity.
    """

    order: int = 4
    near_depth: int = 6
    rhs_order: int = 8
    rhs_depth: int = 20

    def __post_init__(self):
        if self.order < 1 or self.rhs_order < 1:
            raise ValueError("quadrature orders must be >= 1")
        if self.near_depth < 0 or self.rhs_depth < 0:
            raise ValueError("depths must be >= 0")


# ---------------------------------------------------------------------------
# inner integral


def solid_angle(quad_pts, x) -> float:
    """Signed solid angle of a planar quadrilateral seen from ``x``.

    ``quad_pts`` are 4 coplanar corners in counterclockwise order around the
    normal ``eta``; the result is ``int <eta, y - x> / |y - x|^3 dy`` and is
    positive when ``x`` lies behind the panel.

    Raises
    ------
    SingularEvaluationError
        If ``x`` lies on the closed panel.
    """
    c = np.asarray(quad_pts, dtype=float).reshape(4, 3)
    x = np.asarray(x, dtype=float)
    n = np.cross(c[1] - c[0], c[3] - c[0])
    scale = max(np.linalg.norm(c[2] - c[0]), np.linalg.norm(c[3] - c[1]))
    if abs(np.dot(n / np.linalg.norm(n), x - c[0])) <= 1e-14 * scale:
        # coplanar: singular iff x is inside the closed quadrilateral
        inside = True
        for k in range(4):
            edge = c[(k + 1) % 4] - c[k]
            if np.dot(np.cross(edge, x - c[k]), n) < -1e-14 * scale * scale:
                inside = False
        if inside:
            raise SingularEvaluationError("evaluation point lies on the panel")
        return 0.0
    r = [c[k] - x for k in range(4)]
    from ._kernels_py import _tri_solid_angle

    return float(_tri_solid_angle(r[0], r[1], r[2]) + _tri_solid_angle(r[0], r[2], r[3]))


# ---------------------------------------------------------------------------
# cell-pair integrals


def _rule(order):
    x, w = gauss01(order)
    a, b = np.meshgrid(x, x, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    return a.ravel(), b.ravel(), (wa * wb).ravel()


_CELL_BATCH = 1 << 13


def pair_integrals(tc0, th1, th2, sc0, sh1, sh2, cfg: QuadConfig = QuadConfig()) -> np.ndarray:
    """``J = int_{Q_t} int_{Q_s} k(x, y) dy dx`` for batches of cell pairs.

    The inner integral is exact; the outer cell is split into 4 until its
    diameter is at most its (bounding-box) distance to the source cell or
    the maximal depth is reached, then integrated with a tensor Gauss rule.
    Coplanar pairs must be filtered out by the caller.
    """
    tc0, th1, th2 = (np.atleast_2d(np.asarray(a, float)) for a in (tc0, th1, th2))
    sc0, sh1, sh2 = (np.atleast_2d(np.asarray(a, float)) for a in (sc0, sh1, sh2))
    n = max(tc0.shape[0], sc0.shape[0])
    tc0, th1, th2, sc0, sh1, sh2 = (np.broadcast_to(a, (n, 3)) for a in (tc0, th1, th2, sc0, sh1, sh2))
    qa, qb, qw = _rule(cfg.order)
    pts_s = np.stack([sc0, sc0 + sh1, sc0 + sh1 + sh2, sc0 + sh2])
    s_lo, s_hi = pts_s.min(axis=0), pts_s.max(axis=0)

    out = np.zeros(n)
    work = [(np.arange(n), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))]
    while work:
        pid, depth, ra, rb = work.pop()
        if pid.size > _CELL_BATCH:
            # bound the working set; pieces are processed last-in first-out
            for lo in range(pid.size - _CELL_BATCH, -_CELL_BATCH, -_CELL_BATCH):
                sl = slice(max(lo, 0), lo + _CELL_BATCH)
                work.append((pid[sl], depth[sl], ra[sl], rb[sl]))
            continue
        scale = np.ldexp(1.0, -depth)[:, None]
        h1 = th1[pid] * scale
        h2 = th2[pid] * scale
        c0 = tc0[pid] + ra[:, None] * h1 + rb[:, None] * h2
        pts = np.stack([c0, c0 + h1, c0 + h1 + h2, c0 + h2])
        gap = np.maximum(0.0, np.maximum(s_lo[pid] - pts.max(axis=0), pts.min(axis=0) - s_hi[pid]))
        dist = np.sqrt(np.einsum("ij,ij->i", gap, gap))
        diam = np.maximum(np.linalg.norm(h1 + h2, axis=1), np.linalg.norm(h1 - h2, axis=1))
        done = (diam <= dist) | (depth >= cfg.near_depth)
        d = np.flatnonzero(done)
        if d.size:
            x = c0[d, None, :] + qa[None, :, None] * h1[d, None, :] + qb[None, :, None] * h2[d, None, :]
            om = solid_angle_quad(sc0[pid[d], None, :], sh1[pid[d], None, :], sh2[pid[d], None, :], x)
            area = np.linalg.norm(np.cross(h1[d], h2[d]), axis=1)
            np.add.at(out, pid[d], -area * (om @ qw) / FOUR_PI)
        s = np.flatnonzero(~done)
        if s.size:
            work.append((
                np.repeat(pid[s], 4),
                np.repeat(depth[s] + 1, 4),
                2 * np.repeat(ra[s], 4) + np.tile([0, 0, 1, 1], s.size),
                2 * np.repeat(rb[s], 4) + np.tile([0, 1, 0, 1], s.size),
            ))
    return out


def _pieces(surface: Surface, lam: WaveletIndex):
    """Constant pieces of ``psi_lam``: (cell geometry, values)."""
    jac = surface.patches[lam.patch].jacobian
    if lam.kind == Kind.SCALING:
        g = cell_geometry(surface, np.array([lam.patch]), np.array([0]), np.array([0]), np.array([0]))
        return g, np.array([1.0 / math.sqrt(jac)])
    j = lam.level
    k1, k2 = lam.pos
    i1 = np.array([2 * k1, 2 * k1, 2 * k1 + 1, 2 * k1 + 1])
    i2 = np.array([2 * k2, 2 * k2 + 1, 2 * k2, 2 * k2 + 1])
    g = cell_geometry(surface, np.full(4, lam.patch), np.full(4, j + 1), i1, i2)
    return g, QUAD_SIGNS[int(lam.kind)] * (2.0**j / math.sqrt(jac))


def galerkin_entry_K(surface: Surface, lam: WaveletIndex, lam_src: WaveletIndex, cfg: QuadConfig = QuadConfig()) -> float:
    """Reference value of ``<K psi_lam_src, psi_lam>``; exactly 0 for coplanar patches."""
    if surface.relations[lam.patch][lam_src.patch].coplanar:
        return 0.0
    gt, vt = _pieces(surface, lam)
    gs, vs = _pieces(surface, lam_src)
    nt, ns = vt.size, vs.size
    it = np.repeat(np.arange(nt), ns)
    is_ = np.tile(np.arange(ns), nt)
    j = pair_integrals(gt["c0"][it], gt["h1"][it], gt["h2"][it], gs["c0"][is_], gs["h1"][is_], gs["h2"][is_], cfg)
    return float(np.sum(vt[it] * vs[is_] * j))


class EntryCache:
    """Memoized reference entries keyed by ``(lam, lam_src)``.

    Values are returned bit-identically on re-query.  Reads are lock-free;
    insertion is serialized.  Binary dump format (little-endian): ``uint64``
    count, then records ``(int64 key, int64 key_src, int32 order, float64)``.
    """

    _REC = struct.Struct("<qqid")

    def __init__(self, surface: Surface, cfg: QuadConfig = QuadConfig()):
        self.surface = surface
        self.cfg = cfg
        self._data: dict = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._data)

    def get(self, lam: WaveletIndex, lam_src: WaveletIndex) -> float:
        key = (lam.key, lam_src.key)
        hit = self._data.get(key)
        if hit is not None:
            return hit[0]
        val = galerkin_entry_K(self.surface, lam, lam_src, self.cfg)
        with self._lock:
            self._data.setdefault(key, (val, self.cfg.order))
        return self._data[key][0]

    def order_of(self, lam: WaveletIndex, lam_src: WaveletIndex) -> int:
        return self._data[(lam.key, lam_src.key)][1]

    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(self._data)))
            for (k, ks), (v, o) in sorted(self._data.items()):
                fh.write(self._REC.pack(k, ks, o, v))

    def load(self, path) -> None:
        with open(path, "rb") as fh:
            (count,) = struct.unpack("<Q", fh.read(8))
            for _ in range(count):
                k, ks, o, v = self._REC.unpack(fh.read(self._REC.size))
                self._data[(k, ks)] = (v, o)


def leaf_pair_matrix(surface: Surface, forest, cfg: QuadConfig = QuadConfig()) -> np.ndarray:
    """Dense ``J[t, s]`` over all leaf pairs of a forest (reference route)."""
    g = forest.geometry(forest.leaf_nodes)
    lp = forest.patch[forest.leaf_nodes]
    nl = lp.size
    cop = surface.coplanar_matrix()
    it, is_ = np.meshgrid(np.arange(nl), np.arange(nl), indexing="ij")
    it, is_ = it.ravel(), is_.ravel()
    keep = ~cop[lp[it], lp[is_]]
    it, is_ = it[keep], is_[keep]
    out = np.zeros((nl, nl))
    chunk = 20000
    for lo in range(0, it.size, chunk):
        a, b = it[lo : lo + chunk], is_[lo : lo + chunk]
        out[a, b] = pair_integrals(g["c0"][a], g["h1"][a], g["h2"][a], g["c0"][b], g["h1"][b], g["h2"][b], cfg)
    return out


def galerkin_matrix_dense(surface: Surface, tree: Tree, cfg: QuadConfig = QuadConfig()) -> np.ndarray:
    """Dense ``(1/2 I - K)`` restricted to ``tree`` (rows and columns in key order)."""
    forest = build_forest(surface, tree.keys)
    phi = synthesis_matrix(forest, tree.keys).toarray()
    jm = leaf_pair_matrix(surface, forest, cfg)
    return 0.5 * np.eye(len(tree)) - phi.T @ jm @ phi


def apply_dense(surface: Surface, tree: Tree, v: CoeffVector, cfg: QuadConfig = QuadConfig(), matrix=None) -> CoeffVector:
    """``(1/2 I - K)|_tree v`` with the reference entries."""
    if not np.all(np.isin(v.keys, tree.keys)):
        raise ValueError("support of v is not contained in the tree")
    if len(v) == 0:
        return CoeffVector()
    a = galerkin_matrix_dense(surface, tree, cfg) if matrix is None else matrix
    return CoeffVector(tree.keys, a @ v.values_on(tree.keys), presorted=True)


# ---------------------------------------------------------------------------
# right-hand sides


@dataclass(frozen=True)
class RightHandSide:
    """Boundary data ``g``.

    Variants: ``point`` (``|x - nu|^-alpha``), ``cartoon``
    (``value`` inside the ball ``|x - center|^2 <= radius2``, else 0) and
    ``constant`` (``g = value``).
    """

    variant: str
    alpha: float = 0.5
    nu: tuple = (0.5, 0.5, 0.5)
    center: tuple = (0.0, 0.0, 1.0)
    radius2: float = 0.5
    value: float = 1.0

    def __post_init__(self):
        if self.variant not in ("point", "cartoon", "constant"):
            raise ValueError(f"unknown right-hand side {self.variant!r}")
        if self.variant == "point" and not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.variant == "cartoon" and self.value not in (0.0, 1.0):
            raise ValueError("cartoon value must be 0 or 1")

    @classmethod
    def point(cls, alpha: float, nu=(0.5, 0.5, 0.5)) -> "RightHandSide":
        return cls("point", alpha=float(alpha), nu=tuple(float(v) for v in nu))

    @classmethod
    def cartoon(cls, center=(0.0, 0.0, 1.0), radius2: float = 0.5, value: float = 1.0) -> "RightHandSide":
        return cls("cartoon", center=tuple(center), radius2=float(radius2), value=float(value))

    @classmethod
    def constant(cls, value: float = 1.0) -> "RightHandSide":
        return cls("constant", value=float(value))

    def check_surface(self, surface: Surface) -> None:
        if self.variant == "point":
            d = np.linalg.norm(surface.vertices - np.array(self.nu), axis=1)
            if d.min() > 1e-12:
                raise ValueError(f"singular point {self.nu} is not a vertex of {surface.name}")


def rhs_eval(g: RightHandSide, x) -> np.ndarray:
    """Pointwise value of ``g``."""
    x = np.asarray(x, dtype=float)
    if g.variant == "constant":
        return np.full(x.shape[:-1], g.value) if x.ndim > 1 else np.float64(g.value)
    if g.variant == "cartoon":
        d2 = np.sum((x - np.array(g.center)) ** 2, axis=-1)
        return np.where(d2 <= g.radius2, g.value, 0.0)
    r = np.sqrt(np.sum((x - np.array(g.nu)) ** 2, axis=-1))
    if np.any(r == 0.0):
        raise SingularEvaluationError("right-hand side evaluated at its singular point")
    return r ** (-g.alpha)


def _corner_integral(alpha: float, X, Y):
    """``int_0^X int_0^Y (x^2 + y^2)^(-alpha/2) dy dx`` for ``X, Y >= 0``.

    Polar coordinates split at the diagonal angle ``phi0 = atan(Y/X)`` give
    ``(X^(2-a) F(phi0) + Y^(2-a) F(pi/2 - phi0)) / (2 - a)`` with
    ``F(b) = int_0^b cos^(a-2)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    shape = np.broadcast(X, Y).shape
    X, Y = np.broadcast_to(X, shape), np.broadcast_to(Y, shape)
    out = np.zeros(shape)
    ok = (X > 0) & (Y > 0)
    Xo, Yo = X[ok], Y[ok]
    mu = alpha - 2.0
    rr = np.hypot(Xo, Yo)
    t1 = Xo ** (2 - alpha) * _cos_pow_int(mu, Yo / rr, Xo / rr)
    t2 = Yo ** (2 - alpha) * _cos_pow_int(mu, Xo / rr, Yo / rr)
    out[ok] = (t1 + t2) / (2.0 - alpha)
    return out


def _cos_pow_int(mu, sin_b, cos_b):
    """``int_0^b cos^mu`` for ``-2 < mu < -1`` and ``0 <= b < pi/2``.

    Small angles use ``sin b * 2F1(1/2, (1-mu)/2; 3/2; sin^2 b)``.  Angles
    above ``pi/4`` use the analytic continuation in ``mu`` of
    ``int_0^{pi/2} cos^mu - int_0^{pi/2-b} sin^mu``, which keeps the
    hypergeometric argument at most 1/2.
    """
    small = sin_b <= math.sqrt(0.5)
    out = np.empty_like(sin_b)
    s = sin_b[small]
    out[small] = s * special.hyp2f1(0.5, (1.0 - mu) / 2.0, 1.5, s**2)
    c = cos_b[~small]
    tail = c ** (mu + 1.0) / (mu + 1.0) * special.hyp2f1(0.5, (mu + 1.0) / 2.0, (mu + 3.0) / 2.0, c**2)
    full = 0.5 * math.sqrt(math.pi) * special.gamma((mu + 1.0) / 2.0) / special.gamma(mu / 2.0 + 1.0)
    out[~small] = full - tail
    return out


def _point_cells(g: RightHandSide, surface: Surface, geo: dict, patch: np.ndarray, cfg: QuadConfig) -> np.ndarray:
    """Integrals of ``|x - nu|^-alpha`` over rectangular cells."""
    nu = np.array(g.nu)
    alpha = g.alpha
    n = patch.size
    out = np.zeros(n)
    normals = np.array([p.normal for p in surface.patches])[patch]
    off = np.einsum("ij,ij->i", normals, nu - geo["c0"])
    in_plane = np.abs(off) <= 1e-13
    gap = np.maximum(0.0, np.maximum(geo["lo"] - nu, nu - geo["hi"]))
    dist = np.sqrt(np.einsum("ij,ij->i", gap, gap))
    exact = in_plane & (dist < 2.0 * geo["diam"])
    if np.any(exact):
        e = np.flatnonzero(exact)
        h1, h2 = geo["h1"][e], geo["h2"][e]
        l1 = np.linalg.norm(h1, axis=1)
        l2 = np.linalg.norm(h2, axis=1)
        if np.any(np.abs(np.einsum("ij,ij->i", h1, h2)) > 1e-14 * l1 * l2):
            raise ValueError("closed-form cell integral requires rectangular cells")
        rel = geo["c0"][e] - nu
        a0 = np.einsum("ij,ij->i", rel, h1) / l1
        b0 = np.einsum("ij,ij->i", rel, h2) / l2
        a1, b1 = a0 + l1, b0 + l2
        out[e] = _rect_integral(alpha, a0, a1, b0, b1)
    rest = np.flatnonzero(~exact)
    if rest.size:
        out[rest] = _graded_gauss(
            lambda x: np.sum((x - nu) ** 2, axis=-1) ** (-alpha / 2.0),
            nu,
            {k: v[rest] for k, v in geo.items()},
            cfg,
        )
    return out


def _rect_integral(alpha, a0, a1, b0, b1):
    """``int_{[a0,a1]x[b0,b1]} (a^2 + b^2)^(-alpha/2)`` via signed corner integrals."""

    def G(a, b):
        return np.sign(a) * np.sign(b) * _corner_integral(alpha, np.abs(a), np.abs(b))

    return G(a1, b1) - G(a0, b1) - G(a1, b0) + G(a0, b0)


def _order_tiers(order: int):
    """``(q_lo, q_hi, n)``: Gauss order for cells with ``diam/dist`` in ``(q_lo, q_hi]``."""
    return (
        (-1.0, 1.0 / 64, min(order, 3)),
        (1.0 / 64, 1.0 / 8, min(order, 5)),
        (1.0 / 8, np.inf, order),
    )


def _graded_gauss(func, nu, geo, cfg: QuadConfig, ratio: float = 2.0):
    """Composite Gauss over cells, split until ``dist(cell, nu) >= ratio * diam``."""
    n = geo["c0"].shape[0]
    out = np.zeros(n)
    pid = np.arange(n)
    c0, h1, h2 = geo["c0"], geo["h1"], geo["h2"]
    depth = np.zeros(n, dtype=np.int64)
    while pid.size:
        pts = np.stack([c0, c0 + h1, c0 + h1 + h2, c0 + h2])
        gap = np.maximum(0.0, np.maximum(pts.min(axis=0) - nu, nu - pts.max(axis=0)))
        dist = np.sqrt(np.einsum("ij,ij->i", gap, gap))
        diam = np.maximum(np.linalg.norm(h1 + h2, axis=1), np.linalg.norm(h1 - h2, axis=1))
        done = (dist >= ratio * diam) | (depth >= cfg.rhs_depth)
        # error of an order-n rule decays like (diam / (2 dist))^(2n)
        q = diam / np.maximum(dist, 1e-300)
        for lo_q, hi_q, order in _order_tiers(cfg.rhs_order):
            d = np.flatnonzero(done & (q > lo_q) & (q <= hi_q))
            if d.size == 0:
                continue
            qa, qb, qw = _rule(order)
            x = c0[d, None, :] + qa[None, :, None] * h1[d, None, :] + qb[None, :, None] * h2[d, None, :]
            area = np.linalg.norm(np.cross(h1[d], h2[d]), axis=1)
            np.add.at(out, pid[d], area * (func(x) @ qw))
        s = np.flatnonzero(~done)
        qa4 = np.tile([0.0, 0.0, 0.5, 0.5], s.size)[:, None]
        qb4 = np.tile([0.0, 0.5, 0.0, 0.5], s.size)[:, None]
        hh1, hh2 = np.repeat(h1[s], 4, axis=0), np.repeat(h2[s], 4, axis=0)
        c0 = np.repeat(c0[s], 4, axis=0) + qa4 * hh1 + qb4 * hh2
        h1, h2 = 0.5 * hh1, 0.5 * hh2
        pid = np.repeat(pid[s], 4)
        depth = np.repeat(depth[s] + 1, 4)
    return out


def _disc_rect_area(r, x0, x1, y0, y1):
    """Area of the disc of radius ``r`` (at the origin) inside ``[x0,x1] x [y0,y1]``."""

    def below(y):
        # area of the disc within x in [x0, x1] and Y <= y
        r2 = r * r
        lo = np.clip(x0, -r, r)
        hi = np.clip(x1, -r, r)

        def S(x):  # antiderivative of sqrt(r^2 - x^2)
            x = np.clip(x, -r, r)
            return 0.5 * (x * np.sqrt(np.maximum(r2 - x * x, 0.0)) + r2 * np.arcsin(np.where(r > 0, x / np.where(r > 0, r, 1), 0)))

        yc = np.clip(y, -r, r)
        w = np.sqrt(np.maximum(r2 - yc * yc, 0.0))  # |x| < w: chord above |y|
        # inner part |x| <= w: integrand y + s(x); outer part |x| > w: 2 s(x) if y > 0 else 0
        il = np.clip(lo, -w, w)
        ih = np.clip(hi, -w, w)
        inner = np.maximum(ih - il, 0.0) * yc + np.where(ih > il, S(ih) - S(il), 0.0)
        full = np.where(hi > lo, S(hi) - S(lo), 0.0)
        outer_s = full - np.where(ih > il, S(ih) - S(il), 0.0)
        outer = np.where(yc > 0, 2.0 * outer_s, 0.0)
        return inner + outer

    return np.maximum(below(y1) - below(y0), 0.0)


def _cartoon_cells(g: RightHandSide, surface: Surface, geo: dict, patch: np.ndarray) -> np.ndarray:
    c = np.array(g.center)
    normals = np.array([p.normal for p in surface.patches])[patch]
    off = np.einsum("ij,ij->i", normals, c - geo["c0"])
    r2 = g.radius2 - off**2
    out = np.zeros(patch.size)
    hit = np.flatnonzero(r2 > 0)
    if hit.size == 0:
        return out
    h1, h2 = geo["h1"][hit], geo["h2"][hit]
    l1 = np.linalg.norm(h1, axis=1)
    l2 = np.linalg.norm(h2, axis=1)
    if np.any(np.abs(np.einsum("ij,ij->i", h1, h2)) > 1e-14 * l1 * l2):
        raise ValueError("exact disc areas require rectangular cells")
    rel = geo["c0"][hit] - c
    a0 = np.einsum("ij,ij->i", rel, h1) / l1
    b0 = np.einsum("ij,ij->i", rel, h2) / l2
    out[hit] = g.value * _disc_rect_area(np.sqrt(r2[hit]), a0, a0 + l1, b0, b0 + l2)
    return out


def cell_integrals(g: RightHandSide, surface: Surface, patch, level, i1, i2, cfg: QuadConfig = QuadConfig()) -> np.ndarray:
    """``int_Q g`` over dyadic cells ``(patch, level, i1, i2)``."""
    patch = np.asarray(patch, dtype=np.int64)
    geo = cell_geometry(surface, patch, np.asarray(level), np.asarray(i1), np.asarray(i2))
    if g.variant == "constant":
        return g.value * geo["area"]
    if g.variant == "cartoon":
        return _cartoon_cells(g, surface, geo, patch)
    return _point_cells(g, surface, geo, patch, cfg)


def rhs_coefficient(surface: Surface, g: RightHandSide, lam: WaveletIndex, cfg: QuadConfig = QuadConfig()) -> float:
    """``<g, psi_lam>``."""
    jac = surface.patches[lam.patch].jacobian
    if lam.kind == Kind.SCALING:
        v = cell_integrals(g, surface, [lam.patch], [0], [0], [0], cfg)
        return float(v[0] / math.sqrt(jac))
    j = lam.level
    k1, k2 = lam.pos
    i1 = [2 * k1, 2 * k1, 2 * k1 + 1, 2 * k1 + 1]
    i2 = [2 * k2, 2 * k2 + 1, 2 * k2, 2 * k2 + 1]
    v = cell_integrals(g, surface, [lam.patch] * 4, [j + 1] * 4, i1, i2, cfg)
    return float(np.dot(QUAD_SIGNS[int(lam.kind)], v) * 2.0**j / math.sqrt(jac))


def corner_constant(alpha: float) -> float:
    """``int_{[0,1]^2} |x|^-alpha dx`` by adaptive 1-d quadrature (reference)."""
    val, _ = quad(lambda p: math.cos(p) ** (alpha - 2.0), 0.0, math.pi / 4, epsabs=1e-15, epsrel=1e-14)
    return 2.0 * val / (2.0 - alpha)
