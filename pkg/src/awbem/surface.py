"""Patchwise-flat closed surfaces built from parallelogram patches.

Every patch is the affine image of the unit square,

    kappa(s, t) = c0 + s * e1 + t * e2,    e1 = c1 - c0,  e2 = c3 - c0,

with corners listed counterclockwise as seen from outside, so that
``e1 x e2`` points out of the domain.  The surface measure of a patch is
``|e1 x e2| ds dt``, a constant.

Two geometries are built in: the Fichera vertex ``(0,1)^3 \\ (0,1/2]^3``
with 12 patches and the cube ``(-1,1)^3`` with 6.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import lsq_linear

__all__ = [
    "Patch",
    "Surface",
    "SurfacePoint",
    "RelationKind",
    "PatchRelation",
    "Box",
    "make_fichera",
    "make_cube",
    "make_surface",
    "lift",
    "patch_relation",
    "support_distance",
]

_GEOM_TOL = 1e-12


class RelationKind(enum.Enum):
    IDENTICAL = "identical"
    COMMON_EDGE = "common-edge"
    COMMON_VERTEX = "common-vertex"
    DISJOINT = "disjoint"


class PatchRelation(NamedTuple):
    kind: RelationKind
    coplanar: bool


class SurfacePoint(NamedTuple):
    """A point given by patch id and local coordinates ``(s, t)``."""

    patch: int
    s: float
    t: float


class Box(NamedTuple):
    """Axis-aligned rectangle ``[s0, s1] x [t0, t1]`` in a patch's unit square."""

    patch: int
    s0: float
    s1: float
    t0: float
    t1: float


@dataclass(frozen=True, eq=False)
class Patch:
    """A planar parallelogram with an affine parametrization.

    Attributes
    ----------
    id : int
        Position of the patch in its surface.
    corners : ndarray, shape (4, 3)
        Counterclockwise as seen from outside.
    normal : ndarray, shape (3,)
        Outward unit normal.
    jacobian : float
        Area of the patch; the constant surface-measure factor of kappa.
    """

    id: int
    corners: np.ndarray
    normal: np.ndarray = field(init=False)
    jacobian: float = field(init=False)

    def __post_init__(self):
        c = np.array(self.corners, dtype=float).reshape(4, 3)
        e1, e2 = c[1] - c[0], c[3] - c[0]
        diam = max(np.linalg.norm(c[2] - c[0]), np.linalg.norm(c[3] - c[1]))
        if np.linalg.norm(c[0] + e1 + e2 - c[2]) > _GEOM_TOL * diam:
            raise ValueError(f"patch {self.id}: corners do not form a parallelogram")
        cr = np.cross(e1, e2)
        area = float(np.linalg.norm(cr))
        if area <= 0.0:
            raise ValueError(f"patch {self.id}: degenerate corners")
        c.setflags(write=False)
        n = cr / area
        n.setflags(write=False)
        object.__setattr__(self, "corners", c)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "jacobian", area)

    @property
    def origin(self) -> np.ndarray:
        return self.corners[0]

    @property
    def e1(self) -> np.ndarray:
        return self.corners[1] - self.corners[0]

    @property
    def e2(self) -> np.ndarray:
        return self.corners[3] - self.corners[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)

    @property
    def diameter(self) -> float:
        c = self.corners
        return float(max(np.linalg.norm(c[2] - c[0]), np.linalg.norm(c[3] - c[1])))

    def lift(self, s, t) -> np.ndarray:
        """Map local coordinates (scalars or arrays) to points in R^3."""
        s = np.asarray(s, dtype=float)[..., None]
        t = np.asarray(t, dtype=float)[..., None]
        return self.origin + s * self.e1 + t * self.e2


@dataclass(frozen=True, eq=False)
class Surface:
    """A closed polyhedral surface given as a list of patches.

    The relation table is computed once at construction.
    """

    name: str
    patches: tuple
    vertices: np.ndarray = field(init=False)
    relations: tuple = field(init=False, repr=False)

    def __post_init__(self):
        patches = tuple(self.patches)
        object.__setattr__(self, "patches", patches)
        n = len(patches)
        rel = [[None] * n for _ in range(n)]
        for i in range(n):
            rel[i][i] = PatchRelation(RelationKind.IDENTICAL, True)
            for j in range(i + 1, n):
                r = _classify(patches[i], patches[j])
                rel[i][j] = rel[j][i] = r
        object.__setattr__(self, "relations", tuple(tuple(r) for r in rel))
        object.__setattr__(self, "vertices", _polyhedron_vertices(patches))

    def __len__(self) -> int:
        return len(self.patches)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def area(self) -> float:
        return float(sum(p.jacobian for p in self.patches))

    def coplanar_matrix(self) -> np.ndarray:
        """Boolean (P, P) matrix of coplanar patch pairs."""
        n = len(self.patches)
        return np.array(
            [[self.relations[i][j].coplanar for j in range(n)] for i in range(n)],
            dtype=bool,
        )

    def dump(self) -> str:
        """Plain-text listing: id, 4 corners, normal (one patch per line)."""
        lines = ["# id  c0 c1 c2 c3 (x y z each)  normal"]
        for p in self.patches:
            nums = " ".join(f"{v:.17g}" for v in p.corners.ravel())
            nrm = " ".join(f"{v:.17g}" for v in p.normal)
            lines.append(f"{p.id} {nums} {nrm}")
        return "\n".join(lines) + "\n"


def _box_patch(pid, origin, e1, e2):
    o = np.asarray(origin, float)
    e1 = np.asarray(e1, float)
    e2 = np.asarray(e2, float)
    return Patch(pid, np.array([o, o + e1, o + e1 + e2, o + e2]))


# (origin, e1, e2) per patch; e1 x e2 is the outward normal.
_FICHERA = [
    # full faces
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),  # x = 1
    ((0, 1, 0), (0, 0, 1), (1, 0, 0)),  # y = 1
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),  # z = 1
    # L-shaped faces, each a 1 x 0.5 strip plus a 0.5 x 0.5 square
    ((0, 0, 0.5), (0, 0, 0.5), (0, 1, 0)),  # x = 0, z >= 0.5
    ((0, 0.5, 0), (0, 0, 0.5), (0, 0.5, 0)),  # x = 0, z < 0.5, y >= 0.5
    ((0.5, 0, 0), (0.5, 0, 0), (0, 0, 1)),  # y = 0, x >= 0.5
    ((0, 0, 0.5), (0.5, 0, 0), (0, 0, 0.5)),  # y = 0, x < 0.5, z >= 0.5
    ((0, 0.5, 0), (0, 0.5, 0), (1, 0, 0)),  # z = 0, y >= 0.5
    ((0.5, 0, 0), (0, 0.5, 0), (0.5, 0, 0)),  # z = 0, y < 0.5, x >= 0.5
    # notch faces; corner (1, 1) of each maps to the reentrant vertex
    ((0.5, 0, 0), (0, 0, 0.5), (0, 0.5, 0)),  # x = 0.5
    ((0, 0.5, 0), (0.5, 0, 0), (0, 0, 0.5)),  # y = 0.5
    ((0, 0, 0.5), (0, 0.5, 0), (0.5, 0, 0)),  # z = 0.5
]

_CUBE = [
    ((-1, -1, -1), (0, 0, 2), (0, 2, 0)),  # x = -1
    ((1, -1, -1), (0, 2, 0), (0, 0, 2)),  # x = +1
    ((-1, -1, -1), (2, 0, 0), (0, 0, 2)),  # y = -1
    ((-1, 1, -1), (0, 0, 2), (2, 0, 0)),  # y = +1
    ((-1, -1, -1), (0, 2, 0), (2, 0, 0)),  # z = -1
    ((-1, -1, 1), (2, 0, 0), (0, 2, 0)),  # z = +1 (top)
]

#: Index of the top face ``z = 1`` of the cube.
CUBE_TOP = 5
#: Indices of the three notch faces of the Fichera surface.
FICHERA_NOTCH = (9, 10, 11)
#: Reentrant corner of the Fichera vertex.
FICHERA_CORNER = (0.5, 0.5, 0.5)


def make_fichera() -> Surface:
    """Fichera vertex ``(0,1)^3 \\ (0,1/2]^3`` with 12 patches, area 6."""
    return Surface("fichera", tuple(_box_patch(i, *d) for i, d in enumerate(_FICHERA)))


def make_cube() -> Surface:
    """Cube ``(-1,1)^3`` with 6 square patches; patch 5 is the top face."""
    return Surface("cube", tuple(_box_patch(i, *d) for i, d in enumerate(_CUBE)))


def make_surface(name: str) -> Surface:
    """Build a surface by name (``"fichera"`` or ``"cube"``)."""
    try:
        return {"fichera": make_fichera, "cube": make_cube}[name]()
    except KeyError:
        raise ValueError(f"unknown surface {name!r}") from None


def lift(surface: Surface, point: SurfacePoint) -> np.ndarray:
    """Map a surface point to R^3."""
    p = surface.patches[point.patch]
    if not (0.0 <= point.s <= 1.0 and 0.0 <= point.t <= 1.0):
        raise ValueError(f"local coordinates {point.s, point.t} outside [0,1]^2")
    return p.lift(point.s, point.t)


def patch_relation(surface: Surface, i: int, j: int) -> PatchRelation:
    return surface.relations[i][j]


def _coplanar(p: Patch, q: Patch) -> bool:
    scale = max(p.diameter, q.diameter)
    if np.linalg.norm(np.cross(p.normal, q.normal)) > _GEOM_TOL:
        return False
    return abs(np.dot(p.normal, q.origin - p.origin)) <= _GEOM_TOL * scale


def _edges(p: Patch):
    c = p.corners
    return [(c[k], c[(k + 1) % 4]) for k in range(4)]


def _segment_overlap(a0, a1, b0, b1, tol):
    """Intersection of two closed segments: None, a point, or a segment (pair)."""
    da, db = a1 - a0, b1 - b0
    la = np.linalg.norm(da)
    ua = da / la
    # colinear?
    if (
        np.linalg.norm(np.cross(ua, db)) <= tol
        and np.linalg.norm(np.cross(ua, b0 - a0)) <= tol
    ):
        tb0, tb1 = sorted((np.dot(b0 - a0, ua), np.dot(b1 - a0, ua)))
        lo, hi = max(0.0, tb0), min(la, tb1)
        if hi < lo - tol:
            return None
        if hi - lo <= tol:
            return (a0 + lo * ua,)
        return (a0 + lo * ua, a0 + hi * ua)
    # closest points of the two lines, clamped
    m = np.array([[da @ da, -(da @ db)], [da @ db, -(db @ db)]])
    rhs = np.array([(b0 - a0) @ da, (b0 - a0) @ db])
    det = np.linalg.det(m)
    if abs(det) < 1e-300:
        return None
    sa, sb = np.linalg.solve(m, rhs)
    if -tol <= sa <= 1 + tol and -tol <= sb <= 1 + tol:
        pa, pb = a0 + sa * da, b0 + sb * db
        if np.linalg.norm(pa - pb) <= tol:
            return (pa,)
    return None


def _classify(p: Patch, q: Patch) -> PatchRelation:
    cop = _coplanar(p, q)
    tol = _GEOM_TOL * max(p.diameter, q.diameter) * 10
    found_point = False
    for a0, a1 in _edges(p):
        for b0, b1 in _edges(q):
            hit = _segment_overlap(a0, a1, b0, b1, tol)
            if hit is None:
                continue
            if len(hit) == 2:
                return PatchRelation(RelationKind.COMMON_EDGE, cop)
            found_point = True
    kind = RelationKind.COMMON_VERTEX if found_point else RelationKind.DISJOINT
    return PatchRelation(kind, cop)


def _polyhedron_vertices(patches) -> np.ndarray:
    """Patch corners at which the incident patch planes span three directions."""
    pts = np.unique(np.round(np.concatenate([p.corners for p in patches]), 12), axis=0)
    out = []
    for x in pts:
        normals = []
        for p in patches:
            loc = np.linalg.lstsq(np.stack([p.e1, p.e2], axis=1), x - p.origin, rcond=None)[0]
            on = np.linalg.norm(p.lift(*loc) - x) <= 1e-12
            if on and np.all(loc >= -1e-12) and np.all(loc <= 1 + 1e-12):
                normals.append(p.normal)
        if np.linalg.matrix_rank(np.array(normals), tol=1e-9) == 3:
            out.append(x)
    arr = np.array(out)
    arr.setflags(write=False)
    return arr


def box_corners(surface: Surface, box: Box) -> np.ndarray:
    """The 4 lifted corners of a patch-aligned rectangle (ccw)."""
    p = surface.patches[box.patch]
    s = np.array([box.s0, box.s1, box.s1, box.s0])
    t = np.array([box.t0, box.t0, box.t1, box.t1])
    return p.lift(s, t)


def support_distance(surface: Surface, box_a: Box, box_b: Box) -> float:
    """Euclidean distance between two lifted patch rectangles.

    Solved as the bound-constrained least-squares problem
    ``min |xA(s,t) - xB(u,v)|`` over the 4 local parameters, which is convex
    and hence exact up to solver tolerance.
    """
    ca = box_corners(surface, box_a)
    cb = box_corners(surface, box_b)
    ea1, ea2 = ca[1] - ca[0], ca[3] - ca[0]
    eb1, eb2 = cb[1] - cb[0], cb[3] - cb[0]
    mat = np.stack([ea1, ea2, -eb1, -eb2], axis=1)
    res = lsq_linear(mat, cb[0] - ca[0], bounds=(0.0, 1.0), tol=1e-14, method="bvls")
    d = float(np.linalg.norm(mat @ res.x - (cb[0] - ca[0])))
    scale = max(np.linalg.norm(ea1) + np.linalg.norm(ea2), np.linalg.norm(eb1) + np.linalg.norm(eb2))
    return 0.0 if d <= 1e-13 * scale else d


def edge_coverage_defect(surface: Surface, n_samples: int = 7) -> float:
    """Largest gap in edge coverage (0 when every patch edge is covered).

    Interior sample points of each patch edge must lie on the boundary of a
    different, non-coplanar-or-neighbouring patch.  The surface is closed in
    this sense when the defect is 0.
    """
    worst = 0.0
    ts = (np.arange(n_samples) + 0.5) / n_samples
    for p in surface.patches:
        for a, b in _edges(p):
            for t in ts:
                x = a + t * (b - a)
                best = np.inf
                for q in surface.patches:
                    if q.id == p.id:
                        continue
                    for c0, c1 in _edges(q):
                        d = c1 - c0
                        u = np.clip(np.dot(x - c0, d) / np.dot(d, d), 0.0, 1.0)
                        best = min(best, np.linalg.norm(c0 + u * d - x))
                worst = max(worst, best)
    return worst


__all__ += ["CUBE_TOP", "FICHERA_NOTCH", "FICHERA_CORNER", "box_corners", "edge_coverage_defect"]
