"""Orthonormal Haar tensor wavelets on parallelogram patches.

Per patch with area ``A`` the basis consists of one scaling function
``1/sqrt(A)`` and, for every level ``j >= 0`` and position ``(k1, k2)``,
three wavelets supported on the dyadic square
``[k1, k1+1] x [k2, k2+1] * 2^-j`` of the unit square.  On the four
quadrants ``(a, b)`` of that square (``a`` along ``s``, ``b`` along ``t``)
a wavelet takes the value ``sigma * 2^j / sqrt(A)`` with

    horiz: sigma = (-1)^a,   vert: sigma = (-1)^b,   diag: sigma = (-1)^(a+b).

Indices are packed into int64 keys so that index sets and coefficient
vectors are plain sorted arrays.  A *node* ``(patch, level, i1, i2)`` is a
dyadic square; a wavelet key is ``node_key << 2 | kind`` with kind 0 the
scaling function (stored on the level-0 root node) and 1, 2, 3 the
horiz, vert and diag wavelets living on that node.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Kind",
    "WaveletIndex",
    "CoeffVector",
    "Tree",
    "BesovParams",
    "children",
    "parent",
    "evaluate",
    "haar_analysis",
    "haar_synthesis",
    "tree_complete",
    "roots",
    "uniform_tree",
    "sobolev_seq_norm",
    "besov_norm",
    "best_n_term_curve",
]

MAX_LEVEL = 25
_POS_BITS = 25
_LEV_BITS = 5
_POS_MASK = (1 << _POS_BITS) - 1
_LEV_MASK = (1 << _LEV_BITS) - 1
MAX_PATCHES = 32


class Kind(enum.IntEnum):
    SCALING = 0
    HORIZ = 1
    VERT = 2
    DIAG = 3


_KIND_NAMES = {"scaling": Kind.SCALING, "horiz": Kind.HORIZ, "vert": Kind.VERT, "diag": Kind.DIAG}

# sign of each kind on quadrant q = 2*a + b
QUAD_SIGNS = np.array(
    [
        [1, 1, 1, 1],
        [1, 1, -1, -1],
        [1, -1, 1, -1],
        [1, -1, -1, 1],
    ],
    dtype=float,
)


# ---------------------------------------------------------------------------
# key packing (vectorized)


def node_key(patch, level, i1, i2):
    patch = np.asarray(patch, dtype=np.int64)
    level = np.asarray(level, dtype=np.int64)
    return (((patch << _LEV_BITS) | level) << (2 * _POS_BITS)) | (
        np.asarray(i1, dtype=np.int64) << _POS_BITS
    ) | np.asarray(i2, dtype=np.int64)


def decode_node(keys):
    """Split node keys into ``(patch, level, i1, i2)`` arrays."""
    keys = np.asarray(keys, dtype=np.int64)
    i2 = keys & _POS_MASK
    i1 = (keys >> _POS_BITS) & _POS_MASK
    hi = keys >> (2 * _POS_BITS)
    return hi >> _LEV_BITS, hi & _LEV_MASK, i1, i2


def decode(keys):
    """Split wavelet keys into ``(patch, level, i1, i2, kind)``; scaling has level -1."""
    keys = np.asarray(keys, dtype=np.int64)
    kind = keys & 3
    p, j, i1, i2 = decode_node(keys >> 2)
    j = np.where(kind == 0, -1, j)
    return p, j, i1, i2, kind


def parent_keys(keys):
    """Parent key of each wavelet key; scaling keys map to themselves."""
    keys = np.asarray(keys, dtype=np.int64)
    kind = keys & 3
    p, j, i1, i2 = decode_node(keys >> 2)
    up = (node_key(p, np.maximum(j - 1, 0), i1 >> 1, i2 >> 1) << 2) | kind
    root = node_key(p, 0, 0, 0) << 2
    return np.where(kind == 0, keys, np.where(j == 0, root, up))


def children_keys(keys):
    """All child keys of the given wavelet keys (flattened, unsorted)."""
    keys = np.asarray(keys, dtype=np.int64)
    kind = keys & 3
    p, j, i1, i2 = decode_node(keys >> 2)
    out = []
    sc = kind == 0
    if sc.any():
        r = keys[sc]
        out.extend([r | 1, r | 2, r | 3])
    w = ~sc
    if w.any():
        for a in (0, 1):
            for b in (0, 1):
                nk = node_key(p[w], j[w] + 1, 2 * i1[w] + a, 2 * i2[w] + b)
                out.append((nk << 2) | kind[w])
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(out)


def root_keys(n_patches: int) -> np.ndarray:
    return node_key(np.arange(n_patches), 0, 0, 0) << 2


def key_levels(keys) -> np.ndarray:
    return decode(keys)[1]


# ---------------------------------------------------------------------------
# WaveletIndex


class WaveletIndex(NamedTuple):
    """A single basis function; ``level == -1`` for the scaling function."""

    patch: int
    level: int
    pos: tuple
    kind: Kind

    @classmethod
    def scaling(cls, patch: int) -> "WaveletIndex":
        return cls(patch, -1, (0, 0), Kind.SCALING)

    @classmethod
    def make(cls, patch: int, level: int, k1: int, k2: int, kind) -> "WaveletIndex":
        if isinstance(kind, str):
            kind = _KIND_NAMES[kind]
        kind = Kind(kind)
        if kind == Kind.SCALING:
            if level != -1 or (k1, k2) != (0, 0):
                raise ValueError("scaling index must have level -1 and pos (0, 0)")
        else:
            if not 0 <= level <= MAX_LEVEL:
                raise ValueError(f"level {level} out of range")
            if not (0 <= k1 < 2**level and 0 <= k2 < 2**level):
                raise ValueError(f"position {(k1, k2)} out of range for level {level}")
        if not 0 <= patch < MAX_PATCHES:
            raise ValueError(f"patch {patch} out of range")
        return cls(int(patch), int(level), (int(k1), int(k2)), kind)

    @property
    def key(self) -> int:
        j = max(self.level, 0)
        return int((node_key(self.patch, j, *self.pos) << 2) | int(self.kind))

    @classmethod
    def from_key(cls, key: int) -> "WaveletIndex":
        p, j, i1, i2, kind = (int(v) for v in decode(np.int64(key)))
        return cls(p, j, (i1, i2), Kind(kind))

    @property
    def support_side(self) -> float:
        return 2.0 ** -max(self.level, 0)

    def __str__(self) -> str:
        return f"({self.patch},{self.level},{self.pos},{self.kind.name.lower()})"


def children(lam: WaveletIndex) -> list:
    """Children by support inclusion: 3 root wavelets or 4 same-kind refinements."""
    return [WaveletIndex.from_key(k) for k in children_keys(np.array([lam.key]))]


def parent(lam: WaveletIndex) -> WaveletIndex | None:
    """Parent index, or None for a scaling function."""
    if lam.kind == Kind.SCALING:
        return None
    return WaveletIndex.from_key(int(parent_keys(np.array([lam.key]))[0]))


def evaluate(lam: WaveletIndex, s, t, jacobian: float):
    """Value of ``psi_lam`` at local coordinates ``(s, t)`` of its patch.

    Points outside the support give 0; the caller is responsible for using
    points on the right patch.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if lam.kind == Kind.SCALING:
        inside = (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
        return np.where(inside, 1.0 / math.sqrt(jacobian), 0.0)
    j = lam.level
    n = 2**j
    u = s * n - lam.pos[0]
    v = t * n - lam.pos[1]
    inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    # closed right/top edge of the unit square belongs to the last cell
    inside |= (u == 1) & (lam.pos[0] == n - 1) & (v >= 0) & (v <= 1)
    inside |= (v == 1) & (lam.pos[1] == n - 1) & (u >= 0) & (u <= 1)
    a = (u >= 0.5).astype(int)
    b = (v >= 0.5).astype(int)
    sign = QUAD_SIGNS[int(lam.kind)][2 * a + b]
    return np.where(inside, sign * (2.0**j / math.sqrt(jacobian)), 0.0)


# ---------------------------------------------------------------------------
# coefficient vectors and trees


def _as_keys(indices) -> np.ndarray:
    if isinstance(indices, np.ndarray):
        return indices.astype(np.int64, copy=False)
    if isinstance(indices, (Tree, CoeffVector)):
        return indices.keys
    return np.array([lam.key for lam in indices], dtype=np.int64)


class CoeffVector:
    """Finitely supported coefficient vector with sorted int64 keys.

    Exact zeros are dropped at construction so that ``support()`` is the set
    of stored indices.
    """

    __slots__ = ("keys", "values")

    def __init__(self, keys=None, values=None, *, presorted: bool = False):
        if keys is None:
            keys = np.zeros(0, dtype=np.int64)
            values = np.zeros(0)
        keys = np.asarray(keys, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if keys.shape != values.shape or keys.ndim != 1:
            raise ValueError("keys and values must be 1-d arrays of equal length")
        if not presorted:
            order = np.argsort(keys, kind="stable")
            keys, values = keys[order], values[order]
            if keys.size > 1 and np.any(keys[1:] == keys[:-1]):
                uk, inv = np.unique(keys, return_inverse=True)
                acc = np.zeros(uk.size)
                np.add.at(acc, inv, values)
                keys, values = uk, acc
        nz = values != 0.0
        if not nz.all():
            keys, values = keys[nz], values[nz]
        self.keys = keys
        self.values = values

    @classmethod
    def from_dict(cls, d: dict) -> "CoeffVector":
        items = list(d.items())
        return cls([k.key for k, _ in items], [v for _, v in items])

    def to_dict(self) -> dict:
        return {WaveletIndex.from_key(k): float(v) for k, v in zip(self.keys, self.values)}

    def __len__(self) -> int:
        return int(self.keys.size)

    def __getitem__(self, lam: WaveletIndex) -> float:
        k = lam.key
        i = np.searchsorted(self.keys, k)
        if i < self.keys.size and self.keys[i] == k:
            return float(self.values[i])
        return 0.0

    def support(self) -> set:
        return {WaveletIndex.from_key(k) for k in self.keys}

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def __add__(self, other: "CoeffVector") -> "CoeffVector":
        return CoeffVector(
            np.concatenate([self.keys, other.keys]), np.concatenate([self.values, other.values])
        )

    def __sub__(self, other: "CoeffVector") -> "CoeffVector":
        return self + other * -1.0

    def __mul__(self, c: float) -> "CoeffVector":
        return CoeffVector(self.keys, self.values * c, presorted=True)

    __rmul__ = __mul__

    def values_on(self, keys: np.ndarray) -> np.ndarray:
        """Dense values of this vector at the given sorted keys (0 if absent)."""
        out = np.zeros(keys.size)
        if self.keys.size == 0 or keys.size == 0:
            return out
        i = np.searchsorted(keys, self.keys)
        i_c = np.minimum(i, keys.size - 1)
        hit = keys[i_c] == self.keys
        out[i_c[hit]] = self.values[hit]
        return out

    def restrict(self, keys) -> "CoeffVector":
        keys = np.sort(_as_keys(keys))
        mask = np.isin(self.keys, keys, assume_unique=False)
        return CoeffVector(self.keys[mask], self.values[mask], presorted=True)

    def dumps(self) -> str:
        """Plain text: header, then ``patch level k1 k2 kind value`` per line."""
        lines = ["# patch level k1 k2 kind value"]
        p, j, i1, i2, kind = decode(self.keys)
        names = [k.name.lower() for k in Kind]
        for row in zip(p, j, i1, i2, kind, self.values):
            lines.append(f"{row[0]} {row[1]} {row[2]} {row[3]} {names[row[4]]} {row[5]:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CoeffVector":
        keys, vals = [], []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            p, j, k1, k2, kind, val = line.split()
            lam = WaveletIndex.make(int(p), int(j), int(k1), int(k2), kind)
            keys.append(lam.key)
            vals.append(float(val))
        return cls(keys, vals)

    def __repr__(self) -> str:
        return f"CoeffVector(n={len(self)}, norm={self.norm():.6g})"


class Tree:
    """Sorted, parent-closed set of wavelet keys containing all patch roots."""

    __slots__ = ("keys", "n_patches")

    def __init__(self, keys, n_patches: int, *, check: bool = True):
        keys = np.unique(np.asarray(keys, dtype=np.int64))
        self.keys = keys
        self.n_patches = int(n_patches)
        if check:
            self.validate()

    def validate(self) -> None:
        if not np.all(np.isin(root_keys(self.n_patches), self.keys)):
            raise ValueError("tree is missing patch roots")
        par = parent_keys(self.keys)
        if not np.all(np.isin(par, self.keys)):
            raise ValueError("tree is not closed under parents")
        p = decode(self.keys)[0]
        if np.any(p >= self.n_patches):
            raise ValueError("tree contains indices on unknown patches")

    def __len__(self) -> int:
        return int(self.keys.size)

    def __contains__(self, lam: WaveletIndex) -> bool:
        k = lam.key
        i = np.searchsorted(self.keys, k)
        return bool(i < self.keys.size and self.keys[i] == k)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tree)
            and self.n_patches == other.n_patches
            and np.array_equal(self.keys, other.keys)
        )

    def __hash__(self):
        return hash((self.n_patches, self.keys.tobytes()))

    @property
    def indices(self) -> set:
        return {WaveletIndex.from_key(k) for k in self.keys}

    def union(self, other) -> "Tree":
        return Tree(np.concatenate([self.keys, _as_keys(other)]), self.n_patches)

    def max_level(self) -> int:
        return int(key_levels(self.keys).max())

    def __repr__(self) -> str:
        return f"Tree(n={len(self)}, max_level={self.max_level()})"


def ancestors_closure(keys: np.ndarray, n_patches: int) -> np.ndarray:
    """Sorted union of ``keys``, all their ancestors and all patch roots."""
    keys = np.unique(np.asarray(keys, dtype=np.int64))
    out = [root_keys(n_patches), keys]
    cur = keys
    while cur.size:
        par = np.unique(parent_keys(cur[(cur & 3) != 0]))
        out.append(par)
        cur = par
    return np.unique(np.concatenate(out))


def tree_complete(indices, n_patches: int) -> Tree:
    """Smallest tree containing ``indices`` (all ancestors plus all roots)."""
    return Tree(ancestors_closure(_as_keys(indices), n_patches), n_patches, check=False)


def roots(n_patches: int) -> Tree:
    return Tree(root_keys(n_patches), n_patches, check=False)


def uniform_keys(n_patches: int, n_levels: int) -> np.ndarray:
    """All keys with wavelet level ``< n_levels`` (plus scaling functions)."""
    out = [root_keys(n_patches)]
    for j in range(n_levels):
        n = 2**j
        p, i1, i2 = np.meshgrid(np.arange(n_patches), np.arange(n), np.arange(n), indexing="ij")
        nk = node_key(p.ravel(), j, i1.ravel(), i2.ravel()) << 2
        out.extend([nk | 1, nk | 2, nk | 3])
    return np.sort(np.concatenate(out))


def uniform_tree(n_patches: int, n_levels: int) -> Tree:
    """Uniform tree of all wavelets with level ``< n_levels``; size ``P * 4**n_levels``."""
    return Tree(uniform_keys(n_patches, n_levels), n_patches, check=False)


# ---------------------------------------------------------------------------
# single-patch transforms


def haar_analysis(values, jacobian: float, patch: int = 0) -> CoeffVector:
    """Coefficients of a patch-constant function given on a full dyadic grid.

    Parameters
    ----------
    values : array_like, shape (2**J, 2**J)
        Function values; ``values[i1, i2]`` is the value on cell
        ``[i1, i1+1] x [i2, i2+1] * 2**-J``.
    jacobian : float
        Patch area.
    patch : int
        Patch id stored in the returned keys.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] & (v.shape[0] - 1):
        raise ValueError(f"grid must be 2**J x 2**J, got shape {v.shape}")
    n_levels = int(round(math.log2(v.shape[0])))
    integ = v * (jacobian / 4.0**n_levels)
    keys, vals = [], []
    for j in range(n_levels - 1, -1, -1):
        q = [integ[a::2, b::2] for a in (0, 1) for b in (0, 1)]
        scale = 2.0**j / math.sqrt(jacobian)
        n = 2**j
        i1, i2 = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        nk = node_key(patch, j, i1.ravel(), i2.ravel()) << 2
        for kind in (1, 2, 3):
            c = sum(QUAD_SIGNS[kind][m] * q[m] for m in range(4)) * scale
            keys.append(nk | kind)
            vals.append(c.ravel())
        integ = q[0] + q[1] + q[2] + q[3]
    keys.append(np.array([node_key(patch, 0, 0, 0) << 2]))
    vals.append(np.array([integ[0, 0] / math.sqrt(jacobian)]))
    return CoeffVector(np.concatenate(keys), np.concatenate(vals))


def haar_synthesis(v: CoeffVector, n_levels: int, jacobian: float, patch: int = 0) -> np.ndarray:
    """Inverse of :func:`haar_analysis`: values on the ``2**n_levels`` grid."""
    p, j, i1, i2, kind = decode(v.keys)
    on = p == patch
    if np.any(j[on] >= n_levels):
        raise ValueError(f"coefficient at level >= {n_levels}")
    vals = v.values[on]
    j, i1, i2, kind = j[on], i1[on], i2[on], kind[on]
    # work with cell integrals, coarse to fine
    sc = vals[kind == 0]
    integ = np.full((1, 1), (sc[0] if sc.size else 0.0) * math.sqrt(jacobian))
    for lev in range(n_levels):
        n = 2**lev
        coef = np.zeros((4, n, n))
        m = (j == lev) & (kind > 0)
        coef[kind[m], i1[m], i2[m]] = vals[m]
        scale = math.sqrt(jacobian) / 2.0**lev  # inverse of the analysis scale
        fine = np.empty((2 * n, 2 * n))
        for a in (0, 1):
            for b in (0, 1):
                q = 2 * a + b
                det = sum(QUAD_SIGNS[k][q] * coef[k] for k in (1, 2, 3)) * scale
                fine[a::2, b::2] = (integ + det) / 4.0
        integ = fine
    return integ * (4.0**n_levels / jacobian)


# ---------------------------------------------------------------------------
# sequence norms


@dataclass(frozen=True)
class BesovParams:
    """Besov-type parameters ``(alpha, p, q)``; ``q = inf`` allowed."""

    alpha: float
    p: float
    q: float

    def is_admissible(self) -> bool:
        if self.alpha < 0 or self.p <= 0 or self.q <= 0:
            return False
        ip = 1.0 / self.p
        upper = self.alpha / 2 + 0.5
        if not (0.5 - 1e-14 <= ip <= upper + 1e-14):
            return False
        if abs(ip - upper) <= 1e-14 and self.q > 2:
            return False
        return True

    @classmethod
    def adaptivity_scale(cls, alpha: float) -> "BesovParams":
        """``tau`` with ``1/tau = alpha/2 + 1/2`` (surface dimension 2)."""
        tau = 1.0 / (alpha / 2 + 0.5)
        return cls(alpha, tau, tau)


def sobolev_seq_norm(v: CoeffVector, s: float) -> float:
    """Weighted sequence norm ``(sum_sc c^2 + sum_j 4^{sj} sum |c|^2)^{1/2}``."""
    if abs(s) >= 0.5:
        raise ValueError(f"|s| must be < 1/2, got {s}")
    j = key_levels(v.keys)
    w = np.where(j < 0, 1.0, 4.0 ** (s * np.maximum(j, 0)))
    return float(np.sqrt(np.sum(w * v.values**2)))


def besov_norm(v: CoeffVector, params: BesovParams, jacobians: Sequence[float]) -> float:
    """Besov-type quasi-norm of a coefficient vector.

    The projector term is the ``L_p`` norm of the patchwise constant
    ``c_scaling / sqrt(A)``, i.e. ``(sum_p A_p |c_p/sqrt(A_p)|^p)^{1/p}``.
    """
    if not params.is_admissible():
        raise ValueError(f"inadmissible Besov parameters {params}")
    a, p, q = params.alpha, params.p, params.q
    pat, j, *_ = decode(v.keys)
    sc = j < 0
    jac = np.asarray(jacobians, dtype=float)[pat[sc]]
    proj = np.sum(jac * np.abs(v.values[sc] / np.sqrt(jac)) ** p) ** (1.0 / p)
    if not np.any(~sc):
        return float(proj)
    jw, cw = j[~sc], np.abs(v.values[~sc])
    levels = np.arange(jw.max() + 1)
    lp = np.zeros(levels.size)
    np.add.at(lp, jw, cw**p)
    terms = 2.0 ** (levels * (a + 2 * (0.5 - 1.0 / p))) * lp ** (1.0 / p)
    if math.isinf(q):
        return float(proj + terms.max())
    return float(proj + np.sum(terms**q) ** (1.0 / q))


def best_n_term_curve(v: CoeffVector, n_list: Iterable[int]) -> list:
    """``[(n, sigma_n)]`` with ``sigma_n`` the l2 norm of all but the n largest."""
    mag = np.sort(np.abs(v.values))  # ascending
    # tail[m] = l2 norm of the m smallest entries, summed small-to-large
    tail = np.concatenate([[0.0], np.sqrt(np.cumsum(mag**2))])
    n_tot = mag.size
    out = []
    for n in n_list:
        n = int(n)
        if n < 0:
            raise ValueError("n must be nonnegative")
        out.append((n, float(tail[max(n_tot - n, 0)])))
    return out
