"""Fast application of the double layer operator to piecewise constants.

A density that is constant on the leaves of a source forest is mapped to
the integrals ``int_Q K v`` over target cells ``Q``.  Pairs of a target
subregion ``R`` and a source node ``N`` are resolved by a dual traversal:

* coplanar pairs vanish;
* well separated pairs, ``max(diam R, diam N) <= theta * dist``, use a
  fourth-order series of the solid angle of ``N`` for the node mean plus
  first and centred second moment terms for the in-node variation
  (``far_order`` Gauss points on ``R``);
* near leaf pairs use ``near_order`` Gauss points on ``R`` with the exact
  inner integral, after splitting ``R`` until
  ``diam R <= theta_near * dist`` or ``diam R`` drops ``near_depth`` levels
  below the smaller of the two cells.

Dropping the wavelet details of a far source node beyond its first
moments is a compression of the Galerkin matrix; the neglected terms decay
like ``(diam / dist)^3`` relative to the retained ones.

The traversal emits a sparse *plan*: exact near entries (target x leaf)
and far coefficients (target x node, six float32 moment weights each).
Applying the plan costs one sparse product and one gather; plans that exceed the memory budget fall back to
re-running the traversal per application.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _backend
from .forest import N_MOMENTS, Forest, build_forest, cell_geometry, synthesis_matrix
from .surface import Surface

__all__ = ["ApplyParams", "CellOperator", "GalerkinOperator", "target_arrays"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ApplyParams:
    """Accuracy and resource parameters of the fast operator."""

    theta: float = 0.5
    theta_near: float = 1.0
    near_depth: int = 3
    near_order: int = 3
    far_order: int = 2
    threads: int = 1
    backend: str | None = None
    #: maximal number of stored plan entries before going matrix-free
    plan_budget: int = 40_000_000
    #: targets per traversal call
    chunk: int = 8192

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.theta_near <= 0 or self.near_order < 1 or self.far_order < 1:
            raise ValueError("invalid near-field parameters")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def kernel_params(self) -> dict:
        return {
            "theta": float(self.theta),
            "theta_near": float(self.theta_near),
            "near_depth": int(self.near_depth),
            "near_order": int(self.near_order),
            "far_order": int(self.far_order),
        }


def _geom_arrays(surface: Surface) -> dict:
    return {
        "normal": np.array([p.normal for p in surface.patches]),
        "e1": np.array([p.e1 for p in surface.patches]),
        "e2": np.array([p.e2 for p in surface.patches]),
        "coplanar": surface.coplanar_matrix().astype(np.uint8),
    }


def target_arrays(surface: Surface, patch, level, i1, i2) -> dict:
    g = cell_geometry(surface, np.asarray(patch), np.asarray(level), np.asarray(i1), np.asarray(i2))
    return {"patch": np.asarray(patch, dtype=np.int64), "c0": g["c0"], "h1": g["h1"], "h2": g["h2"]}


def _slice_targets(tgt: dict, lo: int, hi: int) -> dict:
    return {k: np.ascontiguousarray(v[lo:hi]) for k, v in tgt.items()}


class CellOperator:
    """Linear map: source leaf values -> target cell integrals of ``K v``."""

    def __init__(self, forest: Forest, targets: dict, params: ApplyParams = ApplyParams(), store: bool = True):
        self.forest = forest
        self.targets = targets
        self.params = params
        self.kernels = _backend.get(params.backend)
        self._geom = _geom_arrays(forest.surface)
        self._src = {k: np.ascontiguousarray(v) for k, v in forest.kernel_arrays().items()}
        self.moments = forest.moment_operator()
        self.n_targets = int(targets["patch"].shape[0])
        self.near = None
        self.far = None
        if store:
            self._build_plan()

    @property
    def stored(self) -> bool:
        return self.near is not None

    def _traverse(self, tgt, moments=None):
        return self.kernels.traverse(
            self._geom, self._src, tgt, self.params.kernel_params(), moments=moments, threads=self.params.threads
        )

    def _build_plan(self) -> None:
        n_t, n_l = self.n_targets, self.forest.n_leaves
        near_parts, far_parts = [], []
        total = 0
        for lo in range(0, n_t, self.params.chunk):
            hi = min(lo + self.params.chunk, n_t)
            res = self._traverse(_slice_targets(self.targets, lo, hi))
            nt, ns, nv, ft, fn = res[:5]
            total += nv.size + ft.size
            if total > self.params.plan_budget:
                log.info("plan exceeds budget (%d entries); switching to matrix-free", total)
                return
            near_parts.append((nt + lo, ns, nv))
            far_parts.append(
                (ft + lo, fn.astype(np.int32), np.column_stack(res[5:]).astype(np.float32))
            )
            del res

        def cat(parts, k, empty):
            return np.concatenate([p[k] for p in parts]) if parts else empty

        nt = cat(near_parts, 0, np.zeros(0, np.int64)).astype(np.int64)
        ns = cat(near_parts, 1, np.zeros(0, np.int64)).astype(np.int64)
        nv = cat(near_parts, 2, np.zeros(0))
        self.near = sp.csr_matrix((nv, (nt, ns)), shape=(n_t, n_l))
        ft = cat(far_parts, 0, np.zeros(0, np.int64))
        # far entries arrive grouped by target in ascending order
        self.far_ptr = np.zeros(n_t + 1, dtype=np.int64)
        np.cumsum(np.bincount(ft, minlength=n_t), out=self.far_ptr[1:])
        self.far_idx = np.ascontiguousarray(cat(far_parts, 1, np.zeros(0, np.int32)))
        self.far_coef = np.ascontiguousarray(cat(far_parts, 2, np.zeros((0, N_MOMENTS), np.float32)))
        self.far = (self.far_ptr, self.far_idx, self.far_coef)

    def nnz(self) -> int:
        """Stored near entries plus far (target, node) pairs."""
        return 0 if self.near is None else int(self.near.nnz + self.far_idx.size)

    def matvec(self, leaf_values: np.ndarray) -> np.ndarray:
        leaf_values = np.asarray(leaf_values, dtype=float)
        mom = np.ascontiguousarray((self.moments @ leaf_values).reshape(N_MOMENTS, self.forest.n_nodes))
        if self.stored:
            far = self.kernels.far_apply(*self.far, mom, threads=self.params.threads)
            return self.near @ leaf_values + far
        out = np.empty(self.n_targets)
        for lo in range(0, self.n_targets, self.params.chunk):
            hi = min(lo + self.params.chunk, self.n_targets)
            out[lo:hi] = self._traverse(_slice_targets(self.targets, lo, hi), moments=(leaf_values, mom))
        return out


def apply_cells(forest: Forest, leaf_values: np.ndarray, targets: dict, params: ApplyParams = ApplyParams()) -> np.ndarray:
    """One-shot ``int_Q K v`` over target cells without storing a plan."""
    op = CellOperator(forest, targets, params, store=False)
    return op.matvec(leaf_values)


class GalerkinOperator:
    """``(1/2 I - K)`` restricted to a tree, in the tree's key order."""

    def __init__(self, surface: Surface, keys: np.ndarray, params: ApplyParams = ApplyParams()):
        self.surface = surface
        self.keys = np.asarray(keys, dtype=np.int64)
        self.forest = build_forest(surface, self.keys)
        self.phi = synthesis_matrix(self.forest, self.keys)
        self.phi_t = self.phi.T.tocsr()
        f = self.forest
        ln = f.leaf_nodes
        tgt = target_arrays(surface, f.patch[ln], f.level[ln], f.i1[ln], f.i2[ln])
        self.cells = CellOperator(f, tgt, params)
        self.shape = (self.keys.size, self.keys.size)

    def apply_K(self, c: np.ndarray) -> np.ndarray:
        return self.phi_t @ self.cells.matvec(self.phi @ c)

    def matvec(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return 0.5 * c - self.apply_K(c)

    def as_linear_operator(self):
        from scipy.sparse.linalg import LinearOperator

        return LinearOperator(self.shape, matvec=self.matvec, dtype=float)

    def to_dense(self) -> np.ndarray:
        n = self.keys.size
        return np.column_stack([self.matvec(e) for e in np.eye(n)])
