"""Leaf-cell partitions induced by wavelet trees.

A tree ``T`` splits the dyadic square of every wavelet it contains; the
resulting leaves are the coarsest cells on which every ``psi`` in ``T`` is
constant.  Functions spanned by ``T`` are then vectors of leaf values and

    values = Phi @ coeffs,    coeffs = Phi.T @ (cell integrals),

with ``Phi[leaf, lam] = psi_lam`` on that leaf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import QUAD_SIGNS, decode, decode_node, node_key
from .surface import Surface

__all__ = ["Forest", "build_forest", "synthesis_matrix", "N_MOMENTS"]

#: number of node moments used by the far field
N_MOMENTS = 6


@dataclass(eq=False)
class Forest:
    """Nodes of the dyadic forest spanned by a set of wavelet keys.

    Nodes are sorted by key.  ``child[n]`` lists the 4 children in quadrant
    order ``q = 2a + b`` or ``-1`` for leaves; ``leaf[n]`` is the leaf number
    (position among leaves in key order) or ``-1``.
    """

    surface: Surface
    keys: np.ndarray
    patch: np.ndarray
    level: np.ndarray
    i1: np.ndarray
    i2: np.ndarray
    child: np.ndarray
    leaf: np.ndarray
    leaf_nodes: np.ndarray
    roots: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.keys.size)

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_nodes.size)

    @property
    def leaf_keys(self) -> np.ndarray:
        return self.keys[self.leaf_nodes]

    def geometry(self, nodes=None) -> dict:
        """Corner, side vectors, centre, AABB, diameter and area of nodes."""
        if nodes is None:
            nodes = np.arange(self.n_nodes)
        return cell_geometry(self.surface, self.patch[nodes], self.level[nodes], self.i1[nodes], self.i2[nodes])

    def kernel_arrays(self) -> dict:
        g = self.geometry()
        g["patch"] = self.patch.astype(np.int64)
        g["child"] = self.child
        g["leaf"] = self.leaf
        g["roots"] = self.roots
        return g

    def moment_operator(self) -> sp.csr_matrix:
        """Sparse map leaf values -> stacked node moments, shape (6 N, L).

        Blocks: integral ``m``; first moments ``d1, d2`` in the patch
        parameters relative to the node centre; second moments
        ``q11, q12, q22`` of ``v - mean(v)`` over the node.
        """
        n, nl = self.n_nodes, self.n_leaves
        ln = self.leaf_nodes
        jl, p = self.level[ln], self.patch[ln]
        area = np.array([q.jacobian for q in self.surface.patches])[p] / 4.0 ** jl
        hl = np.ldexp(1.0, -jl)
        sl = (self.i1[ln] + 0.5) * hl
        tl = (self.i2[ln] + 0.5) * hl
        rows, cols, vals = [], [], []
        lid = np.arange(nl)
        for d in range(int(jl.max()) + 1 if nl else 0):
            has = jl >= d
            ja = jl[has] - d
            k = node_key(p[has], ja, self.i1[ln][has] >> d, self.i2[ln][has] >> d)
            anc = np.searchsorted(self.keys, k)
            a = area[has]
            ha = np.ldexp(1.0, -ja)
            ds = sl[has] - (self.i1[anc] + 0.5) * ha
            dt = tl[has] - (self.i2[anc] + 0.5) * ha
            var_l = hl[has] ** 2 / 12.0
            var_n = ha**2 / 12.0
            blocks = (
                a,
                a * ds,
                a * dt,
                a * (ds * ds + var_l - var_n),
                a * ds * dt,
                a * (dt * dt + var_l - var_n),
            )
            for b, v in enumerate(blocks):
                rows.append(anc + b * n)
                cols.append(lid[has])
                vals.append(v)
        if not rows:
            return sp.csr_matrix((N_MOMENTS * n, nl))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N_MOMENTS * n, nl),
        )


def cell_geometry(surface: Surface, patch, level, i1, i2) -> dict:
    org = np.array([q.origin for q in surface.patches])
    e1 = np.array([q.e1 for q in surface.patches])
    e2 = np.array([q.e2 for q in surface.patches])
    jac = np.array([q.jacobian for q in surface.patches])
    scale = np.ldexp(1.0, -np.asarray(level, dtype=np.int64))[:, None]
    h1 = e1[patch] * scale
    h2 = e2[patch] * scale
    c0 = org[patch] + np.asarray(i1)[:, None] * h1 + np.asarray(i2)[:, None] * h2
    pts = np.stack([c0, c0 + h1, c0 + h1 + h2, c0 + h2])
    a = h1 + h2
    b = h1 - h2
    diam = np.maximum(np.sqrt(np.einsum("ij,ij->i", a, a)), np.sqrt(np.einsum("ij,ij->i", b, b)))
    return {
        "c0": c0,
        "h1": h1,
        "h2": h2,
        "center": c0 + 0.5 * (h1 + h2),
        "lo": pts.min(axis=0),
        "hi": pts.max(axis=0),
        "diam": diam,
        "area": jac[patch] * scale[:, 0] ** 2,
    }


def build_forest(surface: Surface, keys: np.ndarray) -> Forest:
    """Forest of dyadic cells for a parent-closed set of wavelet keys."""
    keys = np.asarray(keys, dtype=np.int64)
    n_p = surface.n_patches
    root_nodes = node_key(np.arange(n_p), 0, 0, 0)
    split = np.unique(keys[(keys & 3) != 0] >> 2)
    sp_, sj, s1, s2 = decode_node(split)
    kids = [node_key(sp_, sj + 1, 2 * s1 + a, 2 * s2 + b) for a in (0, 1) for b in (0, 1)]
    nodes = np.unique(np.concatenate([root_nodes, split] + kids))
    p, j, i1, i2 = decode_node(nodes)
    child = np.full((nodes.size, 4), -1, dtype=np.int64)
    if split.size:
        pos = np.searchsorted(nodes, split)
        for q in range(4):
            child[pos, q] = np.searchsorted(nodes, kids[q])
    is_leaf = child[:, 0] < 0
    leaf_nodes = np.flatnonzero(is_leaf)
    leaf = np.full(nodes.size, -1, dtype=np.int64)
    leaf[leaf_nodes] = np.arange(leaf_nodes.size)
    return Forest(
        surface=surface,
        keys=nodes,
        patch=p,
        level=j,
        i1=i1,
        i2=i2,
        child=child,
        leaf=leaf,
        leaf_nodes=leaf_nodes,
        roots=np.searchsorted(nodes, root_nodes),
    )


def synthesis_matrix(forest: Forest, keys: np.ndarray) -> sp.csr_matrix:
    """``Phi[leaf, i] = psi_{keys[i]}`` on that leaf (CSR, leaves x keys).

    Every wavelet in ``keys`` must be constant on the forest's leaves.
    """
    keys = np.asarray(keys, dtype=np.int64)
    ln = forest.leaf_nodes
    p, jl, i1, i2 = forest.patch[ln], forest.level[ln], forest.i1[ln], forest.i2[ln]
    inv_sqrt = 1.0 / np.sqrt(np.array([q.jacobian for q in forest.surface.patches]))
    lid = np.arange(ln.size)
    rows, cols, vals = [], [], []

    def lookup(k):
        pos = np.searchsorted(keys, k)
        pos_c = np.minimum(pos, max(keys.size - 1, 0))
        hit = keys[pos_c] == k if keys.size else np.zeros(k.size, dtype=bool)
        return pos_c, hit

    sc, hit = lookup(node_key(p, 0, 0, 0) << 2)
    rows.append(lid[hit]), cols.append(sc[hit]), vals.append(inv_sqrt[p[hit]])
    for d in range(1, int(jl.max()) + 1 if ln.size else 0):
        has = np.flatnonzero(jl >= d)
        ja = jl[has] - d
        nk = node_key(p[has], ja, i1[has] >> d, i2[has] >> d) << 2
        quad = 2 * ((i1[has] >> (d - 1)) & 1) + ((i2[has] >> (d - 1)) & 1)
        mag = np.ldexp(inv_sqrt[p[has]], ja)
        for kind in (1, 2, 3):
            pos, hit = lookup(nk | kind)
            rows.append(has[hit])
            cols.append(pos[hit])
            vals.append(QUAD_SIGNS[kind][quad[hit]] * mag[hit])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ln.size, keys.size),
    )


def key_support_centers(surface: Surface, keys: np.ndarray) -> np.ndarray:
    """Centres in R^3 of the supports of the given wavelet keys."""
    p, j, i1, i2, _ = decode(keys)
    jj = np.maximum(j, 0)
    g = cell_geometry(surface, p, jj, i1, i2)
    return g["center"]

