"""Pure NumPy implementation of the hot kernels.

Used when the compiled extension is unavailable or when
``AWBEM_BACKEND=python`` is set.  The traversal is level-synchronous: all
active (target, region, source node) triples are classified at once and
either resolved or refined into the next frontier.
"""

from __future__ import annotations

import numpy as np

FOUR_PI = 4.0 * np.pi


def _tri_solid_angle(r1, r2, r3):
    """Signed solid angle of triangles with vertex offsets ``ri = Pi - x``."""
    n1 = np.sqrt(np.einsum("...i,...i->...", r1, r1))
    n2 = np.sqrt(np.einsum("...i,...i->...", r2, r2))
    n3 = np.sqrt(np.einsum("...i,...i->...", r3, r3))
    num = np.einsum("...i,...i->...", r1, np.cross(r2, r3))
    den = (
        n1 * n2 * n3
        + np.einsum("...i,...i->...", r1, r2) * n3
        + np.einsum("...i,...i->...", r1, r3) * n2
        + np.einsum("...i,...i->...", r2, r3) * n1
    )
    return np.where(num == 0.0, 0.0, 2.0 * np.arctan2(num, den))


def solid_angle_quad(c0, h1, h2, x):
    """Signed solid angle of parallelograms ``c0 + [0,1]h1 + [0,1]h2`` seen from ``x``.

    Positive when ``x`` lies on the side opposite to ``h1 x h2``.  All
    arguments broadcast against each other.
    """
    r0 = c0 - x
    r1 = r0 + h1
    r2 = r1 + h2
    r3 = r0 + h2
    return _tri_solid_angle(r0, r1, r2) + _tri_solid_angle(r0, r2, r3)


def panel_series(r, r2, E1, E2):
    """``r^3 / |N| * int_N |r - xi|^-3 dxi`` to fourth order for a centred parallelogram.

    ``r`` has shape (F, Q, 3), ``E1, E2`` (F, 3) are the node's side vectors.
    Odd moments vanish by central symmetry; the neglected sixth-order term
    is below 1e-4 of the leading one for ``diam / dist <= 1/2``.
    """
    al = np.einsum("ijk,ik->ij", r, E1)
    be = np.einsum("ijk,ik->ij", r, E2)
    g11 = np.einsum("ij,ij->i", E1, E1)[:, None]
    g12 = np.einsum("ij,ij->i", E1, E2)[:, None]
    g22 = np.einsum("ij,ij->i", E2, E2)[:, None]
    a2, b2 = al * al, be * be
    p2 = (a2 + b2) / (12.0 * r2 * r2)
    q = (g11 + g22) / (12.0 * r2)
    q2 = ((g11 * g11 + g22 * g22) / 80.0 + (2.0 * g11 * g22 + 4.0 * g12 * g12) / 144.0) / (r2 * r2)
    p2q = ((a2 * g11 + b2 * g22) / 80.0 + (a2 * g22 + b2 * g11 + 4.0 * al * be * g12) / 144.0) / (r2 * r2 * r2)
    p4 = ((a2 * a2 + b2 * b2) / 80.0 + a2 * b2 / 24.0) / (r2 * r2 * r2 * r2)
    return 1.0 - 1.5 * q + 7.5 * p2 + 1.875 * q2 - 26.25 * p2q + 39.375 * p4


def gauss01(order: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _tensor_rule(order: int):
    x, w = gauss01(order)
    a, b = np.meshgrid(x, x, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    return a.ravel(), b.ravel(), (wa * wb).ravel()


def _aabb(c0, h1, h2):
    pts = np.stack([c0, c0 + h1, c0 + h1 + h2, c0 + h2])
    return pts.min(axis=0), pts.max(axis=0)


def _diam(h1, h2):
    a = h1 + h2
    b = h1 - h2
    return np.maximum(np.sqrt(np.einsum("...i,...i->...", a, a)), np.sqrt(np.einsum("...i,...i->...", b, b)))


def traverse(geom, src, tgt, params, moments=None, chunk=2048, threads=1):
    """Cell integrals of the double layer operator.

    Parameters
    ----------
    geom : dict
        ``normal, e1, e2`` of shape (P, 3) and ``coplanar`` (P, P) uint8.
    src : dict
        Source forest arrays from :meth:`awbem.forest.Forest.kernel_arrays`.
    tgt : dict
        ``patch`` (T,), ``c0, h1, h2`` (T, 3).
    params : dict
        ``theta, theta_near, near_depth, near_order, far_order``.
    moments : tuple or None
        ``(leaf_values, node_moments)`` with ``node_moments`` of shape
        (6, N) holding mass, the two first moments and the three centred
        second moments.  When given, the target integrals are returned
        directly.  Otherwise the interaction plan is returned as
        ``(near_t, near_s, near_v, far_t, far_n, c0, ..., c5)`` with the
        entries of each target contiguous and sorted by column.
    threads : int
        Ignored; accepted for signature parity with the compiled module.
    """
    n_t = tgt["patch"].shape[0]
    if moments is not None:
        out = np.zeros(n_t)
        for lo in range(0, n_t, chunk):
            sl = slice(lo, min(lo + chunk, n_t))
            res = _traverse_chunk(geom, src, tgt, params, np.arange(sl.start, sl.stop))
            out[sl] = _apply_chunk(res, moments, sl.start, sl.stop - sl.start)
        return out
    parts = []
    for lo in range(0, n_t, chunk):
        idx = np.arange(lo, min(lo + chunk, n_t))
        parts.append(_compact(_traverse_chunk(geom, src, tgt, params, idx)))
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(len(parts[0])))


def _apply_chunk(res, moments, start, count):
    leaf_v, mom = moments
    nt, ns, nv, ft, fn = res[:5]
    out = np.zeros(count)
    np.add.at(out, nt - start, nv * leaf_v[ns])
    far = np.zeros(ft.size)
    for k, coef in enumerate(res[5:]):
        far += coef * mom[k][fn]
    np.add.at(out, ft - start, far)
    return out


def _compact(res):
    """Sort entries by (target, column) and merge duplicates."""
    nt, ns, nv, ft, fn = res[:5]

    def merge(t, c, vals):
        order = np.lexsort((c, t))
        t, c = t[order], c[order]
        vals = [v[order] for v in vals]
        if t.size == 0:
            return t, c, vals
        new = np.ones(t.size, dtype=bool)
        new[1:] = (t[1:] != t[:-1]) | (c[1:] != c[:-1])
        grp = np.cumsum(new) - 1
        n = int(grp[-1]) + 1
        out = []
        for v in vals:
            acc = np.zeros(n)
            np.add.at(acc, grp, v)
            out.append(acc)
        return t[new], c[new], out

    nt, ns, (nv,) = merge(nt, ns, [nv])
    ft, fn, fc = merge(ft, fn, list(res[5:]))
    return (nt, ns, nv, ft, fn, *fc)


def _traverse_chunk(geom, src, tgt, params, tidx):
    theta = params["theta"]
    theta_near = params["theta_near"]
    depth_fac = 2.0 ** (-params["near_depth"])
    qa_n, qb_n, qw_n = _tensor_rule(params["near_order"])
    qa_f, qb_f, qw_f = _tensor_rule(params["far_order"])

    normal, e1, e2 = geom["normal"], geom["e1"], geom["e2"]
    cop = geom["coplanar"]
    s_patch, s_c0, s_h1, s_h2 = src["patch"], src["c0"], src["h1"], src["h2"]
    s_lo, s_hi, s_diam = src["lo"], src["hi"], src["diam"]
    s_center, s_child, s_leaf = src["center"], src["child"], src["leaf"]
    t_patch, t_c0, t_h1, t_h2 = tgt["patch"], tgt["c0"], tgt["h1"], tgt["h2"]
    t_diam = _diam(t_h1, t_h2)

    roots = src["roots"]
    tt = np.repeat(tidx, roots.size)
    nn = np.tile(roots, tidx.size)
    keep = cop[t_patch[tt], s_patch[nn]] == 0
    tt, nn = tt[keep], nn[keep]
    dd = np.zeros(tt.size, dtype=np.int64)
    ra = np.zeros(tt.size, dtype=np.int64)
    rb = np.zeros(tt.size, dtype=np.int64)

    near = ([], [], [])
    far = ([], [], [], [], [], [], [], [])
    while tt.size:
        scale = np.ldexp(1.0, -dd)[:, None]
        h1 = t_h1[tt] * scale
        h2 = t_h2[tt] * scale
        c0 = t_c0[tt] + ra[:, None] * h1 + rb[:, None] * h2
        lo, hi = _aabb(c0, h1, h2)
        gap = np.maximum(0.0, np.maximum(s_lo[nn] - hi, lo - s_hi[nn]))
        dist = np.sqrt(np.einsum("ij,ij->i", gap, gap))
        diam_r = _diam(h1, h2)
        diam_n = s_diam[nn]
        is_leaf = s_child[nn, 0] < 0

        is_far = np.maximum(diam_r, diam_n) <= theta * dist
        capped = diam_r <= depth_fac * np.minimum(t_diam[tt], diam_n)
        is_near = ~is_far & is_leaf & ((diam_r <= theta_near * dist) | capped)
        split_r = ~is_far & ~is_near & (is_leaf | (diam_r > diam_n))
        descend = ~is_far & ~is_near & ~split_r

        # far field: node mean plus first and second moment corrections
        f = np.flatnonzero(is_far)
        if f.size:
            fn = nn[f]
            pts = (
                c0[f, None, :]
                + qa_f[None, :, None] * h1[f, None, :]
                + qb_f[None, :, None] * h2[f, None, :]
            )
            area_r = np.linalg.norm(np.cross(h1[f], h2[f]), axis=1)
            w = area_r[:, None] * qw_f[None, :]
            r = pts - s_center[fn][:, None, :]
            r2 = np.einsum("ijk,ijk->ij", r, r)
            eta = normal[s_patch[fn]][:, None, :]
            g = 3.0 * np.einsum("ijk,ijk->ij", eta, r) / (FOUR_PI * r2 * r2 * np.sqrt(r2))
            a = np.sum(w * g * r2 / 3.0 * panel_series(r, r2, s_h1[fn], s_h2[fn]), axis=1)
            re1 = np.einsum("ijk,ik->ij", r, e1[s_patch[fn]])
            re2 = np.einsum("ijk,ik->ij", r, e2[s_patch[fn]])
            b1 = np.sum(w * g * re1, axis=1)
            b2 = np.sum(w * g * re2, axis=1)
            # second-order term 1/2 <eta,r> (15 (r.d)^2 / r^7 - 3 |d|^2 / r^5)
            ge = e1[s_patch[fn]]
            gf = e2[s_patch[fn]]
            g11 = np.einsum("ij,ij->i", ge, ge)[:, None]
            g12 = np.einsum("ij,ij->i", ge, gf)[:, None]
            g22 = np.einsum("ij,ij->i", gf, gf)[:, None]
            h = g / 6.0  # = <eta,r> / (8 pi r^5)
            c11 = np.sum(w * h * (15.0 * re1 * re1 / r2 - 3.0 * g11), axis=1)
            c12 = np.sum(w * h * (30.0 * re1 * re2 / r2 - 6.0 * g12), axis=1)
            c22 = np.sum(w * h * (15.0 * re2 * re2 / r2 - 3.0 * g22), axis=1)
            for lst, v in zip(far, (tt[f], fn, a, b1, b2, c11, c12, c22)):
                lst.append(v)

        # near field: Gauss on the region, exact inner integral
        g_ = np.flatnonzero(is_near)
        if g_.size:
            gn = nn[g_]
            pts = (
                c0[g_, None, :]
                + qa_n[None, :, None] * h1[g_, None, :]
                + qb_n[None, :, None] * h2[g_, None, :]
            )
            area_r = np.linalg.norm(np.cross(h1[g_], h2[g_]), axis=1)
            om = solid_angle_quad(
                s_c0[gn][:, None, :], s_h1[gn][:, None, :], s_h2[gn][:, None, :], pts
            )
            val = -area_r * np.sum(qw_n[None, :] * om, axis=1) / FOUR_PI
            near[0].append(tt[g_])
            near[1].append(s_leaf[gn])
            near[2].append(val)

        # refine
        s = np.flatnonzero(split_r)
        d = np.flatnonzero(descend)
        n_tt = [np.repeat(tt[s], 4), np.repeat(tt[d], 4)]
        n_dd = [np.repeat(dd[s] + 1, 4), np.repeat(dd[d], 4)]
        qa = np.tile([0, 0, 1, 1], s.size)
        qb = np.tile([0, 1, 0, 1], s.size)
        n_ra = [2 * np.repeat(ra[s], 4) + qa, np.repeat(ra[d], 4)]
        n_rb = [2 * np.repeat(rb[s], 4) + qb, np.repeat(rb[d], 4)]
        n_nn = [np.repeat(nn[s], 4), s_child[nn[d]].ravel()]
        tt = np.concatenate(n_tt)
        dd = np.concatenate(n_dd)
        ra = np.concatenate(n_ra)
        rb = np.concatenate(n_rb)
        nn = np.concatenate(n_nn).astype(np.int64)

    def cat(lst, dtype=float):
        return np.concatenate(lst) if lst else np.zeros(0, dtype=dtype)

    return (
        cat(near[0], np.int64),
        cat(near[1], np.int64),
        cat(near[2]),
        cat(far[0], np.int64),
        cat(far[1], np.int64),
        cat(far[2]),
        cat(far[3]),
        cat(far[4]),
        cat(far[5]),
        cat(far[6]),
        cat(far[7]),
    )


def far_apply(ptr, idx, coef, mom, threads=1):
    """``out[t] = sum_{i in row t} sum_k coef[i, k] * mom[k, idx[i]]``."""
    n_t = ptr.shape[0] - 1
    vals = np.einsum("ik,ki->i", coef.astype(np.float64), mom[:, idx])
    rows = np.repeat(np.arange(n_t), np.diff(ptr))
    return np.bincount(rows, weights=vals, minlength=n_t)


def solid_angle_many(c0, h1, h2, x):
    """Solid angles of ``n`` parallelograms seen from ``n`` points."""
    return solid_angle_quad(c0, h1, h2, x)
