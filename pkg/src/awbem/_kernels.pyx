# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: solid angles, the dual traversal and plan products.

Mirrors :mod:`awbem._kernels_py`.  Each target is traversed depth-first by
one thread with its own buffers, so results do not depend on the number of
threads.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, atan2, ldexp, fabs
from libc.stdlib cimport qsort
from libcpp.vector cimport vector

cnp.import_array()

cdef double FOUR_PI = 12.566370614359172

cdef struct Frame:
    int depth
    double ra
    double rb
    long node

cdef struct NearEntry:
    long col
    long seq
    double v

cdef struct FarEntry:
    long node
    long seq
    double c[6]

cdef struct Ctx:
    # patches
    const double* normal
    const double* e1
    const double* e2
    const unsigned char* cop
    long n_patch
    # source nodes
    const long* s_patch
    const double* s_c0
    const double* s_h1
    const double* s_h2
    const double* s_center
    const double* s_lo
    const double* s_hi
    const double* s_diam
    const double* s_area
    const long* s_child
    const long* s_leaf
    const long* roots
    long n_roots
    # targets
    const long* t_patch
    const double* t_c0
    const double* t_h1
    const double* t_h2
    # rules
    const double* qa_n
    const double* qb_n
    const double* qw_n
    int nq_n
    const double* qa_f
    const double* qb_f
    const double* qw_f
    int nq_f
    double theta
    double theta_near
    double depth_fac
    # apply mode
    const double* leaf_v
    const double* mom
    long n_nodes


cdef inline double tri_sa(double* r1, double* r2, double* r3) noexcept nogil:
    cdef double n1 = sqrt(r1[0] * r1[0] + r1[1] * r1[1] + r1[2] * r1[2])
    cdef double n2 = sqrt(r2[0] * r2[0] + r2[1] * r2[1] + r2[2] * r2[2])
    cdef double n3 = sqrt(r3[0] * r3[0] + r3[1] * r3[1] + r3[2] * r3[2])
    cdef double cx = r2[1] * r3[2] - r2[2] * r3[1]
    cdef double cy = r2[2] * r3[0] - r2[0] * r3[2]
    cdef double cz = r2[0] * r3[1] - r2[1] * r3[0]
    cdef double num = r1[0] * cx + r1[1] * cy + r1[2] * cz
    if num == 0.0:
        return 0.0
    cdef double d12 = r1[0] * r2[0] + r1[1] * r2[1] + r1[2] * r2[2]
    cdef double d13 = r1[0] * r3[0] + r1[1] * r3[1] + r1[2] * r3[2]
    cdef double d23 = r2[0] * r3[0] + r2[1] * r3[1] + r2[2] * r3[2]
    cdef double den = n1 * n2 * n3 + d12 * n3 + d13 * n2 + d23 * n1
    return 2.0 * atan2(num, den)


cdef inline double quad_sa(const double* c0, const double* h1, const double* h2, double* x) noexcept nogil:
    cdef double r0[3]
    cdef double r1[3]
    cdef double r2[3]
    cdef double r3[3]
    cdef int k
    for k in range(3):
        r0[k] = c0[k] - x[k]
        r1[k] = r0[k] + h1[k]
        r2[k] = r1[k] + h2[k]
        r3[k] = r0[k] + h2[k]
    return tri_sa(r0, r1, r2) + tri_sa(r0, r2, r3)


cdef inline double diam2(double* a, double* b) noexcept nogil:
    cdef double p0 = a[0] + b[0], p1 = a[1] + b[1], p2 = a[2] + b[2]
    cdef double m0 = a[0] - b[0], m1 = a[1] - b[1], m2 = a[2] - b[2]
    cdef double x = sqrt(p0 * p0 + p1 * p1 + p2 * p2)
    cdef double y = sqrt(m0 * m0 + m1 * m1 + m2 * m2)
    return x if x > y else y


cdef inline double panel_series(const double* r, double r2, const double* e1,
                                const double* e2) noexcept nogil:
    """Fourth-order moment series of a centred parallelogram; see ``_kernels_py.panel_series``."""
    cdef double al = r[0] * e1[0] + r[1] * e1[1] + r[2] * e1[2]
    cdef double be = r[0] * e2[0] + r[1] * e2[1] + r[2] * e2[2]
    cdef double g11 = e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]
    cdef double g12 = e1[0] * e2[0] + e1[1] * e2[1] + e1[2] * e2[2]
    cdef double g22 = e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]
    cdef double a2 = al * al
    cdef double b2 = be * be
    cdef double r4 = r2 * r2
    cdef double p2 = (a2 + b2) / (12.0 * r4)
    cdef double q = (g11 + g22) / (12.0 * r2)
    cdef double q2 = ((g11 * g11 + g22 * g22) / 80.0 + (2.0 * g11 * g22 + 4.0 * g12 * g12) / 144.0) / r4
    cdef double p2q = ((a2 * g11 + b2 * g22) / 80.0 + (a2 * g22 + b2 * g11 + 4.0 * al * be * g12) / 144.0) / (r4 * r2)
    cdef double p4 = ((a2 * a2 + b2 * b2) / 80.0 + a2 * b2 / 24.0) / (r4 * r4)
    return 1.0 - 1.5 * q + 7.5 * p2 + 1.875 * q2 - 26.25 * p2q + 39.375 * p4


cdef int cmp_near(const void* a, const void* b) noexcept nogil:
    cdef const NearEntry* x = <const NearEntry*> a
    cdef const NearEntry* y = <const NearEntry*> b
    if x.col != y.col:
        return -1 if x.col < y.col else 1
    return -1 if x.seq < y.seq else (1 if x.seq > y.seq else 0)


cdef int cmp_far(const void* a, const void* b) noexcept nogil:
    cdef const FarEntry* x = <const FarEntry*> a
    cdef const FarEntry* y = <const FarEntry*> b
    if x.node != y.node:
        return -1 if x.node < y.node else 1
    return -1 if x.seq < y.seq else (1 if x.seq > y.seq else 0)


cdef double traverse_one(Ctx* ctx, long t, bint plan, vector[NearEntry]* near,
                         vector[FarEntry]* far, vector[Frame]* stack) noexcept nogil:
    """Traverse target ``t``; returns the cell integral in apply mode."""
    cdef long tp = ctx.t_patch[t]
    cdef const double* tc0 = ctx.t_c0 + 3 * t
    cdef const double* th1 = ctx.t_h1 + 3 * t
    cdef const double* th2 = ctx.t_h2 + 3 * t
    cdef double t_diam
    cdef double h1[3]
    cdef double h2[3]
    cdef double c0[3]
    cdef double lo[3]
    cdef double hi[3]
    cdef double x[3]
    cdef double r[3]
    cdef double ra0, rb0
    cdef double p, s, gap, dist, diam_r, diam_n, area_r, w, acc, r2, rn, g, re1, re2, hq
    cdef double coef[6]
    cdef double ne1[3]
    cdef double ne2[3]
    cdef double g11, g12, g22
    cdef double total = 0.0
    cdef long seq = 0
    cdef long n, k, q, np_, i
    cdef int depth
    cdef bint is_far, is_leaf, capped
    cdef Frame f
    cdef NearEntry ne
    cdef FarEntry fe
    cdef const double* nc0
    cdef const double* nh1
    cdef const double* nh2
    cdef const double* eta

    for k in range(3):
        h1[k] = th1[k]
        h2[k] = th2[k]
    t_diam = diam2(h1, h2)

    stack.clear()
    for k in range(ctx.n_roots - 1, -1, -1):
        n = ctx.roots[k]
        if ctx.cop[tp * ctx.n_patch + ctx.s_patch[n]] == 0:
            f.depth = 0
            f.ra = 0.0
            f.rb = 0.0
            f.node = n
            stack.push_back(f)

    while stack.size() > 0:
        f = stack.back()
        stack.pop_back()
        n = f.node
        s = ldexp(1.0, -f.depth)
        for k in range(3):
            h1[k] = th1[k] * s
            h2[k] = th2[k] * s
            c0[k] = tc0[k] + f.ra * h1[k] + f.rb * h2[k]
        dist = 0.0
        for k in range(3):
            lo[k] = c0[k]
            hi[k] = c0[k]
            p = c0[k] + h1[k]
            lo[k] = p if p < lo[k] else lo[k]
            hi[k] = p if p > hi[k] else hi[k]
            p = c0[k] + h1[k] + h2[k]
            lo[k] = p if p < lo[k] else lo[k]
            hi[k] = p if p > hi[k] else hi[k]
            p = c0[k] + h2[k]
            lo[k] = p if p < lo[k] else lo[k]
            hi[k] = p if p > hi[k] else hi[k]
            gap = ctx.s_lo[3 * n + k] - hi[k]
            p = lo[k] - ctx.s_hi[3 * n + k]
            gap = p if p > gap else gap
            if gap > 0.0:
                dist += gap * gap
        dist = sqrt(dist)
        diam_r = diam2(h1, h2)
        diam_n = ctx.s_diam[n]
        is_leaf = ctx.s_child[4 * n] < 0
        p = diam_r if diam_r > diam_n else diam_n
        is_far = p <= ctx.theta * dist

        if is_far:
            nc0 = ctx.s_c0 + 3 * n
            nh1 = ctx.s_h1 + 3 * n
            nh2 = ctx.s_h2 + 3 * n
            np_ = ctx.s_patch[n]
            eta = ctx.normal + 3 * np_
            for k in range(3):
                ne1[k] = ctx.e1[3 * np_ + k]
                ne2[k] = ctx.e2[3 * np_ + k]
            g11 = ne1[0] * ne1[0] + ne1[1] * ne1[1] + ne1[2] * ne1[2]
            g12 = ne1[0] * ne2[0] + ne1[1] * ne2[1] + ne1[2] * ne2[2]
            g22 = ne2[0] * ne2[0] + ne2[1] * ne2[1] + ne2[2] * ne2[2]
            x[0] = h1[1] * h2[2] - h1[2] * h2[1]
            x[1] = h1[2] * h2[0] - h1[0] * h2[2]
            x[2] = h1[0] * h2[1] - h1[1] * h2[0]
            area_r = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
            for k in range(6):
                coef[k] = 0.0
            for q in range(ctx.nq_f):
                for k in range(3):
                    x[k] = c0[k] + ctx.qa_f[q] * h1[k] + ctx.qb_f[q] * h2[k]
                w = area_r * ctx.qw_f[q]
                for k in range(3):
                    r[k] = x[k] - ctx.s_center[3 * n + k]
                r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
                g = 3.0 * (eta[0] * r[0] + eta[1] * r[1] + eta[2] * r[2]) / (FOUR_PI * r2 * r2 * sqrt(r2))
                coef[0] += w * g * r2 / 3.0 * panel_series(r, r2, nh1, nh2)
                re1 = r[0] * ne1[0] + r[1] * ne1[1] + r[2] * ne1[2]
                re2 = r[0] * ne2[0] + r[1] * ne2[1] + r[2] * ne2[2]
                coef[1] += w * g * re1
                coef[2] += w * g * re2
                hq = g / 6.0
                coef[3] += w * hq * (15.0 * re1 * re1 / r2 - 3.0 * g11)
                coef[4] += w * hq * (30.0 * re1 * re2 / r2 - 6.0 * g12)
                coef[5] += w * hq * (15.0 * re2 * re2 / r2 - 3.0 * g22)
            if plan:
                fe.node = n
                fe.seq = seq
                for k in range(6):
                    fe.c[k] = coef[k]
                far.push_back(fe)
            else:
                for k in range(6):
                    total += coef[k] * ctx.mom[k * ctx.n_nodes + n]
            seq += 1
            continue

        if is_leaf:
            p = t_diam if t_diam < diam_n else diam_n
            capped = diam_r <= ctx.depth_fac * p
            if diam_r <= ctx.theta_near * dist or capped:
                nc0 = ctx.s_c0 + 3 * n
                nh1 = ctx.s_h1 + 3 * n
                nh2 = ctx.s_h2 + 3 * n
                x[0] = h1[1] * h2[2] - h1[2] * h2[1]
                x[1] = h1[2] * h2[0] - h1[0] * h2[2]
                x[2] = h1[0] * h2[1] - h1[1] * h2[0]
                area_r = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
                acc = 0.0
                for q in range(ctx.nq_n):
                    for k in range(3):
                        x[k] = c0[k] + ctx.qa_n[q] * h1[k] + ctx.qb_n[q] * h2[k]
                    acc += ctx.qw_n[q] * quad_sa(nc0, nh1, nh2, x)
                acc = -area_r * acc / FOUR_PI
                if plan:
                    ne.col = ctx.s_leaf[n]
                    ne.seq = seq
                    ne.v = acc
                    near.push_back(ne)
                else:
                    total += acc * ctx.leaf_v[ctx.s_leaf[n]]
                seq += 1
                continue

        if is_leaf or diam_r > diam_n:
            depth = f.depth + 1
            ra0 = f.ra
            rb0 = f.rb
            for q in range(3, -1, -1):
                f.depth = depth
                f.node = n
                f.ra = 2.0 * ra0 + (q >> 1)
                f.rb = 2.0 * rb0 + (q & 1)
                stack.push_back(f)
        else:
            for q in range(3, -1, -1):
                f.node = ctx.s_child[4 * n + q]
                stack.push_back(f)
    return total


def _arr(dict d, str k, dt, list keep):
    v = np.ascontiguousarray(d[k], dtype=dt)
    keep.append(v)
    return v


cdef void _fill_ctx(Ctx* ctx, dict geom, dict src, dict tgt, dict params, list keep) except *:
    cdef cnp.ndarray a

    a = _arr(geom, "normal", np.float64, keep); ctx.normal = <const double*> a.data
    a = _arr(geom, "e1", np.float64, keep); ctx.e1 = <const double*> a.data
    a = _arr(geom, "e2", np.float64, keep); ctx.e2 = <const double*> a.data
    a = _arr(geom, "coplanar", np.uint8, keep); ctx.cop = <const unsigned char*> a.data
    ctx.n_patch = a.shape[0]
    a = _arr(src, "patch", np.int64, keep); ctx.s_patch = <const long*> a.data
    ctx.n_nodes = a.shape[0]
    a = _arr(src, "c0", np.float64, keep); ctx.s_c0 = <const double*> a.data
    a = _arr(src, "h1", np.float64, keep); ctx.s_h1 = <const double*> a.data
    a = _arr(src, "h2", np.float64, keep); ctx.s_h2 = <const double*> a.data
    a = _arr(src, "center", np.float64, keep); ctx.s_center = <const double*> a.data
    a = _arr(src, "lo", np.float64, keep); ctx.s_lo = <const double*> a.data
    a = _arr(src, "hi", np.float64, keep); ctx.s_hi = <const double*> a.data
    a = _arr(src, "diam", np.float64, keep); ctx.s_diam = <const double*> a.data
    a = _arr(src, "area", np.float64, keep); ctx.s_area = <const double*> a.data
    a = _arr(src, "child", np.int64, keep); ctx.s_child = <const long*> a.data
    a = _arr(src, "leaf", np.int64, keep); ctx.s_leaf = <const long*> a.data
    a = _arr(src, "roots", np.int64, keep); ctx.roots = <const long*> a.data
    ctx.n_roots = a.shape[0]
    a = _arr(tgt, "patch", np.int64, keep); ctx.t_patch = <const long*> a.data
    a = _arr(tgt, "c0", np.float64, keep); ctx.t_c0 = <const double*> a.data
    a = _arr(tgt, "h1", np.float64, keep); ctx.t_h1 = <const double*> a.data
    a = _arr(tgt, "h2", np.float64, keep); ctx.t_h2 = <const double*> a.data

    from ._kernels_py import _tensor_rule
    for name, order in (("n", params["near_order"]), ("f", params["far_order"])):
        qa, qb, qw = _tensor_rule(int(order))
        qa = np.ascontiguousarray(qa); qb = np.ascontiguousarray(qb); qw = np.ascontiguousarray(qw)
        keep.extend([qa, qb, qw])
        if name == "n":
            a = qa; ctx.qa_n = <const double*> a.data
            a = qb; ctx.qb_n = <const double*> a.data
            a = qw; ctx.qw_n = <const double*> a.data
            ctx.nq_n = qw.shape[0]
        else:
            a = qa; ctx.qa_f = <const double*> a.data
            a = qb; ctx.qb_f = <const double*> a.data
            a = qw; ctx.qw_f = <const double*> a.data
            ctx.nq_f = qw.shape[0]
    ctx.theta = float(params["theta"])
    ctx.theta_near = float(params["theta_near"])
    ctx.depth_fac = 2.0 ** (-int(params["near_depth"]))
    ctx.leaf_v = NULL
    ctx.mom = NULL


def traverse(dict geom, dict src, dict tgt, dict params, moments=None, int threads=1):
    """See :func:`awbem._kernels_py.traverse`."""
    cdef Ctx ctx
    cdef list keep = []
    _fill_ctx(&ctx, geom, src, tgt, params, keep)
    cdef long n_t = np.asarray(tgt["patch"]).shape[0]
    cdef long t, i, j, k, m
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out
    cdef double[::1] out_v
    cdef cnp.ndarray lv, mo
    cdef vector[Frame]* stacks
    cdef vector[vector[NearEntry]] near
    cdef vector[vector[FarEntry]] far
    cdef vector[Frame] stack_dummy
    cdef int tid
    cdef int nth = threads if threads > 0 else 1

    if moments is not None:
        lv = np.ascontiguousarray(moments[0], dtype=np.float64)
        mo = np.ascontiguousarray(moments[1], dtype=np.float64)
        keep.extend([lv, mo])
        ctx.leaf_v = <const double*> lv.data
        ctx.mom = <const double*> mo.data
        out = np.zeros(n_t)
        out_v = out
        with nogil:
            _apply_all(&ctx, n_t, &out_v[0], nth)
        return out

    near.resize(n_t)
    far.resize(n_t)
    with nogil:
        _plan_all(&ctx, n_t, near, far, nth)

    # gather, merging duplicate columns in emission order
    cdef long n_near = 0, n_far = 0
    for t in range(n_t):
        n_near += near[t].size()
        n_far += far[t].size()
    nt_a = np.empty(n_near, dtype=np.int64)
    ns_a = np.empty(n_near, dtype=np.int64)
    nv_a = np.empty(n_near, dtype=np.float64)
    ft_a = np.empty(n_far, dtype=np.int64)
    fn_a = np.empty(n_far, dtype=np.int64)
    fc_a = np.empty((6, n_far), dtype=np.float64)
    cdef long[::1] nt_v = nt_a, ns_v = ns_a, ft_v = ft_a, fn_v = fn_a
    cdef double[::1] nv_v = nv_a
    cdef double[:, ::1] fc_v = fc_a
    cdef long pn = 0, pf = 0
    with nogil:
        for t in range(n_t):
            m = near[t].size()
            if m > 0:
                qsort(near[t].data(), m, sizeof(NearEntry), cmp_near)
                i = 0
                while i < m:
                    nt_v[pn] = t
                    ns_v[pn] = near[t][i].col
                    nv_v[pn] = near[t][i].v
                    j = i + 1
                    while j < m and near[t][j].col == near[t][i].col:
                        nv_v[pn] += near[t][j].v
                        j += 1
                    pn += 1
                    i = j
            m = far[t].size()
            if m > 0:
                qsort(far[t].data(), m, sizeof(FarEntry), cmp_far)
                i = 0
                while i < m:
                    ft_v[pf] = t
                    fn_v[pf] = far[t][i].node
                    for k in range(6):
                        fc_v[k, pf] = far[t][i].c[k]
                    j = i + 1
                    while j < m and far[t][j].node == far[t][i].node:
                        for k in range(6):
                            fc_v[k, pf] += far[t][j].c[k]
                        j += 1
                    pf += 1
                    i = j
            near[t].clear()
            near[t].shrink_to_fit()
            far[t].clear()
            far[t].shrink_to_fit()
    return (nt_a[:pn], ns_a[:pn], nv_a[:pn], ft_a[:pf], fn_a[:pf],
            fc_a[0, :pf], fc_a[1, :pf], fc_a[2, :pf], fc_a[3, :pf], fc_a[4, :pf], fc_a[5, :pf])


cdef void _apply_all(Ctx* ctx, long n_t, double* out, int nth) noexcept nogil:
    cdef long t
    for t in prange(n_t, num_threads=nth, schedule="dynamic", chunksize=16):
        out[t] = _apply_one(ctx, t)


cdef double _apply_one(Ctx* ctx, long t) noexcept nogil:
    cdef vector[Frame] stack
    return traverse_one(ctx, t, False, NULL, NULL, &stack)


cdef void _plan_all(Ctx* ctx, long n_t, vector[vector[NearEntry]]& near,
                    vector[vector[FarEntry]]& far, int nth) noexcept nogil:
    cdef long t
    for t in prange(n_t, num_threads=nth, schedule="dynamic", chunksize=16):
        _plan_one(ctx, t, &near[t], &far[t])


cdef void _plan_one(Ctx* ctx, long t, vector[NearEntry]* near, vector[FarEntry]* far) noexcept nogil:
    cdef vector[Frame] stack
    traverse_one(ctx, t, True, near, far, &stack)


def far_apply(const long[::1] ptr, const int[::1] idx, const float[:, ::1] coef,
              const double[:, ::1] mom, int threads=1):
    """``out[t] = sum_{i in row t} sum_k coef[i, k] * mom[k, idx[i]]``."""
    cdef long n_t = ptr.shape[0] - 1
    out = np.zeros(n_t)
    cdef double[::1] ov = out
    cdef long t, i
    cdef int k, node
    cdef double acc
    with nogil:
        for t in prange(n_t, num_threads=threads if threads > 0 else 1, schedule="static"):
            acc = 0.0
            for i in range(ptr[t], ptr[t + 1]):
                node = idx[i]
                for k in range(6):
                    acc = acc + coef[i, k] * mom[k, node]
            ov[t] = acc
    return out


def solid_angle_many(const double[:, ::1] c0, const double[:, ::1] h1, const double[:, ::1] h2,
                     const double[:, ::1] x):
    """Solid angles of ``n`` parallelograms seen from ``n`` points."""
    cdef long n = c0.shape[0], i
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef double xx[3]
    with nogil:
        for i in range(n):
            xx[0] = x[i, 0]
            xx[1] = x[i, 1]
            xx[2] = x[i, 2]
            ov[i] = quad_sa(&c0[i, 0], &h1[i, 0], &h2[i, 0], xx)
    return out
