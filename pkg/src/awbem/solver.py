"""Adaptive wavelet Galerkin solver for ``(1/2 I - K) u = g``.

One outer iteration is

    u_T   = SOLVE[T]                      Galerkin system on the tree T
    r     = ESTIMATE(u_T)                 delta-halving residual loop
    T    <- T  u  COARSE[theta, r]        mark and refine

The residual loop evaluates ``r = f_{delta/2} - APPLY[delta/2, u_T]`` with
a shrinking tolerance until ``delta <= omega * |r|``, so that the computed
residual is equivalent to the true one up to the factors ``1 +- omega``.
The uniform mode replaces the refinement by the next full level.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .basis import (
    MAX_LEVEL,
    QUAD_SIGNS,
    CoeffVector,
    Tree,
    ancestors_closure,
    children_keys,
    decode_node,
    key_levels,
    node_key,
    root_keys,
    uniform_tree,
)
from .discretize import QuadConfig, RightHandSide, cell_integrals, galerkin_matrix_dense
from .forest import build_forest, synthesis_matrix
from .layer import ApplyParams, CellOperator, GalerkinOperator, target_arrays
from .surface import Surface

__all__ = [
    "SolverConfig",
    "SolverState",
    "ConvergenceRecord",
    "SolverError",
    "PartialResultError",
    "StagnationError",
    "RhsCertificationError",
    "RhsApproximator",
    "Applier",
    "solve_galerkin",
    "apply",
    "rhs_approx",
    "estimate_residual",
    "coarse",
    "solve_adaptive",
    "solve_uniform",
    "solve",
    "operator_norm_bound",
    "write_history_csv",
    "HISTORY_HEADER",
]

log = logging.getLogger(__name__)

HISTORY_HEADER = "step,dofs,residual,delta,wall_time_s"

#: finest wavelet level representable by the packed keys (children must fit)
LEVEL_LIMIT = MAX_LEVEL - 1

#: fitted constant of the compression error model ``C * theta^3 * |v|``,
#: about 4x the worst ratio measured against dense matrices
COMPRESSION_CONSTANT = 4e-3


class SolverError(RuntimeError):
    """Krylov iteration did not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class StagnationError(RuntimeError):
    """The residual loop drove ``delta`` below its floor."""


class RhsCertificationError(RuntimeError):
    """The right-hand side tail cannot be bounded as requested."""

    def __init__(self, message: str, level_norms=None):
        super().__init__(message)
        self.level_norms = level_norms


class PartialResultError(RuntimeError):
    """A cap was hit before reaching the target; carries the partial state."""

    def __init__(self, message: str, state: "SolverState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the adaptive and uniform drivers."""

    omega: float = 0.4
    theta: float = 0.3
    eps: float = 1e-2
    delta_init: float | None = None
    j_max: int = LEVEL_LIMIT
    mode: str = "adaptive"
    gmres_restart: int = 50
    gmres_tol: float = 1e-8
    gmres_maxiter: int = 500
    #: stop with a partial result once the tree would exceed this size
    max_dofs: int = 10_000_000
    quad: QuadConfig = field(default_factory=QuadConfig)
    fast: ApplyParams = field(default_factory=ApplyParams)
    delta_floor: float = 1e-12
    #: trees up to this size are solved with the dense Galerkin matrix
    dense_max: int = 500

    def __post_init__(self):
        if not 0 < self.omega < 1:
            raise ValueError("omega must lie in (0, 1)")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.delta_init is not None and self.delta_init <= 0:
            raise ValueError("delta_init must be positive")
        if not 0 <= self.j_max <= LEVEL_LIMIT:
            raise ValueError(f"j_max must lie in [0, {LEVEL_LIMIT}]")
        if self.mode not in ("adaptive", "uniform"):
            raise ValueError("mode must be 'adaptive' or 'uniform'")
        if self.gmres_restart < 1 or self.gmres_maxiter < 1 or not 0 < self.gmres_tol < 1:
            raise ValueError("invalid GMRES parameters")

    def replace(self, **kw) -> "SolverConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class ConvergenceRecord:
    step: int
    dofs: int
    residual_norm: float
    delta: float
    wall_time: float

    def csv_row(self, timing: bool = True) -> str:
        wt = f"{self.wall_time:.3f}" if timing else "0"
        return f"{self.step},{self.dofs},{self.residual_norm:.10e},{self.delta:.10e},{wt}"


@dataclass
class SolverState:
    tree: Tree
    u: CoeffVector
    history: list = field(default_factory=list)
    delta: float | None = None
    residual: CoeffVector | None = None
    converged: bool = False

    @property
    def dofs(self) -> int:
        return len(self.tree)


def write_history_csv(history, path, timing: bool = True) -> None:
    with open(path, "w") as fh:
        fh.write(HISTORY_HEADER + "\n")
        for rec in history:
            fh.write(rec.csv_row(timing) + "\n")


# ---------------------------------------------------------------------------
# SOLVE


DENSE_TOL = 1e-12


class _DenseOperator:
    def __init__(self, matrix: np.ndarray):
        self.matrix = matrix

    def matvec(self, c: np.ndarray) -> np.ndarray:
        return self.matrix @ c

    def as_linear_operator(self):
        return spla.aslinearoperator(self.matrix)


def solve_galerkin(
    surface: Surface,
    tree: Tree,
    f_T: CoeffVector,
    cfg: SolverConfig = SolverConfig(),
    x0: CoeffVector | None = None,
    operator: GalerkinOperator | None = None,
) -> CoeffVector:
    """Solve ``(1/2 I - K)|_T u = f_T`` by restarted GMRES."""
    keys = tree.keys
    extra = np.setdiff1d(f_T.keys, keys)
    if extra.size:
        raise ValueError(f"support of f_T is not contained in the tree ({extra.size} extra indices)")
    b = f_T.values_on(keys)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CoeffVector()
    tol = cfg.gmres_tol
    if operator is not None:
        op = operator
    elif keys.size <= cfg.dense_max:
        # small systems: exact quadrature and a tighter tolerance, so the
        # result agrees with a direct dense solve
        op = _DenseOperator(galerkin_matrix_dense(surface, tree, cfg.quad))
        tol = min(tol, DENSE_TOL)
    else:
        op = GalerkinOperator(surface, keys, cfg.fast)
    guess = x0.values_on(keys) if x0 is not None else np.zeros(keys.size)
    restart = min(cfg.gmres_restart, keys.size)
    cycles = max(1, math.ceil(cfg.gmres_maxiter / restart))
    x, _ = spla.gmres(op.as_linear_operator(), b, x0=guess, rtol=tol, atol=0.0, restart=restart, maxiter=cycles)
    res = float(np.linalg.norm(op.matvec(x) - b))
    # GMRES' internal estimate may drift from the true residual by round-off
    if res > 1.01 * tol * b_norm + 1e-15:
        raise SolverError(f"GMRES stopped at relative residual {res / b_norm:.3e}", res / b_norm)
    return CoeffVector(keys, x, presorted=True)


# ---------------------------------------------------------------------------
# APPLY


_NORM_BOUNDS: dict = {}


def operator_norm_bound(surface: Surface, params: ApplyParams = ApplyParams()) -> float:
    """Upper estimate of ``|K|`` in l2, from a level-2 uniform Galerkin matrix.

    The discrete norms increase only slightly under refinement; a factor
    1.25 covers the difference on the shipped surfaces.
    """
    key = surface.dump()
    if key not in _NORM_BOUNDS:
        tree = uniform_tree(surface.n_patches, 2)
        a = GalerkinOperator(surface, tree.keys, params).to_dense()
        k = 0.5 * np.eye(a.shape[0]) - a
        _NORM_BOUNDS[key] = 1.25 * float(np.linalg.norm(k, 2))
    return _NORM_BOUNDS[key]


def default_targets(v_keys: np.ndarray, n_patches: int, extra=None, j_max: int = LEVEL_LIMIT) -> np.ndarray:
    """``supp v``, its children and ``extra``, completed to a tree."""
    kids = children_keys(v_keys)
    kids = kids[key_levels(kids) <= j_max]
    parts = [v_keys, kids]
    if extra is not None:
        parts.append(np.asarray(extra, dtype=np.int64))
    return ancestors_closure(np.concatenate(parts), n_patches)


class _CellCache:
    """Sorted node-key -> value store (scalar or fixed-width rows)."""

    def __init__(self, width: int = 0):
        self.width = width
        self.keys = np.zeros(0, dtype=np.int64)
        self.values = np.zeros((0, width) if width else 0)

    def _empty(self, n: int) -> np.ndarray:
        return np.zeros((n, self.width) if self.width else n)

    def lookup(self, keys: np.ndarray):
        out = self._empty(keys.size)
        if self.keys.size == 0:
            return out, np.ones(keys.size, dtype=bool)
        pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
        hit = self.keys[pos] == keys
        out[hit] = self.values[pos[hit]]
        return out, ~hit

    def insert(self, keys: np.ndarray, values: np.ndarray) -> None:
        k = np.concatenate([self.keys, keys])
        v = np.concatenate([self.values, values])
        k, first = np.unique(k, return_index=True)
        self.keys, self.values = k, v[first]


class Applier:
    """``(1/2 I - K) v`` for a fixed ``v`` on growing target trees.

    Cell integrals of ``K v`` are cached per target cell, so repeated calls
    with larger target sets only evaluate the new cells.
    """

    def __init__(self, surface: Surface, v: CoeffVector, params: ApplyParams = ApplyParams()):
        self.surface = surface
        self.v = v
        self.params = params
        self.v_norm = v.norm()
        self._cache = _CellCache()
        self._forest = None
        self._leaf_values = None
        if len(v):
            src = ancestors_closure(v.keys, surface.n_patches)
            self._forest = build_forest(surface, src)
            self._leaf_values = synthesis_matrix(self._forest, v.keys) @ v.values

    def compression_error(self, theta: float | None = None) -> float:
        th = self.params.theta if theta is None else theta
        return COMPRESSION_CONSTANT * th**3 * self.v_norm

    def theta_for(self, delta: float) -> float:
        """Largest admissible ``theta`` meeting ``delta`` (cached runs keep theirs)."""
        if self.v_norm == 0:
            return self.params.theta
        th = (delta / (COMPRESSION_CONSTANT * self.v_norm)) ** (1.0 / 3.0)
        return min(self.params.theta, max(th, 0.05))

    def _k_cells(self, patch, level, i1, i2) -> np.ndarray:
        keys = node_key(patch, level, i1, i2)
        out, miss = self._cache.lookup(keys)
        if miss.any():
            tgt = target_arrays(self.surface, patch[miss], level[miss], i1[miss], i2[miss])
            op = CellOperator(self._forest, tgt, self.params, store=False)
            vals = op.matvec(self._leaf_values)
            out[miss] = vals
            self._cache.insert(keys[miss], vals)
        return out

    def __call__(self, delta: float, targets: np.ndarray) -> CoeffVector:
        """``(1/2 I - K) v`` on the tree ``targets`` (sorted, parent-closed)."""
        targets = np.asarray(targets, dtype=np.int64)
        if self._forest is None:
            return CoeffVector()
        if delta >= operator_norm_bound(self.surface) * self.v_norm:
            return self.v.restrict(targets) * 0.5
        th = self.theta_for(delta / 2)
        if th < self.params.theta:
            log.info("apply: tightening theta %.3f -> %.3f for delta %.2e", self.params.theta, th, delta)
            self.params = dataclasses.replace(self.params, theta=th)
            self._cache = _CellCache()
        tf = build_forest(self.surface, targets)
        ln = tf.leaf_nodes
        cells = self._k_cells(tf.patch[ln], tf.level[ln], tf.i1[ln], tf.i2[ln])
        kv = synthesis_matrix(tf, targets).T @ cells
        return CoeffVector(targets, 0.5 * self.v.values_on(targets) - kv, presorted=True)


    def auto(self, delta: float, j_max: int = LEVEL_LIMIT, max_layers: int = 3) -> CoeffVector:
        """``(1/2 I - K) v`` on ``supp v``, its children and further layers.

        The energy below an entry of the outermost layer is estimated as
        ``|w|^2 / 3`` (norm ratio 1/2 per level).  The largest layer entries
        get their children added until the remaining estimate, together
        with the compression error, fits into ``delta``.
        """
        if self._forest is None:
            return CoeffVector()
        n_p = self.surface.n_patches
        inner = self.v.keys
        keys = default_targets(inner, n_p, j_max=j_max)
        w = self(delta, keys)
        budget = max(delta * delta - self.compression_error() ** 2, 0.0) / 2.0
        for _ in range(max_layers):
            layer = np.setdiff1d(keys, inner)
            wl = w.values_on(layer)
            # energy below each layer entry: |w|^2 (1/4 + 1/16 + ...) = |w|^2 / 3
            tail = wl * wl / 3.0
            if layer.size == 0 or tail.sum() <= budget:
                break
            order = np.argsort(-tail, kind="stable")
            rest = tail.sum() - np.cumsum(tail[order])
            n = int(np.searchsorted(-rest, -0.5 * budget)) + 1
            kids = children_keys(layer[order[:n]])
            kids = kids[key_levels(kids) <= j_max]
            if kids.size == 0:
                break
            inner = keys
            keys = np.union1d(keys, ancestors_closure(kids, n_p))
            w = self(delta, keys)
        return w


def apply(
    surface: Surface,
    delta: float,
    v: CoeffVector,
    cfg: SolverConfig = SolverConfig(),
    targets=None,
) -> CoeffVector:
    """Approximate ``(1/2 I - K) v`` to accuracy ``delta``.

    With ``targets`` the output is restricted to that tree; otherwise it
    lives on ``supp v`` plus children layers chosen by :meth:`Applier.auto`.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if len(v) == 0:
        return CoeffVector()
    ap = Applier(surface, v, cfg.fast)
    if targets is None:
        return ap.auto(delta, cfg.j_max)
    keys = targets.keys if isinstance(targets, Tree) else np.asarray(targets, dtype=np.int64)
    return ap(delta, np.unique(keys))


# ---------------------------------------------------------------------------
# RHS


class RhsApproximator:
    """Adaptive expansion of the wavelet coefficients of ``g``.

    Nodes carry the three wavelet coefficients of their dyadic square.  The
    expansion starts from all nodes of levels ``< start_levels`` and then
    refines the frontier where the tail estimate is largest.  The subtree
    below a frontier node ``N`` is estimated by ``e_N * q`` with
    ``q = rho^2 / (1 - rho^2)``; ``rho^2`` is the geometric mean of the
    child-to-parent energy ratios of expanded nodes over the deepest three
    levels, and ``rho`` is capped at 0.9.
    """

    RHO_CAP = 0.9

    def __init__(self, surface: Surface, g: RightHandSide, quad: QuadConfig = QuadConfig(),
                 j_max: int = LEVEL_LIMIT, start_levels: int = 3):
        g.check_surface(surface)
        #: node key -> three wavelet coefficients; persists via save_cache/load_cache
        self.store = _CellCache(3)
        self.surface = surface
        self.g = g
        self.quad = quad
        self.j_max = int(j_max)
        self._jac = np.array([p.jacobian for p in surface.patches])
        n_p = surface.n_patches
        root_int = cell_integrals(g, surface, np.arange(n_p), np.zeros(n_p, int), np.zeros(n_p, int),
                                  np.zeros(n_p, int), quad)
        self.scaling = root_int / np.sqrt(self._jac)
        self.start_levels = start_levels
        self.reset()

    def reset(self) -> None:
        """Forget the expansion (the coefficient store is kept)."""
        n_p = self.surface.n_patches
        self.nkeys = np.zeros(0, dtype=np.int64)
        self.coef = np.zeros((0, 3))
        self.expanded = np.zeros(0, dtype=bool)
        self._add_nodes(node_key(np.arange(n_p), 0, 0, 0))
        for _ in range(min(self.start_levels, self.j_max + 1) - 1):
            self._expand(np.flatnonzero(~self.expanded))

    def cache_tag(self) -> str:
        """Digest of everything the stored coefficients depend on."""
        text = self.surface.dump() + repr(self.g) + repr(self.quad)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def save_cache(self, path) -> None:
        np.savez(path, tag=np.array(self.cache_tag()), keys=self.store.keys, values=self.store.values)

    def load_cache(self, path) -> bool:
        """Merge a saved coefficient store; returns False if it belongs to another problem."""
        with np.load(path) as z:
            if str(z["tag"]) != self.cache_tag():
                return False
            self.store.insert(z["keys"], z["values"])
        return True

    # -- node bookkeeping

    @property
    def energy(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.coef, self.coef)

    @property
    def levels(self) -> np.ndarray:
        return decode_node(self.nkeys)[1]

    def _node_coefs(self, nk: np.ndarray) -> np.ndarray:
        out, miss = self.store.lookup(nk)
        if miss.any():
            out[miss] = self._compute_coefs(nk[miss])
            self.store.insert(nk[miss], out[miss])
        return out

    def _compute_coefs(self, nk: np.ndarray) -> np.ndarray:
        p, j, i1, i2 = decode_node(nk)
        cp = np.repeat(p, 4)
        cj = np.repeat(j + 1, 4)
        a = np.tile([0, 0, 1, 1], nk.size)
        b = np.tile([0, 1, 0, 1], nk.size)
        v = cell_integrals(self.g, self.surface, cp, cj, np.repeat(2 * i1, 4) + a,
                           np.repeat(2 * i2, 4) + b, self.quad).reshape(-1, 4)
        scale = np.ldexp(1.0, j) / np.sqrt(self._jac[p])
        return (v @ QUAD_SIGNS[1:].T) * scale[:, None]

    def _add_nodes(self, nk: np.ndarray) -> None:
        nk = np.setdiff1d(nk, self.nkeys)
        if nk.size == 0:
            return
        k = np.concatenate([self.nkeys, nk])
        c = np.concatenate([self.coef, self._node_coefs(nk)])
        e = np.concatenate([self.expanded, np.zeros(nk.size, dtype=bool)])
        order = np.argsort(k)
        self.nkeys, self.coef, self.expanded = k[order], c[order], e[order]

    def _expand(self, idx: np.ndarray) -> None:
        idx = idx[self.levels[idx] < self.j_max]
        if idx.size == 0:
            return
        p, j, i1, i2 = decode_node(self.nkeys[idx])
        kids = [node_key(p, j + 1, 2 * i1 + a, 2 * i2 + b) for a in (0, 1) for b in (0, 1)]
        parents = self.nkeys[idx]
        self._add_nodes(np.concatenate(kids))
        self.expanded[np.searchsorted(self.nkeys, parents)] = True

    def ensure_nodes(self, nk) -> None:
        """Make the given nodes (and the sibling groups on their paths) present."""
        nk = np.unique(np.asarray(nk, dtype=np.int64))
        missing = np.setdiff1d(nk, self.nkeys)
        if missing.size == 0:
            return
        p, j, i1, i2 = decode_node(missing)
        par = node_key(p[j > 0], j[j > 0] - 1, i1[j > 0] >> 1, i2[j > 0] >> 1)
        self.ensure_nodes(par)
        self._expand(np.searchsorted(self.nkeys, np.unique(par)))

    # -- decay model

    def level_norms(self) -> np.ndarray:
        """l2 norm of the computed coefficients per level."""
        lev = self.levels
        out = np.zeros(int(lev.max()) + 1)
        np.add.at(out, lev, self.energy)
        return np.sqrt(out)

    def decay_ratio(self) -> float:
        """Fitted per-level ratio ``rho`` of the coefficient energy decay."""
        lev, e = self.levels, self.energy
        ex = self.expanded
        j = decode_node(self.nkeys)[1]
        has_par = j > 0
        par_lev = j[has_par] - 1
        ratios = []
        for lv in range(int(lev.max()) - 1, -1, -1):
            den = float(e[ex & (lev == lv)].sum())
            num = float(e[has_par][par_lev == lv].sum())
            if den > 0 and num > 0:
                ratios.append(num / den)
            if len(ratios) == 3:
                break
        if not ratios:
            return 0.0
        rho = math.sqrt(math.exp(np.mean(np.log(ratios))))
        if rho >= 1.0:
            raise RhsCertificationError(
                f"coefficients do not decay (fitted ratio {rho:.3f})", self.level_norms()
            )
        return min(rho, self.RHO_CAP)

    def tails(self) -> np.ndarray:
        """Estimated energy below each frontier node (0 for expanded ones)."""
        rho = self.decay_ratio()
        q = rho * rho / (1.0 - rho * rho)
        return np.where(self.expanded, 0.0, self.energy * q)

    # -- public

    def coefficients(self) -> CoeffVector:
        """All computed coefficients."""
        keys = np.concatenate([(self.nkeys[:, None] << 2 | np.arange(1, 4)).ravel(),
                               root_keys(self.surface.n_patches)])
        vals = np.concatenate([self.coef.ravel(), self.scaling])
        return CoeffVector(keys, vals)

    def exact(self, keys) -> CoeffVector:
        """``<g, psi>`` for the given wavelet keys."""
        keys = np.asarray(keys, dtype=np.int64)
        wk = keys[(keys & 3) != 0]
        self.ensure_nodes(wk >> 2)
        return self.coefficients().restrict(keys)

    def tail_bound(self) -> float:
        return math.sqrt(float(self.tails().sum()))

    def approx(self, delta: float) -> CoeffVector:
        """``f_delta`` with ``|f - f_delta| <= delta`` (tail and dropped part each <= delta/2)."""
        if delta <= 0:
            raise ValueError("delta must be positive")
        budget = (0.5 * delta) ** 2
        while True:
            t = self.tails()
            total = float(t.sum())
            if total <= budget:
                break
            can = np.flatnonzero((t > 0) & (self.levels < self.j_max))
            if can.size == 0 or float(t[can].sum()) < total - budget:
                raise RhsCertificationError(
                    f"tail {math.sqrt(total):.3e} exceeds {0.5 * delta:.3e} at level cap {self.j_max}",
                    self.level_norms(),
                )
            order = can[np.argsort(-t[can], kind="stable")]
            # expand until the untouched frontier holds at most half the budget
            rest = total - np.cumsum(t[order])
            n = int(np.searchsorted(-rest, -0.5 * budget)) + 1
            self._expand(order[:n])
        return greedy_truncate(self.coefficients(), 0.5 * delta, self.surface.n_patches)


def greedy_truncate(v: CoeffVector, tol: float, n_patches: int) -> CoeffVector:
    """Drop smallest entries with total l2 mass ``<= tol``, then tree-complete."""
    if len(v) == 0:
        return v
    mag2 = v.values**2
    order = np.argsort(mag2, kind="stable")
    dropped = np.cumsum(mag2[order])
    n_drop = int(np.searchsorted(dropped, tol * tol, side="right"))
    keep = np.sort(v.keys[order[n_drop:]])
    full = ancestors_closure(keep, n_patches)
    return v.restrict(full)


def rhs_approx(surface: Surface, g: RightHandSide, delta: float, cfg: SolverConfig = SolverConfig(),
               approximator: RhsApproximator | None = None) -> CoeffVector:
    """Finitely supported ``f_delta`` with certified ``|f - f_delta| <= delta``."""
    ra = approximator or RhsApproximator(surface, g, cfg.quad, cfg.j_max)
    return ra.approx(delta)


# ---------------------------------------------------------------------------
# ESTIMATE


def estimate_residual(
    surface: Surface,
    g: RightHandSide,
    state: SolverState,
    cfg: SolverConfig = SolverConfig(),
    rhs: RhsApproximator | None = None,
    delta: float | None = None,
):
    """Residual ``r = f_{delta/2} - APPLY[delta/2, u_T]`` with the halving loop.

    Returns ``(r, delta)``; exits when ``delta <= omega |r|`` or, when the
    computed residual is already below tolerance, when ``|r| + delta <= eps``.
    """
    rhs = rhs or RhsApproximator(surface, g, cfg.quad, cfg.j_max)
    if delta is None:
        delta = state.delta if state.delta is not None else initial_delta(rhs, cfg)
    ap = Applier(surface, state.u, cfg.fast)
    while True:
        f = rhs.approx(delta / 2)
        w = ap.auto(delta / 2, rhs.j_max)
        r = f - w
        rn = r.norm()
        log.debug("estimate: delta=%.3e |r|=%.4e #f=%d #w=%d", delta, rn, len(f), len(w))
        if delta <= cfg.omega * rn or rn + delta <= cfg.eps:
            return r, delta
        delta /= 2
        if delta < cfg.delta_floor:
            raise StagnationError(
                f"delta fell below {cfg.delta_floor:g} with |r| = {rn:.3e} on {len(r)} indices"
            )


def initial_delta(rhs: RhsApproximator, cfg: SolverConfig) -> float:
    if cfg.delta_init is not None:
        return cfg.delta_init
    return max(1.0, rhs.approx(0.5).norm())


# ---------------------------------------------------------------------------
# COARSE


def coarse(theta: float, r: CoeffVector, n_patches: int) -> Tree:
    """Smallest greedy tree keeping all but ``theta |r|`` of ``r``.

    Entries are taken by decreasing magnitude together with their
    ancestors; the prefix length is the smallest whose completed tree
    retains ``(1 - theta^2) |r|^2``.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    total = float(np.dot(r.values, r.values))
    if total == 0.0:
        raise ValueError("coarse needs a nonzero residual")
    need = (1.0 - theta * theta) * total
    order = np.argsort(-np.abs(r.values), kind="stable")

    def kept(k):
        t = ancestors_closure(r.keys[order[:k]], n_patches)
        vals = r.values_on(t)
        return t, float(np.dot(vals, vals))

    lo, hi = 1, order.size
    while lo < hi:
        mid = (lo + hi) // 2
        if kept(mid)[1] >= need * (1 - 1e-14):
            hi = mid
        else:
            lo = mid + 1
    return Tree(kept(lo)[0], n_patches, check=False)


# ---------------------------------------------------------------------------
# drivers


class _Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.t0


def _solve_step(surface, tree, rhs, state, cfg):
    f_T = rhs.exact(tree.keys)
    u = solve_galerkin(surface, tree, f_T, cfg, x0=state.u if state is not None else None)
    return u


def _record(state, step, r, delta, clock) -> None:
    state.history.append(ConvergenceRecord(step, state.dofs, r.norm(), delta, clock()))


def solve_adaptive(surface: Surface, g: RightHandSide, cfg: SolverConfig = SolverConfig(),
                   rhs: RhsApproximator | None = None, callback=None) -> SolverState:
    """SOLVE -> ESTIMATE -> MARK -> REFINE until ``(1 + omega)|r| <= eps``."""
    clock = _Clock()
    rhs = rhs or RhsApproximator(surface, g, cfg.quad, cfg.j_max)
    n_p = surface.n_patches
    tree = Tree(root_keys(n_p), n_p)
    state = SolverState(tree, CoeffVector(), delta=initial_delta(rhs, cfg))
    step = 0
    while True:
        state.u = _solve_step(surface, state.tree, rhs, state, cfg)
        try:
            r, state.delta = estimate_residual(surface, g, state, cfg, rhs)
        except (RhsCertificationError, StagnationError) as exc:
            raise PartialResultError(str(exc), state) from exc
        state.residual = r
        _record(state, step, r, state.delta, clock)
        if callback:
            callback(state)
        log.info("adaptive %d: dofs=%d |r|=%.4e delta=%.3e", step, state.dofs, r.norm(), state.delta)
        if (1 + cfg.omega) * r.norm() <= cfg.eps or r.norm() + state.delta <= cfg.eps:
            state.converged = True
            return state
        new = coarse(cfg.theta, r, n_p)
        keys = np.union1d(state.tree.keys, new.keys)
        if keys.size == state.tree.keys.size:
            raise PartialResultError("refinement added no indices (level cap)", state)
        if keys.size > cfg.max_dofs:
            raise PartialResultError(f"next tree has {keys.size} > {cfg.max_dofs} indices", state)
        state.tree = Tree(keys, n_p, check=False)
        state.tree.validate()
        step += 1


def solve_uniform(surface: Surface, g: RightHandSide, cfg: SolverConfig = SolverConfig(),
                  rhs: RhsApproximator | None = None, callback=None) -> SolverState:
    """Same loop with REFINE replaced by the next full level (levels ``0..j_max``)."""
    clock = _Clock()
    rhs = rhs or RhsApproximator(surface, g, cfg.quad, LEVEL_LIMIT)
    n_p = surface.n_patches
    state = None
    delta = initial_delta(rhs, cfg)
    for lev in range(cfg.j_max + 1):
        tree = uniform_tree(n_p, lev + 1)
        if len(tree) > cfg.max_dofs:
            break
        if state is None:
            state = SolverState(tree, CoeffVector(), delta=delta)
        else:
            state.tree = tree
        state.u = _solve_step(surface, tree, rhs, state, cfg)
        try:
            r, state.delta = estimate_residual(surface, g, state, cfg, rhs)
        except (RhsCertificationError, StagnationError) as exc:
            raise PartialResultError(str(exc), state) from exc
        state.residual = r
        _record(state, lev, r, state.delta, clock)
        if callback:
            callback(state)
        log.info("uniform %d: dofs=%d |r|=%.4e delta=%.3e", lev, state.dofs, r.norm(), state.delta)
        if (1 + cfg.omega) * r.norm() <= cfg.eps or r.norm() + state.delta <= cfg.eps:
            state.converged = True
            return state
    if state is None:
        raise ValueError("max_dofs is below the first uniform tree")
    raise PartialResultError(f"level cap {cfg.j_max} reached before eps", state)


def solve(surface: Surface, g: RightHandSide, cfg: SolverConfig = SolverConfig(), **kw) -> SolverState:
    fn = solve_adaptive if cfg.mode == "adaptive" else solve_uniform
    return fn(surface, g, cfg, **kw)
