"""Multigrid-reduction preconditioner.

Each reduction level picks a set of F-points, builds approximate ideal
restriction/prolongation

    P = [W_p; I],   R = [W_r, I]        (in F-first ordering)

with W_p = -D_ff^-1 A_fc and W_r either 0 (injective) or -A_cf D_ff^-1,
then forms the Galerkin coarse operator R A P explicitly.  One sweep of
the preconditioner is the multiplicative two-stage pass

    e <- e + Q M_ff^-1 Q^T (r - A e)      (F-relaxation)
    e <- e + P M_c^-1 R (r - A e)         (coarse-grid correction)

applied recursively down the hierarchy; the final coarse operator is
handled by classical AMG.  With exact A_ff^-1 everywhere the error
propagator vanishes, which the tests exploit.

For the two-phase NCP Jacobian the level sequence eliminates, in order,
the active constraints (exactly, their block is diagonal), the saturation
block, and the inactive constraints, leaving a pressure-sized operator
that AMG handles well.  Levels whose F-selector matches nothing are
skipped, so the hierarchy adapts to the current phase state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import amg as amg_mod
from .assembly import (LABEL_P, LABEL_RHO_ACTIVE, LABEL_RHO_INACTIVE, LABEL_S,
                       BlockSystem)
from .sparse import CsrMatrix, IndexPartition, extract, triple_product


class ZeroFDiagonal(RuntimeError):
    def __init__(self, row):
        super().__init__(f"zero diagonal in A_ff at fine row {row}")
        self.row = row


class RpKind(Enum):
    INJECTIVE = "injective"          # W_r = 0,            W_p = -D_ff^-1 A_fc
    NONINJECTIVE = "noninjective"    # W_r = -A_cf D_ff^-1, W_p = -D_ff^-1 A_fc
    INJECTION = "injection"          # W_r = W_p = 0 (CPR-style pure injection)
    IDEAL = "ideal"                  # exact A_ff^-1 in both (tests only)


@dataclass(frozen=True)
class FRelax:
    """F-relaxation choice: 'jacobi' | 'gauss_seidel' | 'amg' | 'exact'."""

    kind: str = "jacobi"
    sweeps: int = 1          # jacobi / gauss_seidel sweeps
    pre: int = 1             # amg V-cycle smoothing
    post: int = 1
    max_levels: int = 0      # amg hierarchy depth cap; 0 = no cap

    def __post_init__(self):
        if self.kind not in ("jacobi", "gauss_seidel", "amg", "exact"):
            raise ValueError(f"unknown F-relaxation {self.kind!r}")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")


@dataclass(frozen=True)
class MgrLevelSpec:
    """One reduction level: which labels become F-points and how to treat them."""

    f_labels: tuple
    rp: RpKind = RpKind.INJECTIVE
    f_relax: FRelax = FRelax()
    global_relax: bool = False


@dataclass
class MgrLevel:
    a: CsrMatrix
    part: IndexPartition
    r: CsrMatrix
    p: CsrMatrix
    spec: MgrLevelSpec
    f_solver: object
    coarse_a: CsrMatrix = None
    block_solver: object = None
    _asp: object = None
    _rsp: object = None
    _psp: object = None


@dataclass
class MgrHierarchy:
    levels: list
    coarse_kind: str                  # 'amg' | 'exact'
    coarse_amg: amg_mod.AmgHierarchy | None = None
    coarse_lu: object = None
    post_smoothing: bool = False
    n: int = 0

    def coarse_operator(self) -> CsrMatrix:
        if self.levels:
            la = self.levels[-1]
            return la.coarse_a
        raise ValueError("empty hierarchy")

    def level_dims(self):
        dims = [lvl.a.nrows for lvl in self.levels]
        dims.append(self.levels[-1].coarse_a.nrows if self.levels else self.n)
        return dims


def build_rp(a: CsrMatrix, part: IndexPartition, kind: RpKind):
    """Approximate ideal restriction/prolongation mapped to original indices."""
    f, c = part.f_points, part.c_points
    n, nf, nc = a.nrows, f.size, c.size
    if nf == 0 or nc == 0:
        raise ValueError("both F and C sets must be nonempty")

    a_fc = extract(a, f, c).m
    a_cf = extract(a, c, f).m

    if kind is RpKind.IDEAL:
        a_ff = extract(a, f, f).m.tocsc()
        lu = spla.splu(a_ff)
        w_p = sp.csr_matrix(-lu.solve(a_fc.toarray()))
        w_r = sp.csr_matrix(-lu.solve(a_cf.T.toarray(), trans="T").T)
    else:
        d = a.diagonal()[f]
        if np.any(d == 0.0):
            raise ZeroFDiagonal(int(f[np.where(d == 0.0)[0][0]]))
        inv_d = sp.diags(1.0 / d)
        w_p = (-(inv_d @ a_fc)).tocsr() if kind is not RpKind.INJECTION else None
        w_r = (-(a_cf @ inv_d)).tocsr() if kind is RpKind.NONINJECTIVE else None

    def scatter(w, row_map, col_map, shape, ident_rows, ident_cols):
        rows = [ident_rows]
        cols = [ident_cols]
        vals = [np.ones(nc)]
        if w is not None and w.nnz:
            wc = w.tocoo()
            rows.append(row_map[wc.row])
            cols.append(col_map[wc.col])
            vals.append(wc.data)
        m = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=shape).tocsr()
        return CsrMatrix(m)

    p = scatter(w_p, f, np.arange(nc), (n, nc), ident_rows=c, ident_cols=np.arange(nc))
    r = scatter(w_r, np.arange(nc), f, (nc, n), ident_rows=np.arange(nc), ident_cols=c)
    return r, p


class _JacobiF:
    def __init__(self, a_ff: CsrMatrix, sweeps):
        d = a_ff.diagonal()
        if np.any(d == 0.0):
            raise ZeroFDiagonal(int(np.where(d == 0.0)[0][0]))
        self.inv_d = 1.0 / d
        self.sweeps = sweeps
        self.a = a_ff.m if sweeps > 1 else None

    def solve(self, r):
        x = self.inv_d * r
        for _ in range(self.sweeps - 1):
            x = x + self.inv_d * (r - self.a @ x)
        return x


class _GaussSeidelF:
    def __init__(self, a_ff: CsrMatrix, sweeps):
        d = a_ff.diagonal()
        if np.any(d == 0.0):
            raise ZeroFDiagonal(int(np.where(d == 0.0)[0][0]))
        self.a = a_ff.m
        self.lower = spla.splu(sp.tril(self.a, k=0, format="csc"), permc_spec="NATURAL")
        self.sweeps = sweeps

    def solve(self, r):
        x = self.lower.solve(r)
        for _ in range(self.sweeps - 1):
            x = x + self.lower.solve(r - self.a @ x)
        return x


class _AmgF:
    def __init__(self, a_ff: CsrMatrix, frelax: FRelax, amg_opts: amg_mod.AmgOptions):
        opts = amg_mod.AmgOptions(
            strength_theta=amg_opts.strength_theta,
            max_levels=frelax.max_levels or amg_opts.max_levels,
            coarse_size_cutoff=amg_opts.coarse_size_cutoff,
            pre_sweeps=frelax.pre, post_sweeps=frelax.post, cycles=1)
        self.hier = amg_mod.amg_setup(a_ff, opts)

    def solve(self, r):
        return amg_mod.amg_vcycle(self.hier, r)


class _ExactF:
    def __init__(self, a_ff: CsrMatrix):
        self.lu = spla.splu(a_ff.m.tocsc())

    def solve(self, r):
        return self.lu.solve(r)


class _BlockDiagSolver:
    """Per-cell block-diagonal solve used by the global relaxation step.

    Cells are batched by block size so setup inverts stacks of small dense
    blocks and apply is a single batched matvec per size class.
    """

    def __init__(self, a: CsrMatrix, cells):
        cells = np.asarray(cells)
        order = np.argsort(cells, kind="stable")
        cells_sorted = cells[order]
        boundaries = np.flatnonzero(np.diff(cells_sorted)) + 1
        segments = np.split(order, boundaries)
        by_size = {}
        for seg in segments:
            by_size.setdefault(seg.size, []).append(np.sort(seg))
        self.batches = []
        dense = a.to_dense() if a.nrows <= 512 else None
        for size, idx_list in sorted(by_size.items()):
            idx = np.vstack(idx_list)                   # (m, size)
            if dense is not None:
                blocks = dense[idx[:, :, None], idx[:, None, :]]
            else:
                blocks = _gather_blocks(a, idx)
            self.batches.append((idx, np.linalg.inv(blocks)))

    def solve(self, r):
        x = np.zeros_like(r)
        for idx, inv in self.batches:
            x[idx] = np.einsum("mij,mj->mi", inv, r[idx])
        return x


def _gather_blocks(a: CsrMatrix, idx):
    """Dense (m, k, k) blocks A[idx[i], idx[i]] gathered from sparse storage."""
    m, k = idx.shape
    rq = np.broadcast_to(idx[:, :, None], (m, k, k)).ravel()
    cq = np.broadcast_to(idx[:, None, :], (m, k, k)).ravel()
    vals = np.asarray(a.m[rq, cq]).ravel()
    return vals.reshape(m, k, k)


def _make_f_solver(a_ff: CsrMatrix, spec: MgrLevelSpec, amg_opts):
    fr = spec.f_relax
    if fr.kind == "jacobi":
        return _JacobiF(a_ff, fr.sweeps)
    if fr.kind == "gauss_seidel":
        return _GaussSeidelF(a_ff, fr.sweeps)
    if fr.kind == "amg":
        return _AmgF(a_ff, fr, amg_opts)
    return _ExactF(a_ff)


def setup_from_matrix(a: CsrMatrix, level_plan, amg_opts=None, *,
                      coarse="amg", post_smoothing=False, cells=None) -> MgrHierarchy:
    """Generic MGR setup from (f_indices, spec) pairs.

    Entries whose F set is empty (or swallows the whole level) are
    skipped.  ``coarse`` picks the bottom solver: 'amg' (AmgOptions govern
    sweeps/cycles) or 'exact'.  ``cells`` optionally tags each unknown
    with an owning cell for the block-diagonal global relaxation.
    """
    amg_opts = amg_opts or amg_mod.AmgOptions()
    levels = []
    current = a
    n0 = a.nrows
    cur_cells = np.arange(n0) if cells is None else np.asarray(cells)

    for f_idx, spec in level_plan:
        f_idx = np.asarray(f_idx, dtype=np.int64)
        if f_idx.size == 0 or f_idx.size == current.nrows:
            continue
        mask = np.zeros(current.nrows, dtype=bool)
        mask[f_idx] = True
        part = IndexPartition.from_f_mask(mask)
        r, p = build_rp(current, part, spec.rp)
        coarse_a = triple_product(r, current, p)
        a_ff = extract(current, part.f_points, part.f_points)
        lvl = MgrLevel(a=current, part=part, r=r, p=p, spec=spec,
                       f_solver=_make_f_solver(a_ff, spec, amg_opts),
                       coarse_a=coarse_a)
        if spec.global_relax:
            lvl.block_solver = _BlockDiagSolver(current, cur_cells)
        lvl._asp = current.m
        lvl._rsp = r.m
        lvl._psp = p.m
        levels.append(lvl)
        cur_cells = cur_cells[part.c_points]
        current = coarse_a

    hier = MgrHierarchy(levels=levels, coarse_kind=coarse,
                        post_smoothing=post_smoothing, n=n0)
    if coarse == "amg":
        hier.coarse_amg = amg_mod.amg_setup(current, amg_opts)
    elif coarse == "exact":
        hier.coarse_lu = spla.splu(current.m.tocsc())
    else:
        raise ValueError(f"unknown coarse solver {coarse!r}")
    return hier


def mgr_setup(system: BlockSystem, specs, amg_opts=None, *,
              coarse="amg", post_smoothing=False) -> MgrHierarchy:
    """Build the reduction hierarchy for a two-phase NCP block system.

    Each spec selects F-points by unknown label on the current level;
    labels of surviving C-points carry down, so e.g. the saturation level
    still finds its rows after the constraint level was skipped for lack
    of active cells.
    """
    labels = system.labels()
    plan = []
    remaining = labels
    for spec in specs:
        f_idx = np.where(np.isin(remaining, spec.f_labels))[0]
        plan.append((f_idx, spec))
        if 0 < f_idx.size < remaining.size:
            keep = np.ones(remaining.size, dtype=bool)
            keep[f_idx] = False
            remaining = remaining[keep]
    return setup_from_matrix(system.a, plan, amg_opts, coarse=coarse,
                             post_smoothing=post_smoothing, cells=system.cells())


def _apply_level(hier: MgrHierarchy, k: int, r):
    if k == len(hier.levels):
        if hier.coarse_kind == "amg":
            return amg_mod.amg_apply(hier.coarse_amg, r)
        return hier.coarse_lu.solve(r)

    lvl = hier.levels[k]
    f = lvl.part.f_points
    state = {"zero": True}

    def resid(e):
        return r if state["zero"] else r - lvl._asp @ e

    def f_relax(e):
        e[f] += lvl.f_solver.solve(resid(e)[f])
        state["zero"] = False
        return e

    def coarse_correct(e):
        ec = _apply_level(hier, k + 1, lvl._rsp @ resid(e))
        state["zero"] = False
        return e + lvl._psp @ ec

    e = np.zeros_like(r)
    if lvl.block_solver is not None:
        e = lvl.block_solver.solve(r)
        state["zero"] = False
    if hier.post_smoothing:
        e = coarse_correct(e)
        e = f_relax(e)
    else:
        e = f_relax(e)
        e = coarse_correct(e)
    return e


def mgr_apply(hier: MgrHierarchy, r) -> np.ndarray:
    """One multiplicative MGR sweep; linear and deterministic in r."""
    r = np.asarray(r, dtype=float)
    if r.shape != (hier.n,):
        raise ValueError("mgr_apply: dimension mismatch")
    return _apply_level(hier, 0, r)


# -- scenario presets --------------------------------------------------------

ACTIVE_CONSTRAINTS = (LABEL_RHO_ACTIVE,)
SATURATIONS = (LABEL_S,)
INACTIVE_CONSTRAINTS = (LABEL_RHO_INACTIVE,)
NON_PRESSURE = (LABEL_S, LABEL_RHO_ACTIVE, LABEL_RHO_INACTIVE)


def default_2p2c_specs(scenario_kind: str):
    """Per-scenario reduction configuration, as data.

    'unsaturated': two injective levels (active constraints, then
    saturation); the saturation block gets a single AMG V(0,1) cycle,
    which stays mesh-robust where plain Gauss-Seidel sweeps degrade with
    refinement.  'gas_appearance' and 'box3d': three noninjective levels
    with a single Jacobi sweep on the (diagonal, hence exact)
    active-constraint block and AMG V(1,1) F-relaxation below.
    """
    if scenario_kind == "unsaturated":
        return [
            MgrLevelSpec(ACTIVE_CONSTRAINTS, RpKind.INJECTIVE,
                         FRelax("gauss_seidel", sweeps=3)),
            MgrLevelSpec(SATURATIONS, RpKind.INJECTIVE,
                         FRelax("amg", pre=0, post=1)),
        ]
    if scenario_kind in ("gas_appearance", "box3d"):
        # the saturation/constraint blocks coarsen poorly under RS, so their
        # V(1,1) hierarchies are capped at two levels with a direct coarse
        return [
            MgrLevelSpec(ACTIVE_CONSTRAINTS, RpKind.NONINJECTIVE,
                         FRelax("jacobi", sweeps=1)),
            MgrLevelSpec(SATURATIONS, RpKind.NONINJECTIVE,
                         FRelax("amg", pre=1, post=1, max_levels=2)),
            MgrLevelSpec(INACTIVE_CONSTRAINTS, RpKind.NONINJECTIVE,
                         FRelax("amg", pre=1, post=1, max_levels=2)),
        ]
    raise ValueError(f"no default MGR configuration for scenario {scenario_kind!r}")


def cpr_specs(gs_sweeps: int = 1):
    """CPR-AMG emulation: all non-pressure unknowns as F-points with pure
    injection transfers and Gauss-Seidel standing in for the usual ILU(0)
    smoother (which cannot survive the zero-diagonal constraint rows).
    Approximate by construction; suited to states without phase
    disappearance."""
    return [MgrLevelSpec(NON_PRESSURE, RpKind.INJECTION,
                         FRelax("gauss_seidel", sweeps=gs_sweeps))]
