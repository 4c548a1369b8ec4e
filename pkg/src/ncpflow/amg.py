"""Serial classical algebraic multigrid (Ruge-Stuben style).

Strength of connection uses the negative-off-diagonal convention for
M-matrix-like rows and falls back to absolute values for rows without
negative off-diagonals.  Coarsening is the standard two-pass RS splitting,
interpolation is classical direct interpolation with signed handling, and
coarse operators are explicit Galerkin triple products.  The V-cycle
smoother is forward Gauss-Seidel on the way down and backward on the way
up, the serial equivalent of the usual hybrid GS/SOR default.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .sparse import CsrMatrix, triple_product

UNDECIDED, FPOINT, CPOINT = 0, 1, 2


class AmgSetupError(RuntimeError):
    pass


@dataclass(frozen=True)
class AmgOptions:
    strength_theta: float = 0.25
    max_levels: int = 25
    coarse_size_cutoff: int = 50
    pre_sweeps: int = 1
    post_sweeps: int = 1
    cycles: int = 1                  # repetitions when used as a coarse solver
    interpolation: str = "classical"  # 'classical' (with F-F distribution) or 'direct'

    def __post_init__(self):
        if not (0.0 < self.strength_theta < 1.0):
            raise ValueError("strength_theta must lie in (0, 1)")
        if self.pre_sweeps < 0 or self.post_sweeps < 0:
            raise ValueError("sweep counts must be nonnegative")
        if self.max_levels < 1 or self.coarse_size_cutoff < 1 or self.cycles < 1:
            raise ValueError("max_levels, coarse_size_cutoff and cycles must be >= 1")
        if self.interpolation not in ("classical", "direct"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


@dataclass
class AmgLevel:
    a: CsrMatrix
    p: CsrMatrix | None = None           # interpolation to this level's fine grid
    splitting: np.ndarray | None = None  # CPOINT/FPOINT marker
    _asp: object = None
    _psp: object = None
    _rsp: object = None
    _lower: object = None                # splu of D+L for forward GS
    _upper: object = None                # splu of D+U for backward GS

    @property
    def n(self):
        return self.a.nrows


@dataclass
class AmgHierarchy:
    levels: list
    options: AmgOptions
    coarse_dense: tuple | None = None    # (lu, piv) from scipy.linalg.lu_factor
    coarse_splu: object = None           # sparse fallback when coarsening stalls
    row_sign: np.ndarray | None = None   # rows flipped so diagonals are positive

    @property
    def n(self):
        return self.levels[0].n

    def level_sizes(self):
        return [lvl.n for lvl in self.levels]

    def operator_complexity(self):
        nnz0 = self.levels[0].a.nnz
        return sum(lvl.a.nnz for lvl in self.levels) / max(nnz0, 1)


def strength_graph(a: CsrMatrix, theta: float):
    """Boolean strong-connection mask aligned with a's nonzero layout."""
    indptr, indices, data = a.row_offsets, a.col_indices, a.values
    n = a.nrows
    row_idx = np.repeat(np.arange(n), np.diff(indptr))
    off = indices != row_idx
    neg = off & (data < 0.0)
    has_neg = np.zeros(n, dtype=bool)
    has_neg[row_idx[neg]] = True
    cand = np.where(neg, -data,
                    np.where(off & ~has_neg[row_idx], np.abs(data), 0.0))
    rowmax = np.zeros(n)
    np.maximum.at(rowmax, row_idx, cand)
    strong = (rowmax[row_idx] > 0.0) & (cand >= theta * rowmax[row_idx])
    return sp.csr_matrix((strong.astype(np.int8), indices.copy(), indptr.copy()),
                         shape=(n, n))


def rs_splitting(strong: sp.csr_matrix):
    """Two-pass Ruge-Stuben C/F splitting on the strength graph.

    First pass: greedy maximal-measure selection where the measure of a
    point is the number of points it strongly influences, bumped whenever
    a neighbour it influences becomes an F-point.  Second pass: promote
    F-points involved in a strong F-F pair with no common strong C-point.

    ``strong`` carries 0/1 data over the operator's full pattern; only
    entries with nonzero data are edges of the graph.
    """
    n = strong.shape[0]
    s = strong.copy()
    s.eliminate_zeros()
    s_t = s.T.tocsr()
    lam = np.diff(s_t.indptr).astype(np.int64)  # how many points i influences
    state = np.full(n, UNDECIDED, dtype=np.int8)

    heap = [(-lam[i], i) for i in range(n)]
    heapq.heapify(heap)
    remaining = n
    while remaining:
        measure, i = heapq.heappop(heap)
        if state[i] != UNDECIDED or -measure != lam[i]:
            continue  # stale entry
        state[i] = CPOINT
        remaining -= 1
        # points strongly depending on i become F
        for j in s_t.indices[s_t.indptr[i]:s_t.indptr[i + 1]]:
            if state[j] != UNDECIDED:
                continue
            state[j] = FPOINT
            remaining -= 1
            # their influencers become more attractive C candidates
            for k in s.indices[s.indptr[j]:s.indptr[j + 1]]:
                if state[k] == UNDECIDED:
                    lam[k] += 1
                    heapq.heappush(heap, (-lam[k], k))

    # second pass: strong F-F pairs need a common strong C-point
    sc_sets = []
    for i in range(n):
        cols = s.indices[s.indptr[i]:s.indptr[i + 1]]
        sc_sets.append(frozenset(int(c) for c in cols if state[c] == CPOINT))
    for i in range(n):
        if state[i] != FPOINT:
            continue
        cols = s.indices[s.indptr[i]:s.indptr[i + 1]]
        for j in cols:
            if state[j] == FPOINT and not (sc_sets[i] & sc_sets[j]):
                state[i] = CPOINT
                break
    return state


def direct_interpolation(a: CsrMatrix, strong: sp.csr_matrix, state) -> CsrMatrix:
    """Classical direct interpolation with separate negative/positive scaling.

    For a zero-row-sum M-matrix the weights of every F row sum to one, so
    constants are preserved.  Rows whose strong C set has no negative
    connections fall back to Jacobi-like weights -a_ij/a_ii.
    """
    n = a.nrows
    indptr, indices, data = a.row_offsets, a.col_indices, a.values
    c_points = np.where(state == CPOINT)[0]
    coarse_id = np.full(n, -1, dtype=np.int64)
    coarse_id[c_points] = np.arange(c_points.size)

    row_idx = np.repeat(np.arange(n), np.diff(indptr))
    f_row = state[row_idx] == FPOINT
    off = indices != row_idx
    sel = f_row & off & strong.data.astype(bool) & (state[indices] == CPOINT)

    negv = np.where(data < 0.0, data, 0.0)
    posv = np.where(data > 0.0, data, 0.0)
    s_neg = np.bincount(row_idx, weights=np.where(off, negv, 0.0), minlength=n)
    s_pos = np.bincount(row_idx, weights=np.where(off, posv, 0.0), minlength=n)
    c_neg = np.bincount(row_idx, weights=np.where(sel, negv, 0.0), minlength=n)
    c_pos = np.bincount(row_idx, weights=np.where(sel, posv, 0.0), minlength=n)

    alpha = np.where(c_neg != 0.0, s_neg / np.where(c_neg != 0.0, c_neg, 1.0), 1.0)
    beta = np.where(c_pos != 0.0, s_pos / np.where(c_pos != 0.0, c_pos, 1.0), 0.0)
    # positive connections without positive C partners are lumped into the diagonal
    diag = a.diagonal() + np.where(c_pos == 0.0, s_pos, 0.0)
    f_with_set = np.zeros(n, dtype=bool)
    f_with_set[row_idx[sel]] = True
    if np.any(f_with_set & (diag == 0.0)):
        bad = int(np.where(f_with_set & (diag == 0.0))[0][0])
        raise AmgSetupError(f"direct interpolation hit a zero diagonal at row {bad}")

    scale = np.where(data < 0.0, alpha[row_idx], beta[row_idx])
    safe_diag = np.where(diag == 0.0, 1.0, diag)
    w = -scale * data / safe_diag[row_idx]

    rows = np.concatenate([c_points, row_idx[sel]])
    cols = np.concatenate([np.arange(c_points.size), coarse_id[indices[sel]]])
    vals = np.concatenate([np.ones(c_points.size), w[sel]])
    return CsrMatrix.from_coo(n, c_points.size, rows, cols, vals)


def classical_interpolation(a: CsrMatrix, strong: sp.csr_matrix, state) -> CsrMatrix:
    """Classical Ruge-Stuben interpolation with strong F-F distribution.

    Strong F neighbours are distributed over the interpolatory C set
    through their own matrix rows (restricted to entries whose sign
    opposes that row's diagonal); weak connections are lumped into the
    diagonal.  This is the interpolation the usual AMG defaults apply and
    it is markedly stronger than direct interpolation on Schur-complement
    style operators with distance-two couplings.
    """
    n = a.nrows
    indptr, indices, data = a.row_offsets, a.col_indices, a.values
    strong_mask = strong.data.astype(bool)
    c_points = np.where(state == CPOINT)[0]
    coarse_id = np.full(n, -1, dtype=np.int64)
    coarse_id[c_points] = np.arange(c_points.size)
    in_c = state == CPOINT

    rows = [c_points]
    cols = [np.arange(c_points.size)]
    vals = [np.ones(c_points.size)]

    # dense scratch over columns of the interpolatory set of the current row
    num = np.zeros(n)
    member = np.zeros(n, dtype=bool)

    for i in np.where(state == FPOINT)[0]:
        lo, hi = indptr[i], indptr[i + 1]
        ncols = indices[lo:hi]
        nvals = data[lo:hi]
        smask = strong_mask[lo:hi]
        off = ncols != i
        diag = float(nvals[~off].sum())

        ci_mask = smask & in_c[ncols] & off
        ci = ncols[ci_mask]
        if ci.size == 0:
            continue  # no interpolatory set; the smoother owns this point
        member[ci] = True
        num[ci] = nvals[ci_mask]
        denom = diag

        strong_f = smask & off & (state[ncols] == FPOINT)
        weak = off & ~ci_mask & ~strong_f
        denom += float(nvals[weak].sum())

        for m, a_im in zip(ncols[strong_f], nvals[strong_f]):
            mlo, mhi = indptr[m], indptr[m + 1]
            mcols = indices[mlo:mhi]
            mvals = data[mlo:mhi]
            m_diag = float(mvals[mcols == m].sum())
            use = member[mcols] & (mvals * m_diag < 0.0)
            d_m = float(mvals[use].sum())
            if d_m == 0.0:
                denom += a_im  # no usable common C; lump like a weak link
            else:
                np.add.at(num, mcols[use], a_im * mvals[use] / d_m)

        if denom == 0.0:
            member[ci] = False
            num[ci] = 0.0
            raise AmgSetupError(f"classical interpolation hit a zero pivot at row {i}")
        w = -num[ci] / denom
        rows.append(np.full(ci.size, i, dtype=np.int64))
        cols.append(coarse_id[ci])
        vals.append(w)
        member[ci] = False
        num[ci] = 0.0

    return CsrMatrix.from_coo(n, c_points.size, np.concatenate(rows),
                              np.concatenate(cols), np.concatenate(vals))


def _triangular_handles(m: sp.csr_matrix):
    diag = m.diagonal()
    if np.any(diag == 0.0):
        raise AmgSetupError("Gauss-Seidel smoother requires a nonzero diagonal")
    lower = sp.tril(m, k=0, format="csc")
    upper = sp.triu(m, k=0, format="csc")
    return (spla.splu(lower, permc_spec="NATURAL"),
            spla.splu(upper, permc_spec="NATURAL"))


def amg_setup(a: CsrMatrix, opts: AmgOptions = AmgOptions()) -> AmgHierarchy:
    if a.nrows != a.ncols:
        raise AmgSetupError("AMG expects a square operator")
    diag = a.diagonal()
    if np.any(diag == 0.0):
        raise AmgSetupError("AMG expects a nonzero diagonal")

    # normalize row signs so diagonals are positive; strength and
    # interpolation conventions assume M-matrix-like orientation
    row_sign = None
    if np.any(diag < 0.0):
        row_sign = np.where(diag < 0.0, -1.0, 1.0)
        a = CsrMatrix((sp.diags(row_sign) @ a.m).tocsr())

    levels = [AmgLevel(a=a)]
    while (levels[-1].n > opts.coarse_size_cutoff
           and len(levels) < opts.max_levels):
        cur = levels[-1]
        strong = strength_graph(cur.a, opts.strength_theta)
        state = rs_splitting(strong)
        n_coarse = int(np.sum(state == CPOINT))
        if n_coarse == 0:
            raise AmgSetupError("coarsening produced an empty C set")
        if n_coarse == cur.n:
            break  # no progress (e.g. diagonal matrix); stop here
        if opts.interpolation == "classical":
            p = classical_interpolation(cur.a, strong, state)
        else:
            p = direct_interpolation(cur.a, strong, state)
        coarse_a = triple_product(p.transpose(), cur.a, p)
        cur.p = p
        cur.splitting = state
        cur._psp = p.m
        cur._rsp = p.m.T.tocsr()
        levels.append(AmgLevel(a=coarse_a))

    hier = AmgHierarchy(levels=levels, options=opts, row_sign=row_sign)
    for lvl in levels[:-1]:
        lvl._asp = lvl.a.m
        lvl._lower, lvl._upper = _triangular_handles(lvl.a.m)

    coarse = levels[-1]
    coarse._asp = coarse.a.m
    if coarse.n <= max(opts.coarse_size_cutoff, 200):
        hier.coarse_dense = scipy.linalg.lu_factor(coarse.a.to_dense())
    else:
        # coarsening stalled on a large level; keep a sparse direct solve
        hier.coarse_splu = spla.splu(coarse.a.m.tocsc())
    return hier


def _coarse_solve(hier: AmgHierarchy, b):
    if hier.coarse_dense is not None:
        return scipy.linalg.lu_solve(hier.coarse_dense, b)
    return hier.coarse_splu.solve(b)


def _sweep(level: AmgLevel, x, b, forward=True):
    r = b - level._asp @ x
    if forward:
        x += level._lower.solve(r)
    else:
        x += level._upper.solve(r)
    return x


def _vcycle(hier: AmgHierarchy, k: int, b, x):
    level = hier.levels[k]
    if k == len(hier.levels) - 1:
        return _coarse_solve(hier, b)
    for _ in range(hier.options.pre_sweeps):
        x = _sweep(level, x, b, forward=True)
    r = b - level._asp @ x
    rc = level._rsp @ r
    ec = _vcycle(hier, k + 1, rc, np.zeros(rc.size))
    x = x + level._psp @ ec
    for _ in range(hier.options.post_sweeps):
        x = _sweep(level, x, b, forward=False)
    return x


def amg_vcycle(hier: AmgHierarchy, b, x0=None) -> np.ndarray:
    """One V(pre, post) cycle; a fixed linear operation in (b, x0)."""
    b = np.asarray(b, dtype=float)
    if b.shape != (hier.n,):
        raise ValueError("amg_vcycle: dimension mismatch")
    if hier.row_sign is not None:
        b = b * hier.row_sign
    x = np.zeros(hier.n) if x0 is None else np.array(x0, dtype=float)
    return _vcycle(hier, 0, b, x)


def amg_apply(hier: AmgHierarchy, b) -> np.ndarray:
    """`cycles` V-cycles from a zero initial guess (coarse-solver duty)."""
    x = amg_vcycle(hier, b)
    for _ in range(hier.options.cycles - 1):
        x = amg_vcycle(hier, b, x)
    return x
