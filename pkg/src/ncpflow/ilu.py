"""ILU(k): incomplete LU factorization with structural level-of-fill.

The symbolic phase computes the level-k fill pattern (original entries are
level 0, a fill entry at (i,j) created through pivot p gets level
lev(i,p) + lev(p,j) + 1 and survives if <= k).  The numeric phase runs the
usual IKJ elimination restricted to that pattern.  There is no pivoting
and no diagonal perturbation: a zero pivot is reported, which is exactly
what happens on constraint rows whose diagonal vanishes when a phase
disappears.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .sparse import CsrMatrix


class ZeroPivot(RuntimeError):
    def __init__(self, row):
        super().__init__(f"zero pivot encountered at row {row}")
        self.row = row


@dataclass
class IluFactorization:
    """Combined L\\U storage (unit lower diagonal implicit) plus solve handles."""

    matrix: CsrMatrix
    level: int
    _lower: object = None
    _upper: object = None

    @property
    def n(self):
        return self.matrix.nrows

    def pattern(self):
        """Set of (row, col) structural positions, for fill-nesting checks."""
        m = self.matrix
        out = set()
        for i in range(m.nrows):
            for j in m.col_indices[m.row_offsets[i]:m.row_offsets[i + 1]]:
                out.add((i, int(j)))
        return out


def _symbolic_fill(a: CsrMatrix, level: int):
    """Column pattern (sorted) per row of the level-`level` closure."""
    n = a.nrows
    indptr, indices = a.row_offsets, a.col_indices
    upper_cols = []   # per finished row: columns > diagonal
    upper_levs = []
    patterns = []
    levels_work = np.full(n, -1, dtype=np.int64)  # -1 = absent

    for i in range(n):
        cols0 = indices[indptr[i]:indptr[i + 1]]
        touched = list(cols0)
        levels_work[cols0] = 0
        heap = [int(c) for c in cols0 if c < i]
        heapq.heapify(heap)
        seen = set(heap)
        while heap:
            p = heapq.heappop(heap)
            lev_ip = levels_work[p]
            if lev_ip < 0 or lev_ip > level:
                continue
            ucols = upper_cols[p]
            ulevs = upper_levs[p]
            fill = lev_ip + ulevs + 1
            for c, lf in zip(ucols, fill):
                if lf > level:
                    continue
                cur = levels_work[c]
                if cur < 0:
                    levels_work[c] = lf
                    touched.append(c)
                    if c < i and c not in seen:
                        heapq.heappush(heap, int(c))
                        seen.add(int(c))
                elif lf < cur:
                    levels_work[c] = lf
        touched = np.unique(np.asarray(touched, dtype=np.int64))
        keep = touched[levels_work[touched] <= level]
        patterns.append(keep)
        up = keep[keep > i]
        upper_cols.append(up)
        upper_levs.append(levels_work[up].copy())
        levels_work[touched] = -1
    return patterns


def ilu_factor(a: CsrMatrix, level: int = 0) -> IluFactorization:
    if a.nrows != a.ncols:
        raise ValueError("ILU expects a square matrix")
    if level < 0:
        raise ValueError("fill level must be nonnegative")
    n = a.nrows
    indptr, indices, data = a.row_offsets, a.col_indices, a.values

    if level == 0:
        patterns = [indices[indptr[i]:indptr[i + 1]] for i in range(n)]
    else:
        patterns = _symbolic_fill(a, level)

    # numeric IKJ elimination with a dense work row masked to the pattern
    work = np.zeros(n)
    in_pattern = np.zeros(n, dtype=bool)
    u_rows = [None] * n       # (cols > i, values) per finished row
    u_diag = np.zeros(n)
    out_indptr = np.zeros(n + 1, dtype=np.int64)
    out_cols = []
    out_vals = []

    for i in range(n):
        cols = np.asarray(patterns[i], dtype=np.int64)
        in_pattern[cols] = True
        acols = indices[indptr[i]:indptr[i + 1]]
        work[acols] = data[indptr[i]:indptr[i + 1]]

        for p in cols[cols < i]:
            piv = u_diag[p]
            if piv == 0.0:
                in_pattern[cols] = False
                work[cols] = 0.0
                raise ZeroPivot(int(p))
            lip = work[p] / piv
            work[p] = lip
            ucols, uvals = u_rows[p]
            if ucols.size:
                work[ucols] -= lip * uvals * in_pattern[ucols]

        if not in_pattern[i] or work[i] == 0.0:
            raise ZeroPivot(i)
        row_vals = work[cols].copy()
        u_diag[i] = work[i]
        upper = cols[cols > i]
        u_rows[i] = (upper, work[upper].copy())
        out_cols.append(cols)
        out_vals.append(row_vals)
        out_indptr[i + 1] = out_indptr[i] + cols.size
        in_pattern[cols] = False
        work[cols] = 0.0

    combined = CsrMatrix.from_arrays(
        n, n, out_indptr, np.concatenate(out_cols), np.concatenate(out_vals))
    fact = IluFactorization(matrix=combined, level=level)
    _attach_solvers(fact)
    return fact


def _attach_solvers(fact: IluFactorization):
    m = fact.matrix.m
    lower = sp.tril(m, k=-1, format="csr") + sp.identity(fact.n, format="csr")
    upper = sp.triu(m, k=0, format="csr")
    fact._lower = spla.splu(lower.tocsc(), permc_spec="NATURAL")
    fact._upper = spla.splu(upper.tocsc(), permc_spec="NATURAL")


def ilu_apply(fact: IluFactorization, r) -> np.ndarray:
    """Forward/backward triangular solves on the incomplete factors."""
    r = np.asarray(r, dtype=float)
    if r.shape != (fact.n,):
        raise ValueError("ilu_apply: dimension mismatch")
    return fact._upper.solve(fact._lower.solve(r))
