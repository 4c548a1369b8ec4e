"""Restarted GMRES with right preconditioning.

Right preconditioning keeps the stopping test on the true residual
||b - A x||_2 <= rel_tol * ||b||_2, re-verified with an explicit residual
evaluation before reporting convergence.  When the caller supplies a
matrix norm, solves whose right-hand side concentrates on near-singular
directions (so the plain relative criterion sits below the attainable
floor) are also accepted on the normwise backward error
||r|| / (||A||*||x|| + ||b||) <= rel_tol, the standard notion of
"solved to working precision".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GmresOptions:
    rel_tol: float = 1e-12
    max_iter: int = 400
    restart: int = 30
    reorthogonalize: bool = True
    check_every: int = 25     # inner-loop true-residual checks (backward-error mode)

    def __post_init__(self):
        if self.rel_tol <= 0.0:
            raise ValueError("rel_tol must be positive")
        if self.restart < 1 or self.max_iter < 1:
            raise ValueError("restart and max_iter must be at least 1")


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float
    rhs_norm: float


def gmres(apply_a, apply_m, b, opts: GmresOptions = GmresOptions(),
          a_norm: float | None = None) -> GmresResult:
    """Solve A x = b with the right-preconditioned operator A M^-1.

    ``apply_a`` and ``apply_m`` are callables on vectors; ``apply_m=None``
    means no preconditioning.  Iterations count Arnoldi steps (one
    operator application each).  A happy breakdown is treated as
    convergence of the inner cycle.  ``a_norm`` (an infinity-norm bound on
    A) enables the backward-error acceptance described in the module
    docstring.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if apply_m is None:
        apply_m = lambda v: v

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return GmresResult(np.zeros(n), 0, True, 0.0, 0.0)
    tol = opts.rel_tol * b_norm

    def accepted(res_norm, x_norm):
        if res_norm <= tol:
            return True
        if a_norm is not None:
            return res_norm <= opts.rel_tol * (a_norm * x_norm + b_norm)
        return False

    x = np.zeros(n)
    total = 0

    while True:
        r = b - apply_a(x) if total else b.copy()
        res_norm = float(np.linalg.norm(r))
        if accepted(res_norm, float(np.linalg.norm(x))):
            return GmresResult(x, total, True, res_norm, b_norm)
        if total >= opts.max_iter:
            return GmresResult(x, total, False, res_norm, b_norm)

        m = min(opts.restart, opts.max_iter - total)
        v = np.zeros((m + 1, n))
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        v[0] = r / res_norm
        g[0] = res_norm

        def assemble(k):
            y = np.linalg.solve(h[:k, :k], g[:k]) if k else np.zeros(0)
            return x + apply_m(v[:k].T @ y)

        k = 0
        early = None
        for j in range(m):
            w = apply_a(apply_m(v[j]))
            # classical Gram-Schmidt with one re-orthogonalization pass
            coeffs = v[:j + 1] @ w
            w -= coeffs @ v[:j + 1]
            if opts.reorthogonalize:
                corr = v[:j + 1] @ w
                w -= corr @ v[:j + 1]
                coeffs += corr
            h[:j + 1, j] = coeffs
            h_next = float(np.linalg.norm(w))
            h[j + 1, j] = h_next
            total += 1
            k = j + 1

            for i in range(j):
                tmp = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = tmp
            denom = float(np.hypot(h[j, j], h[j + 1, j]))
            if denom == 0.0:
                k = j  # dead column, drop it
                break
            cs[j] = h[j, j] / denom
            sn[j] = h[j + 1, j] / denom
            h[j, j] = denom
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            happy = h_next <= 1e-14 * max(res_norm, 1.0)
            if abs(g[j + 1]) <= tol or happy or total >= opts.max_iter:
                break
            if (a_norm is not None and opts.check_every
                    and k % opts.check_every == 0):
                # the recurrence ignores rounding; probe the true residual
                x_try = assemble(k)
                r_try = float(np.linalg.norm(b - apply_a(x_try)))
                if accepted(r_try, float(np.linalg.norm(x_try))):
                    early = (x_try, r_try)
                    break
            v[j + 1] = w / h_next

        if early is not None:
            x_new, res_new = early
            return GmresResult(x_new, total, True, res_new, b_norm)
        x = assemble(k)
