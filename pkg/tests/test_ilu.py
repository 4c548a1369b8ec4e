import numpy as np
import pytest

from ncpflow import physics
from ncpflow.assembly import Problem, State
from ncpflow.grid import BoundarySpec, build_grid
from ncpflow.ilu import IluFactorization, ZeroPivot, ilu_apply, ilu_factor
from ncpflow.krylov import GmresOptions, gmres
from ncpflow.sparse import CsrMatrix, dense_lu_solve


def random_dd(rng, n, fill=0.2):
    """Random strictly diagonally dominant matrix."""
    dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < fill)
    np.fill_diagonal(dense, np.abs(dense).sum(axis=1) + 1.0)
    return dense


def test_identity_factorization():
    eye = CsrMatrix.identity(5)
    fact = ilu_factor(eye, 0)
    r = np.arange(5.0)
    assert np.allclose(ilu_apply(fact, r), r)


def test_diagonal_apply():
    d = CsrMatrix.from_diag([2.0, 4.0, 8.0])
    fact = ilu_factor(d, 0)
    assert np.allclose(ilu_apply(fact, np.array([2.0, 4.0, 8.0])), [1.0, 1.0, 1.0])


def test_lower_triangular_exact_any_level():
    rng = np.random.default_rng(0)
    dense = np.tril(rng.standard_normal((8, 8)))
    np.fill_diagonal(dense, 2.0 + rng.random(8))
    a = CsrMatrix.from_dense(dense)
    for k in (0, 2):
        fact = ilu_factor(a, k)
        b = rng.standard_normal(8)
        x = ilu_apply(fact, b)
        assert np.allclose(dense @ x, b, atol=1e-12)


def test_zero_diagonal_raises_zero_pivot():
    dense = np.array([[1.0, 2.0], [3.0, 0.0]])
    dense2 = np.array([[0.0, 2.0], [3.0, 1.0]])
    for d in (dense, dense2):
        with pytest.raises(ZeroPivot):
            ilu_factor(CsrMatrix.from_dense(d), 0)


def test_structurally_missing_diagonal_raises():
    # row 1 has no diagonal entry at all
    a = CsrMatrix.from_coo(2, 2, [0, 0, 1], [0, 1, 0], [1.0, 2.0, 3.0])
    with pytest.raises(ZeroPivot) as err:
        ilu_factor(a, 0)
    assert err.value.row == 1


def test_full_fill_equals_dense_lu():
    rng = np.random.default_rng(1)
    dense = random_dd(rng, 15, fill=0.35)
    a = CsrMatrix.from_dense(dense)
    fact = ilu_factor(a, 15)
    b = rng.standard_normal(15)
    x = ilu_apply(fact, b)
    x_oracle = dense_lu_solve(dense, b)
    assert np.linalg.norm(x - x_oracle) / np.linalg.norm(x_oracle) < 1e-10


def test_banded_exact_when_level_covers_bandwidth():
    rng = np.random.default_rng(2)
    n, bw = 20, 3
    dense = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - bw), min(n, i + bw + 1)):
            dense[i, j] = rng.standard_normal()
        dense[i, i] = 8.0
    a = CsrMatrix.from_dense(dense)
    fact = ilu_factor(a, bw)
    b = rng.standard_normal(n)
    x = ilu_apply(fact, b)
    assert np.max(np.abs(dense @ x - b)) < 1e-10


def test_fill_pattern_nesting():
    rng = np.random.default_rng(3)
    a = CsrMatrix.from_dense(random_dd(rng, 25, fill=0.12))
    patterns = [ilu_factor(a, k).pattern() for k in (0, 1, 2, 3)]
    for small, big in zip(patterns, patterns[1:]):
        assert small <= big


def test_ilu0_preconditioning_beats_plain_gmres():
    rng = np.random.default_rng(4)
    dense = random_dd(rng, 40, fill=0.15)
    a = CsrMatrix.from_dense(dense)
    b = rng.standard_normal(40)
    opts = GmresOptions(rel_tol=1e-10, max_iter=200, restart=200)
    plain = gmres(lambda v: a.m @ v, None, b, opts)
    fact = ilu_factor(a, 0)
    pre = gmres(lambda v: a.m @ v, lambda v: ilu_apply(fact, v), b, opts)
    assert pre.converged
    assert pre.iterations < plain.iterations


def test_zero_pivot_on_phase_disappearance_jacobian():
    """Saturated cells make the constraint rows structurally singular for ILU(0)."""
    grid = build_grid(6, 2, 1, 1.0, 0.5, 1.0)
    rp = physics.RelPermModel(variant=physics.VAN_GENUCHTEN, s_lr=0.01, s_gr=0.0, n=1.54)
    cp = physics.CapPressModel(variant=physics.VAN_GENUCHTEN, p_entry=2e6, n=1.54)
    problem = Problem(grid, physics.FluidParams(), rp, cp, BoundarySpec())
    n = grid.n_cells
    s = np.full(n, 0.8)
    s[:3] = 1.0  # gas absent somewhere
    pc, _ = physics.capillary(s, cp, rp)
    rho = np.where(s < 1.0, problem.params.c_h * (1e6 + pc), 0.0)
    state = State(np.full(n, 1e6), s, rho)
    sys_ = problem.jacobian(state, state.copy(), 10.0)
    assert sys_.active_set.inactive.size > 0
    with pytest.raises(ZeroPivot):
        ilu_factor(sys_.a, 0)
    # enough fill lets the factorization complete
    fact = ilu_factor(sys_.a, 2)
    assert isinstance(fact, IluFactorization)
