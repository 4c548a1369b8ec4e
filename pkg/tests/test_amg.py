import numpy as np
import pytest
import scipy.sparse as sp

from ncpflow.amg import (CPOINT, FPOINT, AmgOptions, AmgSetupError, amg_apply,
                         amg_setup, amg_vcycle, classical_interpolation,
                         direct_interpolation, rs_splitting, strength_graph)
from ncpflow.sparse import CsrMatrix, triple_product


def poisson1d(n):
    e = np.ones(n)
    return CsrMatrix(sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1]).tocsr())


def poisson2d(m):
    e = np.ones(m)
    t = sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1])
    eye = sp.identity(m)
    return CsrMatrix((sp.kron(t, eye) + sp.kron(eye, t)).tocsr())


def residual_factors(a, opts, n_cycles=10, seed=0):
    hier = amg_setup(a, opts)
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(a.nrows)
    x = np.zeros(a.nrows)
    norms = [np.linalg.norm(b)]
    for _ in range(n_cycles):
        x = amg_vcycle(hier, b, x)
        norms.append(np.linalg.norm(b - a.m @ x))
    return hier, [norms[i + 1] / norms[i] for i in range(n_cycles)]


def test_small_matrix_single_level_direct():
    a = poisson1d(20)
    hier = amg_setup(a, AmgOptions(coarse_size_cutoff=50))
    assert len(hier.levels) == 1
    b = np.arange(20.0)
    x = amg_vcycle(hier, b)
    assert np.max(np.abs(a.m @ x - b)) < 1e-10


def test_1d_poisson_alternating_splitting():
    a = poisson1d(64)
    strong = strength_graph(a, 0.25)
    state = rs_splitting(strong)
    # classic RS result: C and F alternate, so no two adjacent points share a class
    same_as_next = state[:-1] == state[1:]
    assert not same_as_next.any()


def test_interpolation_rows_sum_to_one_for_m_matrix():
    # zero-row-sum M-matrix: interior rows of P sum to exactly 1
    n = 32
    e = np.ones(n)
    a = CsrMatrix(sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1]).tocsr())
    dense = a.to_dense()
    dense[0, 0] = 1.0
    dense[0, 1] = -1.0
    dense[-1, -1] = 1.0
    dense[-1, -2] = -1.0
    a = CsrMatrix.from_dense(dense)
    strong = strength_graph(a, 0.25)
    state = rs_splitting(strong)
    for interp in (classical_interpolation, direct_interpolation):
        p = interp(a, strong, state)
        sums = np.asarray(p.m.sum(axis=1)).ravel()
        assert np.allclose(sums, 1.0)


def test_galerkin_identity():
    a = poisson2d(8)
    hier = amg_setup(a, AmgOptions(coarse_size_cutoff=10))
    lvl = hier.levels[0]
    want = triple_product(lvl.p.transpose(), lvl.a, lvl.p)
    got = hier.levels[1].a
    assert np.array_equal(got.to_dense(), want.to_dense())


def test_vcycle_is_linear_operator():
    a = poisson2d(12)
    hier = amg_setup(a, AmgOptions())
    rng = np.random.default_rng(1)
    b1 = rng.standard_normal(a.nrows)
    b2 = rng.standard_normal(a.nrows)
    lhs = amg_vcycle(hier, b1 + b2)
    rhs = amg_vcycle(hier, b1) + amg_vcycle(hier, b2)
    scale = max(np.max(np.abs(rhs)), 1.0)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_zero_rhs_gives_zero():
    a = poisson2d(8)
    hier = amg_setup(a, AmgOptions())
    assert np.array_equal(amg_vcycle(hier, np.zeros(a.nrows)), np.zeros(a.nrows))


def test_poisson_2d_reduction_factor():
    a = poisson2d(32)
    _, factors = residual_factors(a, AmgOptions(pre_sweeps=1, post_sweeps=1))
    assert np.mean(factors) < 0.2


def test_spd_error_norm_nonincreasing():
    a = poisson2d(16)
    dense = a.to_dense()
    hier = amg_setup(a, AmgOptions(pre_sweeps=1, post_sweeps=1))
    rng = np.random.default_rng(2)
    x_exact = rng.standard_normal(a.nrows)
    b = a.m @ x_exact
    x = np.zeros(a.nrows)
    prev = None
    for _ in range(8):
        x = amg_vcycle(hier, b, x)
        e = x_exact - x
        norm = float(e @ dense @ e)
        if prev is not None:
            assert norm <= prev * (1.0 + 1e-12)
        prev = norm


def test_anisotropic_poisson_converges():
    m, ratio = 24, 4.0
    ex = np.ones(m)
    tx = sp.diags([-ratio * ex[:-1], 2 * (ratio + 1) * ex, -ratio * ex[:-1]], [-1, 0, 1])
    ty = sp.diags([-ex[:-1], 0 * ex, -ex[:-1]], [-1, 0, 1])
    eye = sp.identity(m)
    a = CsrMatrix((sp.kron(eye, tx) + sp.kron(ty, eye)).tocsr())
    _, factors = residual_factors(a, AmgOptions(pre_sweeps=1, post_sweeps=1))
    assert np.mean(factors[-5:]) < 0.5


def test_negative_diagonal_rows_are_normalized():
    # flip half the rows of a Poisson system; the cycle must still converge
    a = poisson2d(16)
    rng = np.random.default_rng(3)
    signs = np.where(rng.random(a.nrows) < 0.5, -1.0, 1.0)
    flipped = CsrMatrix((sp.diags(signs) @ a.m).tocsr())
    hier, factors = residual_factors(flipped, AmgOptions(pre_sweeps=1, post_sweeps=1))
    assert hier.row_sign is not None
    assert np.mean(factors[-5:]) < 0.3


def test_coarsest_fallback_on_diagonal_matrix():
    # no strong connections anywhere: coarsening stalls, direct solve takes over
    d = CsrMatrix.from_diag(np.linspace(1.0, 3.0, 300))
    hier = amg_setup(d, AmgOptions())
    b = np.ones(300)
    x = amg_vcycle(hier, b)
    assert np.max(np.abs(d.m @ x - b)) < 1e-12


def test_setup_rejects_zero_diagonal():
    a = CsrMatrix.from_dense(np.array([[1.0, 2.0], [3.0, 0.0]]))
    with pytest.raises(AmgSetupError):
        amg_setup(a)


def test_cycles_option_repeats():
    a = poisson2d(16)
    rng = np.random.default_rng(4)
    b = rng.standard_normal(a.nrows)
    h1 = amg_setup(a, AmgOptions(cycles=1))
    h3 = amg_setup(a, AmgOptions(cycles=3))
    r1 = np.linalg.norm(b - a.m @ amg_apply(h1, b))
    r3 = np.linalg.norm(b - a.m @ amg_apply(h3, b))
    assert r3 < r1 ** 1.5  # three cycles contract much further


def test_operator_complexity_reported():
    a = poisson2d(24)
    hier = amg_setup(a, AmgOptions())
    assert 1.0 < hier.operator_complexity() < 3.5
    assert hier.level_sizes()[0] == a.nrows
