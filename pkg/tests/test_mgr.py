import numpy as np
import pytest

from ncpflow import physics
from ncpflow.amg import AmgOptions
from ncpflow.assembly import Problem, State
from ncpflow.grid import BoundarySpec, build_grid
from ncpflow.krylov import GmresOptions, gmres
from ncpflow.mgr import (ACTIVE_CONSTRAINTS, INACTIVE_CONSTRAINTS, SATURATIONS,
                         FRelax, MgrLevelSpec, RpKind, ZeroFDiagonal, build_rp,
                         cpr_specs, default_2p2c_specs, mgr_apply, mgr_setup,
                         setup_from_matrix)
from ncpflow.sparse import CsrMatrix, IndexPartition, triple_product

VG_RP = physics.RelPermModel(variant=physics.VAN_GENUCHTEN, s_lr=0.01, s_gr=0.0, n=1.54)
VG_CP = physics.CapPressModel(variant=physics.VAN_GENUCHTEN, p_entry=2e6, n=1.54, eps=1e-5)


def random_system(rng, n, diag_boost=None):
    a = rng.standard_normal((n, n)) * 0.3
    a += np.diag(rng.uniform(2.0, 4.0, n)) * (diag_boost or np.sqrt(n))
    return a


def partition_from_f(n, f_idx):
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(f_idx)] = True
    return IndexPartition.from_f_mask(mask)


def dense_rp(a, f_idx, c_idx, kind):
    """Dense mirror of the approximate transfer operators."""
    nf, nc = len(f_idx), len(c_idx)
    n = a.shape[0]
    if kind is RpKind.IDEAL:
        aff_inv = np.linalg.inv(a[np.ix_(f_idx, f_idx)])
        w_p = -aff_inv @ a[np.ix_(f_idx, c_idx)]
        w_r = -a[np.ix_(c_idx, f_idx)] @ aff_inv
    else:
        d_inv = np.diag(1.0 / np.diag(a)[f_idx])
        w_p = (-d_inv @ a[np.ix_(f_idx, c_idx)]
               if kind is not RpKind.INJECTION else np.zeros((nf, nc)))
        w_r = (-a[np.ix_(c_idx, f_idx)] @ d_inv
               if kind is RpKind.NONINJECTIVE else np.zeros((nc, nf)))
    p = np.zeros((n, nc)); p[f_idx] = w_p; p[c_idx] = np.eye(nc)
    r = np.zeros((nc, n)); r[:, f_idx] = w_r; r[:, c_idx] = np.eye(nc)
    return r, p


@pytest.mark.parametrize("kind", [RpKind.INJECTIVE, RpKind.NONINJECTIVE,
                                  RpKind.INJECTION, RpKind.IDEAL])
def test_build_rp_matches_dense_expansion(kind):
    rng = np.random.default_rng(0)
    n = 12
    a = random_system(rng, n)
    f_idx = np.sort(rng.choice(n, 5, replace=False))
    c_idx = np.setdiff1d(np.arange(n), f_idx)
    A = CsrMatrix.from_dense(a)
    r, p = build_rp(A, partition_from_f(n, f_idx), kind)
    r_d, p_d = dense_rp(a, f_idx, c_idx, kind)
    assert np.max(np.abs(r.to_dense() - r_d)) < 1e-13
    assert np.max(np.abs(p.to_dense() - p_d)) < 1e-13
    got = triple_product(r, A, p).to_dense()
    want = r_d @ a @ p_d
    assert np.max(np.abs(got - want)) <= 1e-13 * max(np.abs(want).max(), 1.0)


def test_build_rp_block_diagonal_gives_injection():
    # A_fc = A_cf = 0: W vanishes and R, P reduce to restriction/injection
    a = np.zeros((6, 6))
    a[:3, :3] = np.diag([2.0, 3.0, 4.0])
    a[3:, 3:] = np.diag([5.0, 6.0, 7.0]) + 0.5
    A = CsrMatrix.from_dense(a)
    r, p = build_rp(A, partition_from_f(6, [0, 1, 2]), RpKind.NONINJECTIVE)
    assert np.array_equal(p.to_dense(), np.vstack([np.zeros((3, 3)), np.eye(3)]))
    assert np.array_equal(r.to_dense(), np.hstack([np.zeros((3, 3)), np.eye(3)]))


def test_diagonal_ff_reduction_is_exact_schur():
    rng = np.random.default_rng(1)
    n, nf = 12, 5
    a = rng.standard_normal((n, n)) * 0.4 + np.diag(rng.uniform(2, 3, n))
    a[np.ix_(range(nf), range(nf))] = np.diag(rng.uniform(1.0, 2.0, nf))
    A = CsrMatrix.from_dense(a)
    f_idx = np.arange(nf)
    c_idx = np.arange(nf, n)
    r, p = build_rp(A, partition_from_f(n, f_idx), RpKind.NONINJECTIVE)
    rap = triple_product(r, A, p).to_dense()
    schur = (a[np.ix_(c_idx, c_idx)]
             - a[np.ix_(c_idx, f_idx)] @ np.linalg.inv(a[np.ix_(f_idx, f_idx)])
             @ a[np.ix_(f_idx, c_idx)])
    assert np.max(np.abs(rap - schur)) < 1e-12


def test_build_rp_zero_f_diagonal_raises():
    a = np.eye(4); a[1, 1] = 0.0; a[1, 2] = 1.0; a[2, 1] = 1.0
    with pytest.raises(ZeroFDiagonal):
        build_rp(CsrMatrix.from_dense(a), partition_from_f(4, [0, 1]), RpKind.INJECTIVE)


def test_ideal_reduction_one_gmres_iteration():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = int(rng.integers(8, 100))
        a = random_system(rng, n)
        A = CsrMatrix.from_dense(a)
        nf = int(rng.integers(1, n))
        f_idx = np.sort(rng.choice(n, nf, replace=False))
        spec = MgrLevelSpec((), RpKind.IDEAL, FRelax("exact"))
        hier = setup_from_matrix(A, [(f_idx, spec)], coarse="exact")
        b = rng.standard_normal(n)
        res = gmres(lambda v: A.m @ v, lambda v: mgr_apply(hier, v), b,
                    GmresOptions(rel_tol=1e-10, max_iter=10, restart=10))
        assert res.converged and res.iterations == 1


def test_mgr_apply_zero_and_linearity():
    rng = np.random.default_rng(3)
    n = 30
    A = CsrMatrix.from_dense(random_system(rng, n))
    spec = MgrLevelSpec((), RpKind.NONINJECTIVE, FRelax("gauss_seidel", sweeps=2))
    hier = setup_from_matrix(A, [(np.arange(10), spec)], coarse="exact")
    assert np.array_equal(mgr_apply(hier, np.zeros(n)), np.zeros(n))
    r1, r2 = rng.standard_normal(n), rng.standard_normal(n)
    lhs = mgr_apply(hier, r1 + r2)
    rhs = mgr_apply(hier, r1) + mgr_apply(hier, r2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(np.max(np.abs(rhs)), 1.0)


def test_mgr_apply_composition_oracle():
    """One sweep equals an independently scripted relax + correct pass."""
    rng = np.random.default_rng(4)
    n = 30
    a = random_system(rng, n)
    A = CsrMatrix.from_dense(a)
    f_idx = np.sort(rng.choice(n, 12, replace=False))
    c_idx = np.setdiff1d(np.arange(n), f_idx)
    spec = MgrLevelSpec((), RpKind.NONINJECTIVE, FRelax("jacobi", sweeps=1))
    hier = setup_from_matrix(A, [(f_idx, spec)], coarse="exact")
    r = rng.standard_normal(n)
    got = mgr_apply(hier, r)

    # scripted composition: F-Jacobi then exact coarse correction
    r_d, p_d = dense_rp(a, f_idx, c_idx, RpKind.NONINJECTIVE)
    e = np.zeros(n)
    e[f_idx] += r[f_idx] / np.diag(a)[f_idx]
    resid = r - a @ e
    ac = r_d @ a @ p_d
    e = e + p_d @ np.linalg.solve(ac, r_d @ resid)
    assert np.max(np.abs(got - e)) <= 1e-13 * max(np.max(np.abs(e)), 1.0)


def test_post_smoothing_variant():
    rng = np.random.default_rng(5)
    n = 24
    a = random_system(rng, n)
    A = CsrMatrix.from_dense(a)
    f_idx = np.arange(8)
    c_idx = np.arange(8, n)
    spec = MgrLevelSpec((), RpKind.INJECTIVE, FRelax("jacobi"))
    hier = setup_from_matrix(A, [(f_idx, spec)], coarse="exact", post_smoothing=True)
    r = rng.standard_normal(n)
    got = mgr_apply(hier, r)
    # coarse correction first, then F-relaxation
    r_d, p_d = dense_rp(a, f_idx, c_idx, RpKind.INJECTIVE)
    ac = r_d @ a @ p_d
    e = p_d @ np.linalg.solve(ac, r_d @ r)
    resid = r - a @ e
    e[f_idx] += resid[f_idx] / np.diag(a)[f_idx]
    assert np.max(np.abs(got - e)) <= 1e-12 * max(np.max(np.abs(e)), 1.0)


def mixed_block_system(nx=3, ny=3, seed=0, dt=10.0):
    grid = build_grid(nx, ny, 1, 1.0, 1.0, 1.0)
    problem = Problem(grid, physics.FluidParams(), VG_RP, VG_CP, BoundarySpec())
    n = grid.n_cells
    rng = np.random.default_rng(seed)
    p = 1e6 + rng.uniform(-5e4, 5e4, n)
    s = rng.uniform(0.7, 0.9, n)
    inactive = rng.random(n) < 0.4
    s[inactive] = 1.0 + rng.uniform(0.0005, 0.002, inactive.sum())
    pc, _ = physics.capillary(s, VG_CP, VG_RP)
    rho = np.where(inactive, 0.3 * problem.params.c_h * (p + pc),
                   problem.params.c_h * (p + pc) - 3e-4)
    state = State(p, s, rho)
    system = problem.jacobian(state, state.copy(), dt)
    return problem, system


def test_mgr_setup_levels_and_pressure_coarse():
    problem, system = mixed_block_system()
    n = system.n_cells
    m = system.active_set.n_active
    assert 0 < m < n
    hier = mgr_setup(system, default_2p2c_specs("gas_appearance"),
                     AmgOptions(pre_sweeps=2, post_sweeps=2), coarse="exact")
    dims = [lvl.a.nrows for lvl in hier.levels]
    assert dims == [3 * n, 3 * n - m, 2 * n - m]
    assert hier.levels[-1].coarse_a.nrows == n  # pressure sized


def test_mgr_setup_schur_oracle_three_levels():
    """S1, S2, S3 match dense-computed reduction formulas entrywise."""
    problem, system = mixed_block_system()
    n = system.n_cells
    hier = mgr_setup(system, default_2p2c_specs("gas_appearance"),
                     AmgOptions(), coarse="exact")
    a = system.a.to_dense()
    labels = system.labels()
    remaining = np.arange(3 * n)
    for lvl, spec in zip(hier.levels, default_2p2c_specs("gas_appearance")):
        lab = labels[remaining]
        f_loc = np.where(np.isin(lab, spec.f_labels))[0]
        c_loc = np.setdiff1d(np.arange(remaining.size), f_loc)
        r_d, p_d = dense_rp(a, f_loc, c_loc, spec.rp)
        a = r_d @ a @ p_d
        remaining = remaining[c_loc]
        got = lvl.coarse_a.to_dense()
        assert np.max(np.abs(got - a)) <= 1e-12 * max(np.abs(a).max(), 1.0)


def test_level_one_reduction_is_exact_schur():
    # C_33 diagonal: the first reduction reproduces the dense Schur complement
    problem, system = mixed_block_system(seed=3)
    n = system.n_cells
    hier = mgr_setup(system, default_2p2c_specs("gas_appearance"),
                     AmgOptions(), coarse="exact")
    a = system.a.to_dense()
    labels = system.labels()
    f_idx = np.where(labels == 2)[0]          # active constraints
    c_idx = np.setdiff1d(np.arange(3 * n), f_idx)
    schur = (a[np.ix_(c_idx, c_idx)]
             - a[np.ix_(c_idx, f_idx)] @ np.linalg.inv(a[np.ix_(f_idx, f_idx)])
             @ a[np.ix_(f_idx, c_idx)])
    got = hier.levels[0].coarse_a.to_dense()
    assert np.max(np.abs(got - schur)) <= 1e-13 * max(np.abs(schur).max(), 1.0)


def test_empty_levels_are_skipped():
    # fully saturated: no active constraints, level 1 must vanish
    grid = build_grid(4, 2, 1, 1.0, 1.0, 1.0)
    problem = Problem(grid, physics.FluidParams(), VG_RP, VG_CP, BoundarySpec())
    n = grid.n_cells
    state = State.uniform(n, 1e6, 1.0, 0.0)
    system = problem.jacobian(state, state.copy(), 5.0)
    assert system.active_set.n_active == 0
    hier = mgr_setup(system, default_2p2c_specs("gas_appearance"),
                     AmgOptions(), coarse="exact")
    assert len(hier.levels) == 2  # saturation + inactive constraints only
    assert hier.levels[-1].coarse_a.nrows == n


def test_exactness_identity_on_block_system():
    # ideal operators + exact solves: the MGR error propagator vanishes
    problem, system = mixed_block_system(seed=5)
    specs = [MgrLevelSpec(ACTIVE_CONSTRAINTS, RpKind.IDEAL, FRelax("exact")),
             MgrLevelSpec(SATURATIONS, RpKind.IDEAL, FRelax("exact")),
             MgrLevelSpec(INACTIVE_CONSTRAINTS, RpKind.IDEAL, FRelax("exact"))]
    hier = mgr_setup(system, specs, AmgOptions(), coarse="exact")
    rng = np.random.default_rng(6)
    a = system.a.m
    for _ in range(5):
        e = rng.standard_normal(system.n)
        prop = e - mgr_apply(hier, a @ e)
        assert np.linalg.norm(prop) <= 1e-10 * np.linalg.norm(e)


def test_default_specs_catalog():
    uns = default_2p2c_specs("unsaturated")
    assert len(uns) == 2
    assert uns[0].rp is RpKind.INJECTIVE
    gas = default_2p2c_specs("gas_appearance")
    assert len(gas) == 3
    assert gas[0].rp is RpKind.NONINJECTIVE
    assert gas[0].f_relax.kind == "jacobi"
    assert default_2p2c_specs("box3d") == gas
    with pytest.raises(ValueError):
        default_2p2c_specs("mystery")


def test_cpr_emulation_mode():
    problem, system = mixed_block_system(seed=7)
    n = system.n_cells
    hier = mgr_setup(system, cpr_specs(), AmgOptions(pre_sweeps=2, post_sweeps=2),
                     coarse="exact")
    assert len(hier.levels) == 1
    assert hier.levels[-1].coarse_a.nrows == n
    rng = np.random.default_rng(8)
    b = rng.standard_normal(system.n)
    res = gmres(lambda v: system.a.m @ v, lambda v: mgr_apply(hier, v), b,
                GmresOptions(rel_tol=1e-8, max_iter=150, restart=150))
    assert res.converged


def test_global_relaxation_block_solver():
    problem, system = mixed_block_system(seed=9)
    specs = [MgrLevelSpec(ACTIVE_CONSTRAINTS, RpKind.NONINJECTIVE, FRelax("exact"),
                          global_relax=True),
             MgrLevelSpec(SATURATIONS, RpKind.NONINJECTIVE, FRelax("exact"),
                          global_relax=True)]
    hier = mgr_setup(system, specs, AmgOptions(), coarse="exact")
    assert hier.levels[0].block_solver is not None
    rng = np.random.default_rng(10)
    b = rng.standard_normal(system.n)
    res = gmres(lambda v: system.a.m @ v, lambda v: mgr_apply(hier, v), b,
                GmresOptions(rel_tol=1e-9, max_iter=200, restart=200))
    assert res.converged
