import numpy as np
import pytest

from ncpflow.grid import (SIDES, BoundaryCondition, BoundarySpec, build_grid,
                          harmonic_mean, interior_transmissibilities,
                          transmissibility)


def test_single_cell():
    g = build_grid(1, 1, 1, 1.0, 1.0, 1.0)
    assert g.n_cells == 1
    assert g.n_faces == 0
    assert g.bface_cell.size == 6


def test_two_cells():
    g = build_grid(2, 1, 1, 1.0, 1.0, 1.0)
    assert g.n_faces == 1
    assert g.face_a[0] == 0 and g.face_b[0] == 1
    assert g.face_area[0] == pytest.approx(1.0)
    assert g.face_dist[0] == pytest.approx(0.5)


def test_benchmark_mesh_counts():
    g = build_grid(200, 10, 1, 1.0, 0.1, 1.0)
    assert g.n_cells == 2000
    assert g.n_faces == 199 * 10 + 200 * 9
    assert g.dx == pytest.approx(1.0 / 200)
    assert g.dy == pytest.approx(0.1 / 10)


def test_face_count_formula_3d():
    nx, ny, nz = 4, 3, 2
    g = build_grid(nx, ny, nz, 1.0, 1.0, 1.0)
    want = (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)
    assert g.n_faces == want
    assert g.bface_cell.size == 2 * (ny * nz + nx * nz + nx * ny)


def test_invalid_dimensions():
    with pytest.raises(ValueError):
        build_grid(0, 1, 1, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        build_grid(1, 1, 1, -1.0, 1.0, 1.0)


def test_closed_cell_surfaces():
    # signed face areas per cell sum to zero along each axis
    g = build_grid(3, 2, 2, 3.0, 2.0, 2.0)
    signed = np.zeros((g.n_cells, 3))
    for k in range(g.n_faces):
        ax = g.face_axis[k]
        signed[g.face_a[k], ax] += g.face_area[k]
        signed[g.face_b[k], ax] -= g.face_area[k]
    for k in range(g.bface_cell.size):
        ax = g.bface_axis[k]
        sign = 1.0 if g.bface_side[k] % 2 == 1 else -1.0
        signed[g.bface_cell[k], ax] += sign * g.bface_area[k]
    assert np.max(np.abs(signed)) < 1e-12


def test_harmonic_mean_properties():
    assert harmonic_mean(2.0, 2.0) == pytest.approx(2.0)
    assert harmonic_mean(0.0, 5.0) == 0.0
    assert harmonic_mean(1.0, 3.0) == harmonic_mean(3.0, 1.0)


def test_transmissibility_hand_formula():
    k_a, k_b = 1e-16, 3e-16
    area, dist = 0.01, 0.005
    want = 2 * k_a * k_b / (k_a + k_b) * area / dist
    assert transmissibility(area, dist, k_a, k_b) == pytest.approx(want, rel=1e-14)


def test_interior_transmissibility_symmetry():
    g = build_grid(4, 4, 1, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(0)
    perm = rng.uniform(1e-16, 5e-16, g.n_cells)
    t, _ = interior_transmissibilities(g, perm)
    t_swapped = transmissibility(g.face_area, g.face_dist, perm[g.face_b], perm[g.face_a])
    assert np.allclose(t, t_swapped)


def test_2d_grid_has_no_z_faces():
    g = build_grid(5, 4, 1, 1.0, 1.0, 1.0)
    assert not np.any(g.face_axis == 2)


def test_boundary_spec_first_match_wins():
    g = build_grid(10, 1, 1, 10.0, 1.0, 1.0)
    spec = BoundarySpec()
    spec.add(BoundaryCondition(side="xmin", kind="neumann", h_inflow=1.0))
    spec.add(BoundaryCondition(side="xmin", kind="dirichlet", p_l=1e6))
    assigned = spec.resolve(g)
    xmin_faces = np.where(np.array(SIDES)[g.bface_side] == "xmin")[0]
    assert np.all(assigned[xmin_faces] == 0)
    # unclaimed faces default to no-flux
    other = np.setdiff1d(np.arange(g.bface_cell.size), xmin_faces)
    assert np.all(assigned[other] == -1)


def test_boundary_spec_box_patch():
    g = build_grid(10, 10, 1, 100.0, 100.0, 1.0)
    spec = BoundarySpec()
    spec.add(BoundaryCondition(side="ymin", kind="neumann", h_inflow=1.0,
                               box=((0.0, 30.0), None, None)))
    assigned = spec.resolve(g)
    centers = g.bface_centers()
    claimed = np.where(assigned == 0)[0]
    assert claimed.size == 3  # first three cells along x
    assert np.all(centers[claimed, 0] <= 30.0)


def test_boundary_condition_validation():
    with pytest.raises(ValueError):
        BoundaryCondition(side="middle", kind="noflux")
    with pytest.raises(ValueError):
        BoundaryCondition(side="xmin", kind="sticky")
