"""Structured cell-centered Cartesian grids with two-point flux connectivity.

Cells are numbered x-fastest: ``cell = i + nx*j + nx*ny*k``.  Interior and
boundary faces are stored as flat arrays in a fixed order (x-faces, then y,
then z), which keeps every assembly loop deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIDES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")

NOFLUX = "noflux"
NEUMANN = "neumann"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class StructuredGrid:
    nx: int
    ny: int
    nz: int
    lx: float
    ly: float
    lz: float
    dx: float
    dy: float
    dz: float
    # interior faces
    face_a: np.ndarray
    face_b: np.ndarray
    face_area: np.ndarray
    face_dist: np.ndarray
    face_axis: np.ndarray
    # boundary faces
    bface_cell: np.ndarray
    bface_area: np.ndarray
    bface_dist: np.ndarray      # cell center to face
    bface_axis: np.ndarray
    bface_side: np.ndarray      # index into SIDES

    @property
    def n_cells(self):
        return self.nx * self.ny * self.nz

    @property
    def cell_volume(self):
        return self.dx * self.dy * self.dz

    @property
    def n_faces(self):
        return self.face_a.size

    def cell_centers(self):
        i, j, k = np.meshgrid(np.arange(self.nx), np.arange(self.ny),
                              np.arange(self.nz), indexing="ij")
        xs = (i.ravel(order="F") + 0.5) * self.dx
        ys = (j.ravel(order="F") + 0.5) * self.dy
        zs = (k.ravel(order="F") + 0.5) * self.dz
        return np.column_stack([xs, ys, zs])

    def bface_centers(self):
        """Face-center coordinates of every boundary face."""
        centers = self.cell_centers()[self.bface_cell].copy()
        spacing = np.array([self.dx, self.dy, self.dz])
        sign = np.where(np.asarray(self.bface_side) % 2 == 0, -1.0, 1.0)
        for ax in range(3):
            on_ax = self.bface_axis == ax
            centers[on_ax, ax] += 0.5 * spacing[ax] * sign[on_ax]
        return centers


def build_grid(nx, ny, nz, lx, ly, lz) -> StructuredGrid:
    if min(nx, ny, nz) < 1:
        raise ValueError("cell counts must be positive")
    if min(lx, ly, lz) <= 0.0:
        raise ValueError("domain lengths must be positive")
    dx, dy, dz = lx / nx, ly / ny, lz / nz
    areas = (dy * dz, dx * dz, dx * dy)
    dists = (dx, dy, dz)

    def cell(i, j, k):
        return i + nx * j + nx * ny * k

    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ii = ii.ravel(order="F")
    jj = jj.ravel(order="F")
    kk = kk.ravel(order="F")

    fa, fb, farea, fdist, faxis = [], [], [], [], []
    counts = ((nx - 1, ny, nz), (nx, ny - 1, nz), (nx, ny, nz - 1))
    steps = (1, nx, nx * ny)
    limits = (nx, ny, nz)
    idx_along = (ii, jj, kk)
    cells = cell(ii, jj, kk)
    for ax in range(3):
        has_right = idx_along[ax] < limits[ax] - 1
        a = cells[has_right]
        a = np.sort(a)
        fa.append(a)
        fb.append(a + steps[ax])
        farea.append(np.full(a.size, areas[ax]))
        fdist.append(np.full(a.size, dists[ax]))
        faxis.append(np.full(a.size, ax, dtype=np.int64))

    ba, barea, bdist, baxis, bside = [], [], [], [], []
    for ax in range(3):
        for side_of_axis, on_boundary in enumerate((idx_along[ax] == 0,
                                                    idx_along[ax] == limits[ax] - 1)):
            c = np.sort(cells[on_boundary])
            ba.append(c)
            barea.append(np.full(c.size, areas[ax]))
            bdist.append(np.full(c.size, dists[ax] / 2.0))
            baxis.append(np.full(c.size, ax, dtype=np.int64))
            bside.append(np.full(c.size, 2 * ax + side_of_axis, dtype=np.int64))

    return StructuredGrid(
        nx=nx, ny=ny, nz=nz, lx=lx, ly=ly, lz=lz, dx=dx, dy=dy, dz=dz,
        face_a=np.concatenate(fa), face_b=np.concatenate(fb),
        face_area=np.concatenate(farea), face_dist=np.concatenate(fdist),
        face_axis=np.concatenate(faxis),
        bface_cell=np.concatenate(ba), bface_area=np.concatenate(barea),
        bface_dist=np.concatenate(bdist), bface_axis=np.concatenate(baxis),
        bface_side=np.concatenate(bside),
    )


def harmonic_mean(k_a, k_b):
    k_a = np.asarray(k_a, dtype=float)
    k_b = np.asarray(k_b, dtype=float)
    s = k_a + k_b
    out = np.zeros(np.broadcast(k_a, k_b).shape)
    nz = s != 0.0
    out[nz] = 2.0 * (k_a * k_b)[nz] / s[nz]
    return out


def transmissibility(area, dist, k_a, k_b=None):
    """Geometric TPFA transmissibility area*K_harm/dist (units m^3)."""
    if k_b is None:
        k_b = k_a
    return harmonic_mean(k_a, k_b) * np.asarray(area, dtype=float) / np.asarray(dist, dtype=float)


def interior_transmissibilities(grid: StructuredGrid, perm):
    """Per-face (T, T_geo) arrays; perm may be a scalar or per-cell array."""
    perm = np.asarray(perm, dtype=float)
    if perm.ndim == 0:
        k_a = k_b = np.full(grid.n_faces, float(perm))
    else:
        k_a = perm[grid.face_a]
        k_b = perm[grid.face_b]
    t = transmissibility(grid.face_area, grid.face_dist, k_a, k_b)
    t_geo = grid.face_area / grid.face_dist
    return t, t_geo


def boundary_transmissibilities(grid: StructuredGrid, perm):
    """Half-cell transmissibilities for Dirichlet faces (ghost value at the face)."""
    perm = np.asarray(perm, dtype=float)
    k = np.full(grid.bface_cell.size, float(perm)) if perm.ndim == 0 else perm[grid.bface_cell]
    t = k * grid.bface_area / grid.bface_dist
    t_geo = grid.bface_area / grid.bface_dist
    return t, t_geo


@dataclass(frozen=True)
class BoundaryCondition:
    """One rule on one side; ``box`` limits it to a sub-patch of the side.

    Neumann values are mass inflow densities in kg/m^2/s, positive into the
    domain.  Dirichlet holds the full boundary state (P_l, S_l, rho_l_h).
    """

    side: str
    kind: str = NOFLUX
    w_inflow: float = 0.0
    h_inflow: float = 0.0
    p_l: float = 0.0
    s_l: float = 1.0
    rho_lh: float = 0.0
    box: tuple | None = None   # ((xlo,xhi),(ylo,yhi),(zlo,zhi)), None entries = unbounded

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        if self.kind not in (NOFLUX, NEUMANN, DIRICHLET):
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    def contains(self, xyz):
        if self.box is None:
            return np.ones(len(xyz), dtype=bool)
        inside = np.ones(len(xyz), dtype=bool)
        for ax, rng in enumerate(self.box):
            if rng is None:
                continue
            lo, hi = rng
            inside &= (xyz[:, ax] >= lo) & (xyz[:, ax] <= hi)
        return inside


@dataclass
class BoundarySpec:
    """Ordered boundary rules; the first matching rule claims a face.

    Faces claimed by no rule default to no-flux, so each boundary face is
    covered by exactly one condition.
    """

    rules: list = field(default_factory=list)

    def add(self, rule: BoundaryCondition):
        self.rules.append(rule)
        return self

    def resolve(self, grid: StructuredGrid):
        """Assign one rule index per boundary face (-1 means default no-flux)."""
        centers = grid.bface_centers()
        assigned = np.full(grid.bface_cell.size, -1, dtype=np.int64)
        side_names = np.array(SIDES)[grid.bface_side]
        for ridx, rule in enumerate(self.rules):
            candidates = (assigned == -1) & (side_names == rule.side)
            if not candidates.any():
                continue
            inside = rule.contains(centers)
            assigned[candidates & inside] = ridx
        return assigned
