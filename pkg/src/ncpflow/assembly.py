"""Finite-volume residual and generalized Jacobian for the two-phase system.

Unknowns per cell are (P_l, S_l, rho_l_h), ordered variable-major in the
global vector: all pressures, then all saturations, then all dissolved
hydrogen densities.  Rows 0..N are the water balance, N..2N the hydrogen
balance (both backward Euler + TPFA with phase-potential upwinding), and
2N..3N the complementarity constraint min(1 - S_l, C_h*P_g - rho_l_h).
Balance rows are kept in accumulation form (the strong-form equation
multiplied by dt): phi*(m - m_old) + (dt/V)*sum of face fluxes, units
kg/m^3 per step.  A convergence tolerance on this residual bounds the
per-cell mass-balance closure of the step identically on every mesh and
for any step size, from seconds to millennia.

The constraint rows make the Jacobian a generalized one: cells where the
gas phase is present (active) get the Henry-law row, cells without gas
(inactive) get the saturation row, whose diagonal in the rho block is
structurally zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import physics
from .grid import (NEUMANN, NOFLUX, BoundarySpec, StructuredGrid,
                   boundary_transmissibilities, interior_transmissibilities)
from .sparse import CsrMatrix, extract, permute

# unknown labels used for block bookkeeping and MGR coarsening rules
LABEL_P = 0
LABEL_S = 1
LABEL_RHO_ACTIVE = 2
LABEL_RHO_INACTIVE = 3


@dataclass
class State:
    """Per-cell primary variables at one time level."""

    p_l: np.ndarray
    s_l: np.ndarray
    rho_lh: np.ndarray

    def __post_init__(self):
        self.p_l = np.asarray(self.p_l, dtype=float)
        self.s_l = np.asarray(self.s_l, dtype=float)
        self.rho_lh = np.asarray(self.rho_lh, dtype=float)
        if not (self.p_l.shape == self.s_l.shape == self.rho_lh.shape):
            raise ValueError("state arrays must have identical length")

    @property
    def n(self):
        return self.p_l.size

    def copy(self):
        return State(self.p_l.copy(), self.s_l.copy(), self.rho_lh.copy())

    def vector(self):
        return np.concatenate([self.p_l, self.s_l, self.rho_lh])

    @classmethod
    def from_vector(cls, v, n):
        v = np.asarray(v, dtype=float)
        return cls(v[:n].copy(), v[n:2 * n].copy(), v[2 * n:].copy())

    def plus(self, dv, scale=1.0):
        n = self.n
        return State(self.p_l + scale * dv[:n],
                     self.s_l + scale * dv[n:2 * n],
                     self.rho_lh + scale * dv[2 * n:])

    @classmethod
    def uniform(cls, n, p_l, s_l, rho_lh):
        return cls(np.full(n, float(p_l)), np.full(n, float(s_l)), np.full(n, float(rho_lh)))


@dataclass(frozen=True)
class ActiveSet:
    """Cells with gas present (active, Henry row) vs gas absent (inactive)."""

    active: np.ndarray
    inactive: np.ndarray

    @property
    def n(self):
        return self.active.size + self.inactive.size

    @property
    def n_active(self):
        return self.active.size


@dataclass
class BlockSystem:
    """Jacobian in variable-major ordering plus the constraint partition."""

    a: CsrMatrix
    n_cells: int
    active_set: ActiveSet
    rhs: np.ndarray

    @property
    def n(self):
        return 3 * self.n_cells

    def labels(self):
        """Unknown class per global index (pressure/saturation/rho by activity)."""
        n = self.n_cells
        lab = np.empty(3 * n, dtype=np.int64)
        lab[:n] = LABEL_P
        lab[n:2 * n] = LABEL_S
        lab[2 * n:] = LABEL_RHO_INACTIVE
        lab[2 * n + self.active_set.active] = LABEL_RHO_ACTIVE
        return lab

    def cells(self):
        """Owning cell per global index."""
        return np.tile(np.arange(self.n_cells), 3)


@dataclass(frozen=True)
class BlockSplit:
    """Permutation to [P; S; rho_active; rho_inactive] and the block extents."""

    perm: np.ndarray
    sizes: tuple           # (N, N, M, N-M)
    offsets: tuple         # prefix sums, length 5
    system: BlockSystem

    def block(self, i, j) -> CsrMatrix:
        """Extract block (i, j), 0-based over the 4x4 layout."""
        rows = self.perm[self.offsets[i]:self.offsets[i + 1]]
        cols = self.perm[self.offsets[j]:self.offsets[j + 1]]
        return extract(self.system.a, np.sort(rows), np.sort(cols))

    def permuted(self) -> CsrMatrix:
        return permute(self.system.a, self.perm)


def split_blocks(system: BlockSystem) -> BlockSplit:
    n = system.n_cells
    act = system.active_set.active
    inact = system.active_set.inactive
    m = act.size
    perm = np.concatenate([np.arange(n), np.arange(n, 2 * n), 2 * n + act, 2 * n + inact])
    sizes = (n, n, m, n - m)
    offsets = (0, n, 2 * n, 2 * n + m, 3 * n)
    split = BlockSplit(perm=perm, sizes=sizes, offsets=offsets, system=system)
    if m:
        c33 = split.block(2, 2)
        diag = c33.diagonal()
        if np.any(diag == 0.0) or np.any(np.diff(c33.row_offsets) == 0):
            raise ValueError("active constraint block C_33 has a vanishing diagonal entry")
    return split


class Problem:
    """Discrete problem: grid + constitutive models + boundary conditions.

    Precomputes transmissibilities and resolved boundary groups once, then
    serves residual/Jacobian assembly for arbitrary states.
    """

    def __init__(self, grid: StructuredGrid, params: physics.FluidParams,
                 relperm: physics.RelPermModel, capillary: physics.CapPressModel,
                 bc: BoundarySpec | None = None):
        self.grid = grid
        self.params = params
        self.relperm = relperm
        self.capillary = capillary
        self.bc = bc if bc is not None else BoundarySpec()

        self.trans, self.tgeo = interior_transmissibilities(grid, params.perm)
        self.cell_vol = grid.cell_volume

        g = np.asarray(params.gravity, dtype=float)
        centers = grid.cell_centers()
        self.gravity_on = bool(np.any(g != 0.0))
        # g . (x_a - x_b) per interior face
        delta = centers[grid.face_a] - centers[grid.face_b]
        self.gdx = delta @ g if self.gravity_on else np.zeros(grid.n_faces)

        # resolve boundary rules into per-kind face groups
        assigned = self.bc.resolve(grid)
        t_b, tgeo_b = boundary_transmissibilities(grid, params.perm)
        self.neumann_groups = []
        self.dirichlet_groups = []
        bcenters = grid.bface_centers()
        for ridx, rule in enumerate(self.bc.rules):
            faces = np.where(assigned == ridx)[0]
            if faces.size == 0 or rule.kind == NOFLUX:
                continue
            if rule.kind == NEUMANN:
                self.neumann_groups.append((grid.bface_cell[faces], grid.bface_area[faces], rule))
            else:
                gdx_b = ((centers[grid.bface_cell[faces]] - bcenters[faces]) @ g
                         if self.gravity_on else np.zeros(faces.size))
                self.dirichlet_groups.append(
                    (grid.bface_cell[faces], t_b[faces], tgeo_b[faces], gdx_b, rule))

    # -- state-dependent quantities ---------------------------------------

    def _eval(self, state: State):
        pc, dpc = physics.capillary(state.s_l, self.capillary, self.relperm)
        krl, krg, dkrl, dkrg = physics.relperm(state.s_l, self.relperm)
        p_g = state.p_l + pc
        return {
            "pc": pc, "dpc": dpc, "pg": p_g,
            "lam_l": krl / self.params.mu_l, "dlam_l": dkrl / self.params.mu_l,
            "lam_g": krg / self.params.mu_g, "dlam_g": dkrg / self.params.mu_g,
            "rho_g": self.params.c_v * p_g,
        }

    def constraint_parts(self, state: State):
        """F = 1 - S_l and G = C_h*P_g - rho_l_h per cell."""
        pc, _ = physics.capillary(state.s_l, self.capillary, self.relperm)
        f = 1.0 - state.s_l
        g = self.params.c_h * (state.p_l + pc) - state.rho_lh
        return f, g

    def classify(self, state: State) -> ActiveSet:
        """Gas present iff F >= G; ties count as active."""
        f, g = self.constraint_parts(state)
        mask = f >= g
        idx = np.arange(state.n)
        return ActiveSet(active=idx[mask], inactive=idx[~mask])

    def total_masses(self, state: State):
        """Total water and hydrogen mass in the domain (kg)."""
        e = self._eval(state)
        vphi = self.cell_vol * self.params.phi
        m_w = vphi * self.params.rho_w_std * np.sum(state.s_l)
        m_h = vphi * np.sum(state.s_l * state.rho_lh + (1.0 - state.s_l) * e["rho_g"])
        return m_w, m_h

    # -- assembly ----------------------------------------------------------

    def residual(self, state: State, state_old: State, dt: float) -> np.ndarray:
        return self._assemble(state, state_old, dt, want_jac=False)[0]

    def jacobian(self, state: State, state_old: State, dt: float) -> BlockSystem:
        res, system = self._assemble(state, state_old, dt, want_jac=True)
        return system

    def _assemble(self, state, state_old, dt, want_jac):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        n = state.n
        grid = self.grid
        prm = self.params
        e = self._eval(state)
        e_old = self._eval(state_old)
        p, s, rho = state.p_l, state.s_l, state.rho_lh

        res = np.zeros(3 * n)
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(np.asarray(r, dtype=np.int64))
            cols.append(np.asarray(c, dtype=np.int64))
            vals.append(np.asarray(v, dtype=float))

        # accumulation terms; flux rows get multiplied by dt/V at the end
        vphi_dt = self.cell_vol * prm.phi / dt
        res[:n] += vphi_dt * prm.rho_w_std * (s - state_old.s_l)
        m_h = s * rho + (1.0 - s) * e["rho_g"]
        m_h_old = state_old.s_l * state_old.rho_lh + (1.0 - state_old.s_l) * e_old["rho_g"]
        res[n:2 * n] += vphi_dt * (m_h - m_h_old)

        cells = np.arange(n)
        if want_jac:
            add(cells, n + cells, np.full(n, vphi_dt * prm.rho_w_std))
            add(n + cells, cells, vphi_dt * (1.0 - s) * prm.c_v)
            add(n + cells, n + cells,
                vphi_dt * (rho - e["rho_g"] + (1.0 - s) * prm.c_v * e["dpc"]))
            add(n + cells, 2 * n + cells, vphi_dt * s)

        # interior two-point fluxes, faces oriented a -> b
        a, b = grid.face_a, grid.face_b
        t, tgeo = self.trans, self.tgeo
        self._flux_contributions(
            res, add if want_jac else None, want_jac, n, prm, e,
            a=a, b=b, t=t, tgeo=tgeo, gdx=self.gdx,
            pa=p[a], pb=p[b], sa=s[a], sb=s[b], ra=rho[a], rb=rho[b],
            pca=e["pc"][a], pcb=e["pc"][b], dpca=e["dpc"][a], dpcb=e["dpc"][b],
            lam_la=e["lam_l"][a], lam_lb=e["lam_l"][b],
            dlam_la=e["dlam_l"][a], dlam_lb=e["dlam_l"][b],
            lam_ga=e["lam_g"][a], lam_gb=e["lam_g"][b],
            dlam_ga=e["dlam_g"][a], dlam_gb=e["dlam_g"][b],
            b_is_boundary=False)

        # boundary conditions
        for cells_b, areas, rule in self.neumann_groups:
            np.add.at(res, cells_b, -rule.w_inflow * areas)
            np.add.at(res, n + cells_b, -rule.h_inflow * areas)

        for cells_b, t_b, tgeo_b, gdx_b, rule in self.dirichlet_groups:
            nb = cells_b.size
            pc_b, dpc_b = physics.capillary(rule.s_l, self.capillary, self.relperm)
            krl_b, krg_b, _, _ = physics.relperm(rule.s_l, self.relperm)
            ones = np.ones(nb)
            self._flux_contributions(
                res, add if want_jac else None, want_jac, n, prm, e,
                a=cells_b, b=None, t=t_b, tgeo=tgeo_b, gdx=gdx_b,
                pa=p[cells_b], pb=rule.p_l * ones, sa=s[cells_b], sb=rule.s_l * ones,
                ra=rho[cells_b], rb=rule.rho_lh * ones,
                pca=e["pc"][cells_b], pcb=pc_b * ones,
                dpca=e["dpc"][cells_b], dpcb=dpc_b * ones,
                lam_la=e["lam_l"][cells_b], lam_lb=(krl_b / prm.mu_l) * ones,
                dlam_la=e["dlam_l"][cells_b], dlam_lb=np.zeros(nb),
                lam_ga=e["lam_g"][cells_b], lam_gb=(krg_b / prm.mu_g) * ones,
                dlam_ga=e["dlam_g"][cells_b], dlam_gb=np.zeros(nb),
                b_is_boundary=True)

        # balance rows into accumulation form (strong form times dt)
        res[:2 * n] *= dt / self.cell_vol

        # complementarity constraints
        f_con = 1.0 - s
        g_con = prm.c_h * e["pg"] - rho
        res[2 * n:] = np.minimum(f_con, g_con)
        active_mask = f_con >= g_con
        act = cells[active_mask]
        inact = cells[~active_mask]

        if not want_jac:
            return res, None

        if inact.size:
            add(2 * n + inact, n + inact, np.full(inact.size, -1.0))
        if act.size:
            add(2 * n + act, act, np.full(act.size, prm.c_h))
            add(2 * n + act, n + act, prm.c_h * e["dpc"][act])
            add(2 * n + act, 2 * n + act, np.full(act.size, -1.0))

        all_rows = np.concatenate(rows)
        all_vals = np.concatenate(vals)
        all_vals[all_rows < 2 * n] *= dt / self.cell_vol
        jac = CsrMatrix.from_coo(3 * n, 3 * n, all_rows,
                                 np.concatenate(cols), all_vals)
        system = BlockSystem(a=jac, n_cells=n,
                             active_set=ActiveSet(active=act, inactive=inact),
                             rhs=-res)
        return res, system

    def _flux_contributions(self, res, add, want_jac, n, prm, e, *,
                            a, b, t, tgeo, gdx,
                            pa, pb, sa, sb, ra, rb, pca, pcb, dpca, dpcb,
                            lam_la, lam_lb, dlam_la, dlam_lb,
                            lam_ga, lam_gb, dlam_ga, dlam_gb,
                            b_is_boundary):
        """Add TPFA fluxes for a batch of faces a->b.

        For boundary faces, side b is a fixed ghost state: all fluxes still
        scatter into cell a only and derivatives versus b are dropped.
        """
        pga = pa + pca
        pgb = pb + pcb

        # phase potentials; face densities arithmetic-averaged for gravity
        rho_l_face = prm.rho_w_std + 0.5 * (ra + rb)
        rho_g_face = 0.5 * prm.c_v * (pga + pgb)
        dphi_l = (pa - pb) - rho_l_face * gdx
        dphi_g = (pga - pgb) - rho_g_face * gdx

        up_l = dphi_l >= 0.0          # True: upwind side is a
        up_g = dphi_g >= 0.0
        lam_l_up = np.where(up_l, lam_la, lam_lb)
        r_up = np.where(up_l, ra, rb)
        lam_g_up = np.where(up_g, lam_ga, lam_gb)
        pg_up = np.where(up_g, pga, pgb)
        rho_g_up = prm.c_v * pg_up

        dfac = tgeo * prm.phi * prm.diff_lh * 0.5 * (sa + sb)
        f_diff = dfac * (ra - rb)
        fw_adv = prm.rho_w_std * lam_l_up * t * dphi_l
        fh_l = r_up * lam_l_up * t * dphi_l
        fh_g = rho_g_up * lam_g_up * t * dphi_g
        fw = fw_adv - f_diff
        fh = fh_l + fh_g + f_diff

        np.add.at(res, a, fw)
        np.add.at(res, n + a, fh)
        if not b_is_boundary:
            np.add.at(res, b, -fw)
            np.add.at(res, n + b, -fh)

        if not want_jac:
            return

        half_g = 0.5 * gdx
        # potential-difference derivatives
        ddphil_dpa = np.ones_like(dphi_l)
        ddphil_dpb = -np.ones_like(dphi_l)
        ddphil_dra = -half_g
        ddphil_drb = -half_g
        ddphig_dpa = 1.0 - prm.c_v * half_g
        ddphig_dpb = -1.0 - prm.c_v * half_g
        ddphig_dsa = dpca * (1.0 - prm.c_v * half_g)
        ddphig_dsb = -dpcb * (1.0 + prm.c_v * half_g)

        c_l = lam_l_up * t
        # upwind-coefficient derivatives act on the upwind cell; when that
        # cell is the fixed boundary ghost the entry is dropped
        live_l = up_l if b_is_boundary else np.ones_like(up_l)
        live_g = up_g if b_is_boundary else np.ones_like(up_g)

        def scatter(row_a, row_b, col, val):
            add(row_a, col, val)
            if not b_is_boundary:
                add(row_b, col, -val)

        col_pa, col_pb = a, (a if b_is_boundary else b)
        col_sa, col_sb = n + a, (n + a if b_is_boundary else n + b)
        col_ra, col_rb = 2 * n + a, (2 * n + a if b_is_boundary else 2 * n + b)
        wrow_a = a
        wrow_b = a if b_is_boundary else b
        hrow_a = n + a
        hrow_b = n + a if b_is_boundary else n + b
        # On boundary faces entries "versus b" must vanish instead of folding
        # into a; mask them out.
        keep_b = 0.0 if b_is_boundary else 1.0

        # --- water row: Fw = rho_w*lam_l_up*T*dphi_l - Dfac*(ra - rb)
        coef = prm.rho_w_std * c_l
        scatter(wrow_a, wrow_b, col_pa, coef * ddphil_dpa)
        scatter(wrow_a, wrow_b, col_pb, keep_b * coef * ddphil_dpb)
        # upwind mobility derivative
        dlam_up = np.where(up_l, dlam_la, dlam_lb)
        up_cols = np.where(up_l, n + a, n + a if b_is_boundary else n + b)
        scatter(wrow_a, wrow_b, up_cols, live_l * prm.rho_w_std * dlam_up * t * dphi_l)
        # diffusion and gravity-through-density terms
        ddfac = tgeo * prm.phi * prm.diff_lh * 0.5
        scatter(wrow_a, wrow_b, col_sa, -ddfac * (ra - rb))
        scatter(wrow_a, wrow_b, col_sb, keep_b * (-ddfac * (ra - rb)))
        scatter(wrow_a, wrow_b, col_ra, -dfac + coef * ddphil_dra)
        scatter(wrow_a, wrow_b, col_rb, keep_b * (dfac + coef * ddphil_drb))

        # --- hydrogen row, liquid advection: Fh_l = r_up*lam_l_up*T*dphi_l
        coef = r_up * c_l
        scatter(hrow_a, hrow_b, col_pa, coef * ddphil_dpa)
        scatter(hrow_a, hrow_b, col_pb, keep_b * coef * ddphil_dpb)
        scatter(hrow_a, hrow_b, up_cols, live_l * r_up * dlam_up * t * dphi_l)
        up_cols_r = np.where(up_l, 2 * n + a, 2 * n + a if b_is_boundary else 2 * n + b)
        scatter(hrow_a, hrow_b, up_cols_r, live_l * lam_l_up * t * dphi_l)
        scatter(hrow_a, hrow_b, col_ra, coef * ddphil_dra)
        scatter(hrow_a, hrow_b, col_rb, keep_b * coef * ddphil_drb)

        # --- hydrogen row, gas advection: Fh_g = rho_g_up*lam_g_up*T*dphi_g
        cg = rho_g_up * lam_g_up * t
        scatter(hrow_a, hrow_b, col_pa, cg * ddphig_dpa)
        scatter(hrow_a, hrow_b, col_pb, keep_b * cg * ddphig_dpb)
        scatter(hrow_a, hrow_b, col_sa, cg * ddphig_dsa)
        scatter(hrow_a, hrow_b, col_sb, keep_b * cg * ddphig_dsb)
        # upwind coefficient (density and mobility) derivatives
        dlam_g_up = np.where(up_g, dlam_ga, dlam_gb)
        dpc_up = np.where(up_g, dpca, dpcb)
        up_cols_s = np.where(up_g, n + a, n + a if b_is_boundary else n + b)
        up_cols_p = np.where(up_g, a, a if b_is_boundary else b)
        scatter(hrow_a, hrow_b, up_cols_s,
                live_g * (prm.c_v * dpc_up * lam_g_up + rho_g_up * dlam_g_up) * t * dphi_g)
        scatter(hrow_a, hrow_b, up_cols_p, live_g * prm.c_v * lam_g_up * t * dphi_g)

        # --- hydrogen row, diffusion: +Dfac*(ra - rb)
        scatter(hrow_a, hrow_b, col_sa, ddfac * (ra - rb))
        scatter(hrow_a, hrow_b, col_sb, keep_b * ddfac * (ra - rb))
        scatter(hrow_a, hrow_b, col_ra, dfac)
        scatter(hrow_a, hrow_b, col_rb, keep_b * (-dfac))


def classify(state: State, problem: Problem) -> ActiveSet:
    return problem.classify(state)


def residual(state, state_old, dt, problem: Problem) -> np.ndarray:
    return problem.residual(state, state_old, dt)


def jacobian(state, state_old, dt, problem: Problem) -> BlockSystem:
    return problem.jacobian(state, state_old, dt)
