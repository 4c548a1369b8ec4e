"""Scenario configuration, simulation driver and report generation.

Scenarios are TOML files (see configs/ at the repository root); every
physical and solver knob lives there so experiments are reproducible by
path.  Reports are plain CSV: per-step solver statistics, a per-iteration
Newton log, field snapshots and probe time series.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import mgr as mgr_mod
from . import physics
from .amg import AmgOptions
from .assembly import Problem, State
from .grid import SIDES, BoundaryCondition, BoundarySpec, build_grid
from .krylov import GmresOptions
from .linsolve import GmresSolver, LinearSolveResult
from .newton import NewtonOptions, TimeLoopResult, time_loop
from .sparse import write_matrix_market

YEAR_SECONDS = 3.1536e7  # 365-day year; the benchmark sources never define one
DAY_SECONDS = 86400.0

SCENARIO_KINDS = ("unsaturated", "gas_appearance", "box3d", "custom")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    kind: str
    name: str
    mesh: tuple                 # (nx, ny, nz, lx, ly, lz)
    schedule: list              # dt values in seconds
    params: physics.FluidParams
    relperm: physics.RelPermModel
    capillary: physics.CapPressModel
    boundary: BoundarySpec
    initial: dict               # base values + region overrides
    preconditioner: str = "mgr"
    ilu_level: int = 0
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    gmres: GmresOptions = field(default_factory=lambda: GmresOptions(restart=400))
    amg: AmgOptions = field(default_factory=lambda: AmgOptions(pre_sweeps=2, post_sweeps=2))
    out_dir: str | None = None
    probes: tuple = (0,)
    dump_matrices: bool = False


def _need(table, key, where):
    if key not in table:
        raise ConfigError(f"missing '{key}' in [{where}]")
    return table[key]


def _flux_to_si(value, unit):
    if unit in (None, "per_second"):
        return value
    if unit == "per_year":
        return value / YEAR_SECONDS
    if unit == "per_day":
        return value / DAY_SECONDS
    raise ConfigError(f"unknown flux_unit {unit!r}")


def _dt_to_si(value, unit):
    if unit in (None, "second", "s"):
        return value
    if unit in ("day", "d"):
        return value * DAY_SECONDS
    if unit in ("year", "yr"):
        return value * YEAR_SECONDS
    raise ConfigError(f"unknown time unit {unit!r}")


def _parse_box(raw):
    if raw is None:
        return None
    box = [None, None, None]
    axes = {"x": 0, "y": 1, "z": 2}
    for key, rng in raw.items():
        if key not in axes:
            raise ConfigError(f"unknown box axis {key!r}")
        if len(rng) != 2:
            raise ConfigError(f"box range for {key!r} must have two entries")
        box[axes[key]] = (float(rng[0]), float(rng[1]))
    return tuple(box)


def load_config(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return parse_config(raw, name=os.path.splitext(os.path.basename(path))[0])


def parse_config(raw: dict, name="scenario") -> ScenarioConfig:
    try:
        return _parse_config(raw, name)
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from err


def _parse_config(raw, name):
    scen = raw.get("scenario", {})
    kind = scen.get("kind", "custom")
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}")

    mesh = _need(raw, "mesh", "mesh")
    dims = tuple(int(_need(mesh, k, "mesh")) for k in ("nx", "ny", "nz"))
    lens = tuple(float(_need(mesh, k, "mesh")) for k in ("lx", "ly", "lz"))

    tt = _need(raw, "time", "time")
    unit = tt.get("unit", "second")
    if "dt_list" in tt:
        schedule = [_dt_to_si(float(v), unit) for v in tt["dt_list"]]
    else:
        dt = _dt_to_si(float(_need(tt, "dt", "time")), unit)
        schedule = [dt] * int(_need(tt, "n_steps", "time"))

    ph = raw.get("physics", {})
    params = physics.FluidParams(
        perm=float(ph.get("perm", 1e-16)),
        phi=float(ph.get("phi", 0.3)),
        diff_lh=float(ph.get("diff_lh", 3e-9)),
        mu_l=float(ph.get("mu_l", 1e-9)),
        mu_g=float(ph.get("mu_g", 9e-6)),
        henry=float(ph.get("henry", 7.65e-6)),
        molar_h=float(ph.get("molar_h", 2e-3)),
        molar_w=float(ph.get("molar_w", 1e-2)),
        rho_w_std=float(ph.get("rho_w_std", 1e3)),
        temperature=float(ph.get("temperature", 303.0)),
        gravity=tuple(ph.get("gravity", (0.0, 0.0, 0.0))),
    )

    rp = raw.get("relperm", {})
    relperm = physics.RelPermModel(
        variant=rp.get("variant", physics.VAN_GENUCHTEN),
        s_lr=float(rp.get("s_lr", 0.0)),
        s_gr=float(rp.get("s_gr", 0.0)),
        n=float(rp.get("n", 2.0)),
    )
    cp = raw.get("capillary", {})
    capillary = physics.CapPressModel(
        variant=cp.get("variant", physics.VAN_GENUCHTEN),
        p_entry=float(cp.get("p_entry", 2e6)),
        n=float(cp.get("n", relperm.n)),
        eps=float(cp.get("eps", 1e-5)),
    )

    spec = BoundarySpec()
    for entry in raw.get("boundary", []):
        side = _need(entry, "side", "boundary")
        kind_b = entry.get("kind", "noflux")
        funit = entry.get("flux_unit")
        spec.add(BoundaryCondition(
            side=side, kind=kind_b,
            w_inflow=_flux_to_si(float(entry.get("w_inflow", 0.0)), funit),
            h_inflow=_flux_to_si(float(entry.get("h_inflow", 0.0)), funit),
            p_l=float(entry.get("p_l", 0.0)),
            s_l=float(entry.get("s_l", 1.0)),
            rho_lh=float(entry.get("rho_lh", 0.0)),
            box=_parse_box(entry.get("box")),
        ))

    init = _need(raw, "initial", "initial")
    if "p_l" not in init:
        raise ConfigError("missing 'p_l' in [initial]")

    sol = raw.get("solver", {})
    precond = sol.get("preconditioner", "mgr")
    if precond not in ("mgr", "ilu", "none", "cpr"):
        raise ConfigError(f"unknown preconditioner {precond!r}")
    newton = NewtonOptions(
        tol_residual=float(sol.get("newton_tol", 1e-5)),
        max_iter=int(sol.get("newton_max_iter", 25)),
        damping=bool(sol.get("damping", True)),
        relative=bool(sol.get("newton_relative", False)),
        max_dt_cuts=int(sol.get("max_dt_cuts", 10)),
        divergence_factor=float(sol.get("newton_divergence_factor", 1e4)),
    )
    gmres_opts = GmresOptions(
        rel_tol=float(sol.get("gmres_rel_tol", 1e-12)),
        max_iter=int(sol.get("gmres_max_iter", 400)),
        restart=int(sol.get("gmres_restart", 400)),
    )
    amg_opts = AmgOptions(
        strength_theta=float(sol.get("amg_theta", 0.25)),
        pre_sweeps=int(sol.get("coarse_pre_sweeps", 2)),
        post_sweeps=int(sol.get("coarse_post_sweeps", 2)),
        cycles=int(sol.get("coarse_cycles", 1)),
    )

    out = raw.get("output", {})
    return ScenarioConfig(
        kind=kind, name=scen.get("name", name),
        mesh=dims + lens, schedule=schedule,
        params=params, relperm=relperm, capillary=capillary,
        boundary=spec, initial=init,
        preconditioner=precond, ilu_level=int(sol.get("ilu_level", 0)),
        newton=newton, gmres=gmres_opts, amg=amg_opts,
        out_dir=out.get("dir"), probes=tuple(out.get("probes", (0,))),
        dump_matrices=bool(out.get("dump_matrices", False)),
    )


def build_problem(cfg: ScenarioConfig) -> Problem:
    nx, ny, nz, lx, ly, lz = cfg.mesh
    grid = build_grid(nx, ny, nz, lx, ly, lz)
    return Problem(grid, cfg.params, cfg.relperm, cfg.capillary, cfg.boundary)


def initial_state(cfg: ScenarioConfig, problem: Problem) -> State:
    """Materialize the [initial] block: base values plus region overrides.

    Saturation comes either directly (s_l) or from a prescribed gas
    pressure by inverting the capillary curve; the dissolved hydrogen
    density defaults to Henry equilibrium with the local gas pressure.
    """
    grid = problem.grid
    n = grid.n_cells
    centers = grid.cell_centers()

    def apply_values(vals, mask):
        if not mask.any():
            return
        if "p_l" in vals:
            p_l[mask] = float(vals["p_l"])
        if "s_l" in vals and "p_g" in vals:
            raise ConfigError("give either s_l or p_g in an initial block, not both")
        if "p_g" in vals:
            # region pressure is uniform, so one capillary inversion suffices
            pc = float(vals["p_g"]) - float(p_l[mask][0])
            s_l[mask] = physics.capillary_inverse(pc, cfg.capillary, cfg.relperm)
        elif "s_l" in vals:
            s_l[mask] = float(vals["s_l"])
        if "rho_lh" in vals:
            rho[mask] = float(vals["rho_lh"])
            explicit_rho[mask] = True

    p_l = np.zeros(n)
    s_l = np.ones(n)
    rho = np.zeros(n)
    explicit_rho = np.zeros(n, dtype=bool)

    everywhere = np.ones(n, dtype=bool)
    apply_values(cfg.initial, everywhere)
    for region in cfg.initial.get("regions", []):
        box = _parse_box(_need(region, "box", "initial.regions"))
        mask = np.ones(n, dtype=bool)
        for ax, rng in enumerate(box):
            if rng is not None:
                mask &= (centers[:, ax] >= rng[0]) & (centers[:, ax] <= rng[1])
        apply_values(region, mask)

    # default dissolved hydrogen: Henry equilibrium with the local P_g
    pc_all, _ = physics.capillary(s_l, cfg.capillary, cfg.relperm)
    henry_rho = cfg.params.c_h * (p_l + pc_all)
    rho = np.where(explicit_rho, rho, henry_rho)
    return State(p_l, s_l, rho)


def build_solver(cfg: ScenarioConfig) -> GmresSolver:
    specs = None
    if cfg.preconditioner == "mgr":
        specs = mgr_mod.default_2p2c_specs(cfg.kind if cfg.kind != "custom" else "unsaturated")
    return GmresSolver(preconditioner=cfg.preconditioner, gmres_opts=cfg.gmres,
                       mgr_specs=specs, amg_opts=cfg.amg, ilu_level=cfg.ilu_level)


class _DumpingSolver:
    """Wraps a solver and writes every Jacobian to Matrix Market files."""

    def __init__(self, inner, directory, prefix="jacobian"):
        self.inner = inner
        self.directory = directory
        self.prefix = prefix
        self.counter = 0
        os.makedirs(directory, exist_ok=True)

    def solve(self, system) -> LinearSolveResult:
        path = os.path.join(self.directory, f"{self.prefix}_{self.counter:05d}.mtx")
        write_matrix_market(path, system.a)
        self.counter += 1
        return self.inner.solve(system)


@dataclass
class StepRow:
    step: int
    dt: float
    ns: int
    ls: int
    wall: float
    mass_w: float
    mass_h: float
    n_active: int
    theta_max_abs: float
    f_min: float
    g_min: float

    @property
    def ls_per_ns(self):
        return self.ls / self.ns if self.ns else 0.0


@dataclass
class SolverReport:
    name: str
    steps: list
    probe_rows: list
    final_state: State
    loop: TimeLoopResult
    wall_total: float

    @property
    def total_ns(self):
        return sum(s.ns for s in self.steps)

    @property
    def total_ls(self):
        return sum(s.ls for s in self.steps)

    @property
    def ls_per_ns(self):
        ns = self.total_ns
        return self.total_ls / ns if ns else 0.0


def run_scenario(cfg: ScenarioConfig, problem: Problem | None = None) -> SolverReport:
    problem = problem or build_problem(cfg)
    state0 = initial_state(cfg, problem)
    solver = build_solver(cfg)
    if cfg.dump_matrices:
        if not cfg.out_dir:
            raise ConfigError("dump_matrices requires an output directory")
        solver = _DumpingSolver(solver, os.path.join(cfg.out_dir, "matrices"))

    rows = []
    probe_rows = []

    def record_probes(step, t, state):
        e_pc, _ = physics.capillary(state.s_l, cfg.capillary, cfg.relperm)
        for cell in cfg.probes:
            probe_rows.append((step, t, cell, state.p_l[cell],
                               state.p_l[cell] + e_pc[cell],
                               1.0 - state.s_l[cell], state.rho_lh[cell]))

    record_probes(0, 0.0, state0)

    def on_step(step_idx, state, stat):
        f, g = problem.constraint_parts(state)
        theta = np.minimum(f, g)
        m_w, m_h = problem.total_masses(state)
        rows.append(StepRow(
            step=step_idx + 1, dt=stat.dt, ns=stat.newton_iterations,
            ls=stat.linear_iterations, wall=stat.wall_time,
            mass_w=m_w, mass_h=m_h,
            n_active=int(np.sum(f >= g)),
            theta_max_abs=float(np.max(np.abs(theta))),
            f_min=float(f.min()), g_min=float(g.min())))
        record_probes(step_idx + 1, stat.time_end, state)

    t0 = time.perf_counter()
    loop = time_loop(state0, cfg.schedule, problem, solver, cfg.newton,
                     step_callback=on_step)
    wall_total = time.perf_counter() - t0

    report = SolverReport(name=cfg.name, steps=rows, probe_rows=probe_rows,
                          final_state=loop.final_state, loop=loop,
                          wall_total=wall_total)
    if cfg.out_dir:
        write_outputs(report, cfg, problem)
    return report


def write_outputs(report: SolverReport, cfg: ScenarioConfig, problem: Problem):
    os.makedirs(cfg.out_dir, exist_ok=True)
    report_csv(report, os.path.join(cfg.out_dir, "report.csv"))
    newton_log_csv(report.loop, os.path.join(cfg.out_dir, "newton_log.csv"))
    snapshot_profiles(report.final_state, problem,
                      os.path.join(cfg.out_dir, "snapshot_final.csv"))
    probes_csv(report, os.path.join(cfg.out_dir, "probes.csv"))


def report_csv(report: SolverReport, path):
    """Fixed-header per-step table plus a totals row."""
    with open(path, "w") as fh:
        fh.write("step,dt_s,ns,ls,ls_per_ns,wall_s,cum_wall_s,mass_w_kg,mass_h_kg,"
                 "n_active,theta_max_abs,f_min,g_min\n")
        cum = 0.0
        for row in report.steps:
            cum += row.wall
            fh.write(f"{row.step},{row.dt!r},{row.ns},{row.ls},{row.ls_per_ns!r},"
                     f"{row.wall!r},{cum!r},{row.mass_w!r},{row.mass_h!r},"
                     f"{row.n_active},{row.theta_max_abs!r},{row.f_min!r},{row.g_min!r}\n")
        fh.write(f"total,{sum(r.dt for r in report.steps)!r},{report.total_ns},"
                 f"{report.total_ls},{report.ls_per_ns!r},{report.wall_total!r},"
                 f"{cum!r},,,,,,\n")


def newton_log_csv(loop: TimeLoopResult, path):
    with open(path, "w") as fh:
        fh.write("step,attempt,iteration,residual_inf,n_active,linear_iterations,damping\n")
        for step, attempt, rec in loop.newton_log:
            fh.write(f"{step},{attempt},{rec.iteration},{rec.residual_norm!r},"
                     f"{rec.n_active},{rec.linear_iterations},{rec.damping!r}\n")


def snapshot_profiles(state: State, problem: Problem, path):
    """Cell-center field snapshot: coordinates plus (P_l, P_g, S_g, rho_l_h)."""
    centers = problem.grid.cell_centers()
    pc, _ = physics.capillary(state.s_l, problem.capillary, problem.relperm)
    with open(path, "w") as fh:
        fh.write("x,y,z,p_l,p_g,s_g,rho_lh\n")
        for i in range(state.n):
            fh.write(f"{centers[i, 0]!r},{centers[i, 1]!r},{centers[i, 2]!r},"
                     f"{state.p_l[i]!r},{state.p_l[i] + pc[i]!r},"
                     f"{1.0 - state.s_l[i]!r},{state.rho_lh[i]!r}\n")


def probes_csv(report: SolverReport, path):
    with open(path, "w") as fh:
        fh.write("step,time_s,cell,p_l,p_g,s_g,rho_lh\n")
        for row in report.probe_rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
