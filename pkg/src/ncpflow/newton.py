"""Semi-smooth Newton iteration and the outer time-stepping loop.

Every iteration reclassifies the active set, assembles the generalized
Jacobian, solves it with the injected linear solver and applies an
optionally damped update.  The time loop halves dt on nonlinear or linear
failure and sub-steps back up to the scheduled boundary, keeping exact
NS/LS bookkeeping across all attempts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import Problem, State


class NonConvergence(RuntimeError):
    def __init__(self, report):
        super().__init__(f"Newton did not converge in {report.iterations} iterations "
                         f"(last |R|_inf = {report.residual_norms[-1]:.3e})")
        self.report = report


class LinearSolveFailure(RuntimeError):
    def __init__(self, message, iterations=0, report=None):
        super().__init__(message)
        self.iterations = iterations
        self.report = report


class StepFailed(RuntimeError):
    def __init__(self, step, cuts):
        super().__init__(f"time step {step} failed after {cuts} dt cuts")
        self.step = step


@dataclass(frozen=True)
class NewtonOptions:
    tol_residual: float = 1e-5     # absolute infinity norm
    max_iter: int = 25
    min_damping: float = 1e-3
    dt_cut_factor: float = 0.5
    max_dt_cuts: int = 10
    damping: bool = True           # False reproduces the plain update
    relative: bool = False         # converge on |R|/|R0| instead
    divergence_factor: float = 1e4  # bail early when |R| exceeds this times |R0|

    def __post_init__(self):
        if self.tol_residual <= 0.0 or self.max_iter < 1:
            raise ValueError("tolerance must be positive and max_iter >= 1")


@dataclass
class IterationRecord:
    iteration: int
    residual_norm: float
    n_active: int
    linear_iterations: int
    damping: float


@dataclass
class NewtonReport:
    iterations: int = 0
    linear_iterations_total: int = 0
    converged: bool = False
    residual_norms: list = field(default_factory=list)
    records: list = field(default_factory=list)


def newton_solve(state_old: State, dt: float, problem: Problem, linear_solver,
                 opts: NewtonOptions = NewtonOptions(), tol_scale: float = 1.0):
    """Advance one implicit step; returns (state, NewtonReport).

    Raises NonConvergence when max_iter is exhausted and LinearSolveFailure
    when the linear solver gives up; both carry the bookkeeping so far.
    ``tol_scale`` tightens the tolerance for sub-steps of a cut interval:
    the residual is a per-step mass closure, so a partial step must close
    its proportionally smaller balance to the same relative fidelity.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u = state_old.copy()
    r = problem.residual(u, state_old, dt)
    r_norm = float(np.max(np.abs(r)))
    r_ref = r_norm if opts.relative else 1.0
    tol = opts.tol_residual * tol_scale * max(r_ref, 1e-300)

    report = NewtonReport(residual_norms=[r_norm])

    for it in range(1, opts.max_iter + 1):
        if r_norm <= tol:
            report.converged = True
            return u, report

        system = problem.jacobian(u, state_old, dt)
        try:
            result = linear_solver.solve(system)
        except LinearSolveFailure as err:
            err.report = report
            raise
        report.linear_iterations_total += result.iterations
        if not result.converged:
            report.records.append(IterationRecord(it, r_norm, system.active_set.n_active,
                                                  result.iterations, 0.0))
            raise LinearSolveFailure(
                f"linear solver stalled at Newton iteration {it} "
                f"(residual {result.residual_norm:.3e})", result.iterations, report)

        lam = 1.0
        while True:
            u_try = u.plus(result.x, lam)
            r_try = problem.residual(u_try, state_old, dt)
            r_try_norm = float(np.max(np.abs(r_try)))
            if (not opts.damping) or np.isfinite(r_try_norm) and r_try_norm < r_norm:
                break
            if lam <= opts.min_damping:
                break
            lam = max(lam / 2.0, opts.min_damping)

        u, r_norm = u_try, r_try_norm
        report.iterations = it
        report.residual_norms.append(r_norm)
        report.records.append(IterationRecord(it, r_norm, system.active_set.n_active,
                                              result.iterations, lam))
        if not np.isfinite(r_norm) or r_norm > opts.divergence_factor * max(report.residual_norms[0], tol):
            raise NonConvergence(report)

    if r_norm <= tol:
        report.converged = True
        return u, report
    raise NonConvergence(report)


@dataclass
class StepStats:
    index: int
    dt: float
    time_end: float
    newton_iterations: int
    linear_iterations: int
    wall_time: float
    sub_steps: int
    dt_cuts: int

    @property
    def ls_per_ns(self):
        return self.linear_iterations / self.newton_iterations if self.newton_iterations else 0.0


@dataclass
class TimeLoopResult:
    final_state: State
    states: list                   # accepted state at the end of each scheduled step
    steps: list                    # StepStats per scheduled step
    newton_log: list               # (step, attempt, IterationRecord) rows

    @property
    def total_ns(self):
        return sum(s.newton_iterations for s in self.steps)

    @property
    def total_ls(self):
        return sum(s.linear_iterations for s in self.steps)

    @property
    def ls_per_ns(self):
        ns = self.total_ns
        return self.total_ls / ns if ns else 0.0


def time_loop(initial_state: State, schedule, problem: Problem, linear_solver,
              opts: NewtonOptions = NewtonOptions(), step_callback=None) -> TimeLoopResult:
    """March through `schedule` (a sequence of dt values, seconds).

    On Newton or linear failure the attempted dt is halved (up to
    max_dt_cuts) and the remainder of the scheduled interval is covered by
    sub-steps, so accepted states always land on schedule boundaries.
    """
    schedule = list(schedule)
    if not schedule:
        raise ValueError("schedule must be nonempty")

    state = initial_state.copy()
    t = 0.0
    states, stats, newton_log = [], [], []

    for step_idx, dt_sched in enumerate(schedule):
        t_start = time.perf_counter()
        remaining = float(dt_sched)
        dt_try = remaining
        ns = ls = sub_steps = cuts = depth = 0
        attempt = 0
        while remaining > 0.0:
            attempt += 1
            try:
                state_new, rep = newton_solve(state, dt_try, problem, linear_solver, opts,
                                              tol_scale=dt_try / float(dt_sched))
            except (NonConvergence, LinearSolveFailure) as err:
                rep = getattr(err, "report", None)
                if rep is not None:
                    ns += rep.iterations
                    ls += rep.linear_iterations_total
                    for rec in rep.records:
                        newton_log.append((step_idx, attempt, rec))
                cuts += 1
                depth += 1
                if depth > opts.max_dt_cuts:
                    raise StepFailed(step_idx, cuts) from err
                dt_try *= opts.dt_cut_factor
                continue
            ns += rep.iterations
            ls += rep.linear_iterations_total
            for rec in rep.records:
                newton_log.append((step_idx, attempt, rec))
            state = state_new
            remaining -= dt_try
            sub_steps += 1
            if remaining > 0.0 and depth:
                # let the sub-step grow back toward the schedule boundary
                dt_try = 2.0 * dt_try
                depth -= 1
            dt_try = min(dt_try, remaining) if remaining > 0.0 else dt_try

        t += dt_sched
        wall = time.perf_counter() - t_start
        states.append(state.copy())
        st = StepStats(index=step_idx, dt=dt_sched, time_end=t,
                       newton_iterations=ns, linear_iterations=ls,
                       wall_time=wall, sub_steps=sub_steps, dt_cuts=cuts)
        stats.append(st)
        if step_callback is not None:
            step_callback(step_idx, state, st)

    return TimeLoopResult(final_state=state, states=states, steps=stats,
                          newton_log=newton_log)
