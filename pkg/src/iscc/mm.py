"""Majorization-minimization outer loop shared by all solver variants."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .array_model import SystemConfig, TargetSpec, steering_vector
from .metrics import scnr
from .pda import Layout, PenaltySchedule, StopRule, pda_solve, restore_feasibility
from .projections import RadarSet
from .surrogate import build_surrogate


@dataclass(frozen=True)
class SolveOptions:
    """Knobs shared by every solver.

    ``mm_tol`` is relative on the epigraph value; ``step_tol`` is the MM
    iterate-difference threshold in units of ``sqrt(P)``.  ``covert=False``
    drops the noise-shaping sets (the SLP baseline).
    """

    epsilon: float = 1e-2
    gamma_db: float | None = None
    covert: bool = True
    max_outer: int = 100
    mm_tol: float = 1e-4
    step_tol: float = 1e-3
    schedule: PenaltySchedule = PenaltySchedule(10.0, 1.2, 20, 1e9, adaptive=True)
    stop: StopRule = StopRule(max_iters=5000, residual_tol=1e-5, step_tol=1e-9)
    accel: bool = True
    polish_tol: float = 1e-9
    polish_sweeps: int = 20000
    record_trace: bool = True

    def __post_init__(self):
        if self.gamma_db is None and not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.max_outer < 1 or self.mm_tol <= 0 or self.step_tol <= 0:
            raise ValueError("invalid MM stopping rule")


@dataclass
class SolveReport:
    converged: bool = False
    infeasible: bool = False
    outer_iters: int = 0
    inner_iters_total: int = 0
    objective_trace: list = field(default_factory=list)
    step_trace: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    wall_ms: float = 0.0
    rejected_steps: int = 0
    extra: dict = field(default_factory=dict)
    pda_traces: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        out = {
            "converged": bool(self.converged),
            "infeasible": bool(self.infeasible),
            "outer_iters": int(self.outer_iters),
            "inner_iters_total": int(self.inner_iters_total),
            "objective_trace": [float(v) for v in self.objective_trace],
            "step_trace": [float(v) for v in self.step_trace],
            "residuals": _jsonable(self.residuals),
            "wall_ms": float(self.wall_ms),
            "rejected_steps": int(self.rejected_steps),
        }
        out.update(_jsonable(self.extra))
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def merged_trace(self) -> list:
        """Concatenate PDA traces with a running iteration counter."""
        rows, offset = [], 0
        for tr in self.pda_traces:
            for row in tr:
                rows.append((row[0] + offset, *row[1:]))
            offset += len(tr)
        return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    return obj


def initial_waveform(targets, cfg: SystemConfig) -> np.ndarray:
    """Full power split evenly over slots, steered at the sum of target responses."""
    beam = sum(steering_vector(t.angle, cfg.n_tx, cfg.spacing_ratio) for t in targets)
    nrm = np.linalg.norm(beam)
    if nrm < 1e-12:
        beam = steering_vector(targets[0].angle, cfg.n_tx, cfg.spacing_ratio)
        nrm = 1.0
    x = np.tile(beam / nrm, (cfg.frame_len, 1))
    return x * np.sqrt(cfg.power_budget / cfg.frame_len)


@dataclass
class MMProblem:
    """Everything the MM driver needs.

    ``radar_targets`` are the (possibly grid-expanded) targets minorized at
    each iterate; ``sets`` are the remaining PDA sets; ``polish_sets`` are
    slightly tightened copies used to restore hard feasibility.
    """

    layout: Layout
    initial: np.ndarray
    radar_targets: list
    sets: list
    polish_sets: list
    cfg: SystemConfig
    checks: object = None          # callable(y) -> dict of residual figures


def objective_value(x, targets, cfg) -> float:
    return min(scnr(x, t, cfg) for t in targets)


REFINE_MAX = 16.0


def run_mm(problem: MMProblem, options: SolveOptions) -> tuple[np.ndarray, SolveReport]:
    """MM outer loop: minorize, solve the convex subproblem by PDA, polish, accept.

    A step is accepted only when it does not lower the true objective (beyond
    a ``1e-9`` relative slack) once a feasible iterate exists.  A rejected step
    tightens the inner tolerances by a factor 4 (up to ``REFINE_MAX``); a
    rejection at the tightest level keeps the previous iterate and ends the loop.
    A rejected candidate that already lies within ``mm_tol`` and ``step_tol``
    of the current iterate ends the loop as converged.
    """
    t0 = time.perf_counter()
    lay, cfg = problem.layout, problem.cfg
    targets = problem.radar_targets
    report = SolveReport()
    y = problem.initial.copy()
    # first feasible anchor: polish the initial point before minorizing
    y, feasible, _ = restore_feasibility(y, problem.polish_sets, problem_tol(options, cfg), options.polish_sweeps)
    x = lay.view(y, "x").copy()
    obj = objective_value(x, targets, cfg)
    lay.view(y, "xi")[0] = -obj
    report.objective_trace.append(obj)
    root_p = np.sqrt(max(cfg.power_budget, 1e-300))
    converged = False
    refine = 1.0
    it = 0
    while it < options.max_outer:
        it += 1
        surrogates = [build_surrogate(x, t, cfg) for t in targets]
        sets = [RadarSet(lay, surrogates)] + list(problem.sets)
        stop = StopRule(options.stop.max_iters, options.stop.residual_tol * root_p / refine,
                        options.stop.step_tol * root_p / refine**2)
        res = pda_solve(y, sets, lay, options.schedule, options.accel, stop, record=options.record_trace)
        report.inner_iters_total += res.iterations
        if options.record_trace:
            report.pda_traces.append(res.trace)
        y_new, ok, _ = restore_feasibility(res.y, problem.polish_sets, problem_tol(options, cfg),
                                           options.polish_sweeps)
        x_new = lay.view(y_new, "x").copy()
        obj_new = objective_value(x_new, targets, cfg)
        step = float(np.linalg.norm(x_new - x))
        report.outer_iters = it
        if not ok and not feasible:
            report.infeasible = True
            y, x, obj = y_new, x_new, obj_new
            lay.view(y, "xi")[0] = -obj
            report.objective_trace.append(obj)
            report.step_trace.append(step)
            continue
        if not ok or obj_new < obj * (1.0 - 1e-9):
            # inexact subproblem: retry with a tighter inner solve, then stop
            report.rejected_steps += 1
            within_tol = (obj - obj_new <= options.mm_tol * abs(obj) and step <= options.step_tol * root_p)
            if ok and feasible and within_tol:
                # the candidate sits inside the stopping tolerances: current iterate is a fixed point
                converged = True
                break
            if refine < REFINE_MAX:
                refine *= 4.0
                continue
            converged = ok or feasible
            break
        rel = abs(obj_new - obj) / max(abs(obj), 1e-300)
        was_feasible, feasible = feasible, True
        report.infeasible = False
        lay.view(y_new, "xi")[0] = -obj_new
        y, x, obj = y_new, x_new, obj_new
        report.objective_trace.append(obj)
        report.step_trace.append(step)
        if was_feasible and rel < options.mm_tol and step <= options.step_tol * root_p:
            converged = True
            break
    if not feasible:
        report.infeasible = True
    report.converged = converged and feasible
    if problem.checks is not None:
        report.residuals = problem.checks(y)
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return y, report


def problem_tol(options: SolveOptions, cfg: SystemConfig) -> float:
    return options.polish_tol * np.sqrt(max(cfg.power_budget, 1.0))


def expand_targets(targets, angles_per_target=None) -> list:
    """One radar target per (target, grid angle); identity without a grid."""
    if angles_per_target is None:
        return list(targets)
    out = []
    for t, grid in zip(targets, angles_per_target):
        out.extend(TargetSpec(float(a), t.rcs_power, t.clutter) for a in grid)
    return out
