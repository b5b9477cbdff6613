"""Proximal distance algorithm over a registry of projection sets.

The engine minimises ``xi`` over the intersection of the registered sets by
alternating an averaged projection step with the proximal map of the linear
objective, raising the penalty ``rho`` on a fixed schedule.  Points live in a
flat float64 vector described by a :class:`Layout`; complex blocks are stored
interleaved so the real Euclidean metric equals the complex one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class Layout:
    """Named blocks of a flat decision vector.

    Complex blocks are placed first so that their views stay 16-byte aligned.
    """

    def __init__(self, blocks: Sequence[tuple[str, tuple[int, ...], bool]]):
        ordered = [b for b in blocks if b[2]] + [b for b in blocks if not b[2]]
        self.blocks = {}
        off = 0
        for name, shape, is_complex in ordered:
            n = int(np.prod(shape)) * (2 if is_complex else 1)
            self.blocks[name] = (slice(off, off + n), tuple(shape), is_complex)
            off += n
        self.size = off

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def slice(self, name: str) -> slice:
        return self.blocks[name][0]

    def view(self, y: np.ndarray, name: str) -> np.ndarray:
        sl, shape, is_complex = self.blocks[name]
        v = y[sl]
        if is_complex:
            v = v.view(np.complex128)
        return v.reshape(shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def pack(self, point: "DecisionPoint") -> np.ndarray:
        y = self.zeros()
        for name in self.blocks:
            self.view(y, name)[...] = point.get(name)
        return y

    def unpack(self, y: np.ndarray) -> "DecisionPoint":
        aux = {n: self.view(y, n).copy() for n in self.blocks if n not in ("x", "d", "xi")}
        x = self.view(y, "x").copy() if "x" in self else np.zeros(0, complex)
        d = self.view(y, "d").copy() if "d" in self else np.zeros(0, complex)
        xi = float(self.view(y, "xi")[0]) if "xi" in self else 0.0
        return DecisionPoint(x, d, xi, aux)


@dataclass
class DecisionPoint:
    x: np.ndarray
    d: np.ndarray
    xi: float
    aux: dict = field(default_factory=dict)

    def get(self, name: str):
        if name == "x":
            return self.x
        if name == "d":
            return self.d
        if name == "xi":
            return self.xi
        return self.aux[name]


class ProjectionSet:
    """A family of ``count`` convex sets sharing one projection rule.

    Subclasses implement :meth:`project` for a single member; batched
    families override :meth:`accumulate` with a vectorised version.  A
    projection must copy every component outside its scope unchanged and
    must not mutate its input.
    """

    label = "set"
    count = 1

    def project(self, y: np.ndarray, member: int = 0) -> np.ndarray:
        raise NotImplementedError

    def accumulate(self, y: np.ndarray, out: np.ndarray) -> np.ndarray:
        """Add ``sum_i (P_i(y) - y)`` into ``out``; return per-member distances."""
        dist = np.empty(self.count)
        for i in range(self.count):
            delta = self.project(y, i) - y
            out += delta
            dist[i] = np.linalg.norm(delta)
        return dist

    def residuals(self, y: np.ndarray) -> np.ndarray:
        return self.accumulate(y, np.zeros_like(y))

    def project_cyclic(self, y: np.ndarray) -> np.ndarray:
        for i in range(self.count):
            y = self.project(y, i)
        return y


@dataclass(frozen=True)
class PenaltySchedule:
    rho_init: float = 1.0
    growth: float = 1.5
    period: int = 10
    rho_max: float = 1e6
    adaptive: bool = False

    def __post_init__(self):
        if self.rho_init <= 0 or self.growth <= 1 or self.period < 1 or self.rho_max < self.rho_init:
            raise ValueError("invalid penalty schedule")


@dataclass(frozen=True)
class StopRule:
    max_iters: int = 5000
    residual_tol: float = 1e-5
    step_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1 or self.residual_tol <= 0 or self.step_tol <= 0:
            raise ValueError("stopping thresholds must be positive")


@dataclass
class PDAResult:
    y: np.ndarray
    converged: bool
    infeasible: bool
    iterations: int
    rho: float
    max_residual: float
    trace: list = field(default_factory=list)   # (iter, xi, rho, max_residual, step_norm)

    def write_trace(self, path) -> None:
        write_trace_csv(path, self.trace)


def write_trace_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "xi", "rho", "max_residual", "step_norm"])
        for row in rows:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _set_count(sets) -> int:
    n = sum(s.count for s in sets)
    if n == 0:
        raise ValueError("no projection sets registered")
    return n


def _averaged(y, sets, n_sets):
    acc = np.zeros_like(y)
    dists = [s.accumulate(y, acc) for s in sets]
    dist = np.concatenate(dists) if dists else np.zeros(0)
    return y + acc / n_sets, dist


def penalized_objective(y: np.ndarray, sets, rho: float, layout: Layout) -> float:
    if rho <= 0:
        raise ValueError("rho must be positive")
    n = _set_count(sets)
    dist = np.concatenate([s.residuals(y) for s in sets])
    return float(layout.view(y, "xi")[0] + rho / (2 * n) * np.sum(dist**2))


def pda_step(y: np.ndarray, sets, rho: float, layout: Layout) -> np.ndarray:
    """Averaged projection followed by the proximal map of ``xi``."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    z, _ = _averaged(y, sets, _set_count(sets))
    layout.view(z, "xi")[0] -= 1.0 / rho
    return z


def pda_solve(initial, sets, layout: Layout, schedule: PenaltySchedule = PenaltySchedule(),
              accel: bool = True, stop: StopRule = StopRule(), alpha: float = 3.0,
              record: bool = True) -> PDAResult:
    """Run the proximal distance iteration until feasible and stationary.

    With ``schedule.adaptive`` the penalty only grows while some set is
    violated by more than ``residual_tol``, so a feasible iterate keeps
    descending at the current step ``1/rho``.

    With ``accel`` the projections are taken at the Nesterov extrapolation
    ``y + (k-1)/(k+alpha) (y - y_prev)``; momentum restarts whenever the
    penalized objective measured at the projection point increases.
    """
    y = layout.pack(initial) if isinstance(initial, DecisionPoint) else np.array(initial, dtype=float)
    n_sets = _set_count(sets)
    xi_sl = layout.slice("xi")
    rho = schedule.rho_init
    y_prev = y.copy()
    k_mom = 0
    f_prev = np.inf
    trace = []
    res_hist = []
    max_res = np.inf
    converged = False
    it = 0
    for it in range(1, stop.max_iters + 1):
        if accel and k_mom > 0:
            zeta = (k_mom - 1) / (k_mom + alpha)
            probe = y + zeta * (y - y_prev)
        else:
            probe = y
        z, dist = _averaged(probe, sets, n_sets)
        max_res = float(dist.max()) if dist.size else 0.0
        z[xi_sl] -= 1.0 / rho
        step = float(np.linalg.norm(z - y))
        if accel:
            f_now = probe[xi_sl][0] + rho / (2 * n_sets) * float(dist @ dist)
            if f_now > f_prev:
                k_mom = 0
            else:
                k_mom += 1
            f_prev = f_now
        y_prev, y = y, z
        if record:
            trace.append((it, float(y[xi_sl][0]), rho, max_res, step))
        res_hist.append(max_res)
        if max_res <= stop.residual_tol and step <= stop.step_tol:
            converged = True
            break
        grow = max_res > stop.residual_tol or not schedule.adaptive
        if it % schedule.period == 0 and rho < schedule.rho_max and grow:
            rho = min(rho * schedule.growth, schedule.rho_max)
            f_prev = np.inf
    infeasible = False
    if not converged and rho >= schedule.rho_max and len(res_hist) >= 200:
        recent = np.asarray(res_hist[-200:])
        infeasible = bool(recent.min() > stop.residual_tol and recent.min() > 0.99 * recent.max())
    return PDAResult(y, converged, infeasible, it, rho, max_res, trace)


def max_residual(y: np.ndarray, sets) -> float:
    vals = [s.residuals(y) for s in sets]
    vals = [v for v in vals if v.size]
    return float(max(v.max() for v in vals)) if vals else 0.0


def restore_feasibility(y: np.ndarray, sets, tol: float, max_sweeps: int = 20000) -> tuple[np.ndarray, bool, int]:
    """Cyclic projections onto ``sets`` until every distance is below ``tol``.

    Used to turn an approximately feasible PDA output into a point that
    satisfies the hard constraints to working precision.
    """
    y = np.array(y, dtype=float)
    for sweep in range(max_sweeps):
        if max_residual(y, sets) <= tol:
            return y, True, sweep
        for s in sets:
            y = s.project_cyclic(y)
    return y, max_residual(y, sets) <= tol, max_sweeps
