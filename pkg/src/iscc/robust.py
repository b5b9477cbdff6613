"""Worst-case ISCC design under bounded CSI error and target-angle uncertainty."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_model import NoiseShapingAux, Scene, SymbolFrame, SystemConfig
from .metrics import Waveform, scnr
from .mm import MMProblem, SolveOptions, expand_targets, initial_waveform, run_mm
from .pda import DecisionPoint
from .projections import PowerSet, SepSet, SocSet
from .psk import POLISH_MARGIN, RotatedSymbols, base_layout, covert_members, noise_sets, shape_checks, user_thresholds
from .qam import _solve_qam


@dataclass(frozen=True)
class UncertaintyModel:
    """Channel-ball radii per user and angle half-widths (radians) per target."""

    eps_user: tuple[float, ...]
    eps_target: tuple[float, ...]
    grid_size: int = 5
    grid_kind: str = "uniform"

    def __post_init__(self):
        if any(e < 0 for e in self.eps_user) or any(e < 0 for e in self.eps_target):
            raise ValueError("uncertainty radii must be nonnegative")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.grid_kind not in ("uniform", "chebyshev"):
            raise ValueError(f"unknown grid kind {self.grid_kind!r}")
        object.__setattr__(self, "eps_user", tuple(float(e) for e in self.eps_user))
        object.__setattr__(self, "eps_target", tuple(float(e) for e in self.eps_target))

    @classmethod
    def uniform(cls, n_users: int, n_targets: int, eps_user: float, eps_target: float, grid_size: int = 5,
                grid_kind: str = "uniform") -> "UncertaintyModel":
        return cls((eps_user,) * n_users, (eps_target,) * n_targets, grid_size, grid_kind)

    def grids(self, scene: Scene) -> list:
        return [angle_grid(t.angle, e, self.grid_size if e > 0 else 1, self.grid_kind)
                for t, e in zip(scene.targets, self.eps_target)]


def angle_grid(theta_hat: float, eps_t: float, size: int, kind: str = "uniform") -> np.ndarray:
    if size < 1:
        raise ValueError("grid size must be >= 1")
    m = np.arange(1, size + 1)
    if kind == "uniform":
        return theta_hat + eps_t * (2 * m - size - 1) / max(size - 1, 1)
    if kind == "chebyshev":
        return theta_hat + eps_t * np.cos((2 * m - 1) * np.pi / (2 * size))
    raise ValueError(f"unknown grid kind {kind!r}")


def worst_case_sep_margin_psk(x_slot, h_hat, s_rot, eps_u: float) -> float:
    """``min_{||dh|| <= eps} Re{(h + dh)^H x s}`` in closed form."""
    x_slot = np.asarray(x_slot)
    return float((np.vdot(h_hat, x_slot) * s_rot).real - eps_u * np.linalg.norm(x_slot))


def worst_case_qam_offset(x_slot, eps_u: float) -> float:
    """Largest shift of either axis of ``(h + dh)^H x`` over the channel ball."""
    return float(eps_u * np.linalg.norm(x_slot))


def _robust_common(scene, cfg, aux, uncertainty, options):
    if len(uncertainty.eps_user) != scene.n_users or len(uncertainty.eps_target) != scene.n_targets:
        raise ValueError("uncertainty model does not match the scene")
    grids = uncertainty.grids(scene)
    steering, owners = covert_members(scene, cfg, aux, options.covert, grids)
    return grids, steering, owners


def _grid_report(report, x, scene, grids, cfg, uncertainty):
    fine = [np.linspace(t.angle - e, t.angle + e, 10 * len(g)) if e > 0 else np.array([t.angle])
            for t, g, e in zip(scene.targets, grids, uncertainty.eps_target)]
    report.extra["grid_min_scnr"] = min(scnr(x, t, cfg) for t in expand_targets(scene.targets, grids))
    report.extra["fine_grid_min_scnr"] = min(scnr(x, t, cfg) for t in expand_targets(scene.targets, fine))
    report.extra["nominal_min_scnr"] = min(scnr(x, t, cfg) for t in scene.targets)


def solve_robust_psk(scene: Scene, uncertainty: UncertaintyModel, cfg: SystemConfig, frame: SymbolFrame,
                     aux: NoiseShapingAux | None, options: SolveOptions = SolveOptions()):
    """Robust PSK design.  Returns ``(waveform, d, r, report)``."""
    if frame.constellation.kind != "psk":
        raise ValueError("solve_robust_psk needs a PSK frame")
    grids, steering, owners = _robust_common(scene, cfg, aux, uncertainty, options)
    layout = base_layout(cfg, scene.n_targets, [("r", (cfg.frame_len,), False)])
    eps = np.asarray(uncertainty.eps_user)
    mu = user_thresholds(cfg, frame.constellation.order_param, options)
    rot = RotatedSymbols.from_frame(frame).stacked()
    soc = SocSet(layout, cfg.frame_len)
    sets = [SepSet(layout, scene.channels, rot, mu, eps), soc]
    sets += noise_sets(layout, steering, owners, aux)
    sets.append(PowerSet(layout, cfg.power_budget))
    polish = [SepSet(layout, scene.channels, rot, mu * (1 + POLISH_MARGIN) + 1e-12, eps), soc]
    polish += noise_sets(layout, steering, owners, aux, 1 - POLISH_MARGIN)
    polish.append(PowerSet(layout, cfg.power_budget * (1 - 1e-9)))

    x0 = initial_waveform(scene.targets, cfg)
    y0 = layout.pack(DecisionPoint(x0, np.zeros(scene.n_targets, complex), 0.0,
                                   {"r": np.linalg.norm(x0, axis=1)}))
    checks = shape_checks(layout, steering, owners, aux, cfg.power_budget)

    def all_checks(y):
        out = checks(y)
        x = layout.view(y, "x")
        nominal = np.einsum("kn,ln->kl", np.conj(scene.channels), x)
        worst = (nominal[None] * rot).real - eps[None, :, None] * np.linalg.norm(x, axis=1)[None, None, :]
        out["worst_sep_margin_min_excess"] = float(np.min(worst - mu[None, :, None]))
        if np.all(mu > 0):
            out["worst_sep_margin_min_ratio"] = float(np.min(worst / mu[None, :, None]))
        out["mu"] = mu.tolist()
        out["soc"] = float(np.max(np.linalg.norm(x, axis=1) - layout.view(y, "r")))
        return out

    problem = MMProblem(layout, y0, expand_targets(scene.targets, grids), sets, polish, cfg, all_checks)
    y, report = run_mm(problem, options)
    x = layout.view(y, "x").copy()
    _grid_report(report, x, scene, grids, cfg, uncertainty)
    report.extra["method"] = "robust"
    return Waveform(x), layout.view(y, "d").copy(), layout.view(y, "r").copy(), report


def solve_robust_qam(scene: Scene, uncertainty: UncertaintyModel, cfg: SystemConfig, frame: SymbolFrame,
                     aux: NoiseShapingAux | None, options: SolveOptions = SolveOptions()):
    """Robust QAM design.  Returns ``(waveform, d, tau, r, report)``.

    The margin boxes shrink by ``eps_k r_l`` on every side; ``r`` is held
    fixed inside the box projection and linked to ``x`` by the cone sets.
    """
    grids, _, _ = _robust_common(scene, cfg, aux, uncertainty, options)
    eps = np.asarray(uncertainty.eps_user)

    def cones(layout):
        soc = SocSet(layout, cfg.frame_len)
        return [soc], [soc]

    w, d, tau, r, report = _solve_qam(scene, cfg, frame, aux, options, eps_user=eps, grids=grids, extra_sets=cones)
    _grid_report(report, np.asarray(w), scene, grids, cfg, uncertainty)
    report.extra["method"] = "robust"
    return w, d, tau, r, report
