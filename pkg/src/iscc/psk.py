"""PSK symbol-level ISCC waveform design."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .array_model import NoiseShapingAux, Scene, SymbolFrame, SystemConfig, steering_vector
from .metrics import Waveform, psk_rotated_margins, q_inv, rotated_symbols
from .mm import MMProblem, SolveOptions, SolveReport, initial_waveform, run_mm
from .pda import DecisionPoint, Layout
from .projections import NoiseShapingSet, PowerSet, SepSet

# polish targets sit this far inside the nominal constraints
POLISH_MARGIN = 1e-6


def qos_threshold_psk(epsilon: float | None, sigma: float, m: int, gamma: float | None = None) -> float:
    """SEP threshold ``mu``: from a target SEP ``epsilon`` or, if given, a linear SNR ``gamma``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if gamma is not None:
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        return float(sigma * np.sin(np.pi / m) * np.sqrt(gamma))
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    if epsilon == 1.0:
        return 0.0
    return float(q_inv(epsilon / 2.0) * sigma / np.sqrt(2.0))


@dataclass(frozen=True, eq=False)
class RotatedSymbols:
    s_tilde: np.ndarray
    s_bar: np.ndarray

    @classmethod
    def from_frame(cls, frame: SymbolFrame) -> "RotatedSymbols":
        st, sb = rotated_symbols(frame.symbols, frame.constellation.order_param)
        return cls(st, sb)

    def stacked(self) -> np.ndarray:
        return np.stack([self.s_tilde, self.s_bar])


def user_thresholds(cfg: SystemConfig, m: int, options: SolveOptions) -> np.ndarray:
    gamma = None if options.gamma_db is None else 10.0 ** (options.gamma_db / 10.0)
    return np.array([qos_threshold_psk(options.epsilon, np.sqrt(s2), m, gamma) for s2 in cfg.user_noise_powers])


def covert_members(scene: Scene, cfg: SystemConfig, aux: NoiseShapingAux | None, covert: bool,
                   grids=None) -> tuple[list, list]:
    """Steering vectors and owning target index for every finite-tolerance noise-shaping set."""
    if not covert or aux is None:
        return [], []
    steering, owners = [], []
    for k, t in enumerate(scene.targets):
        if not np.isfinite(aux.tolerance[k]):
            continue
        angles = [t.angle] if grids is None else grids[k]
        for a in angles:
            steering.append(steering_vector(a, cfg.n_tx, cfg.spacing_ratio))
            owners.append(k)
    return steering, owners


def base_layout(cfg: SystemConfig, n_targets: int, extra=()) -> Layout:
    return Layout([("x", (cfg.frame_len, cfg.n_tx), True), ("d", (n_targets,), True),
                   ("xi", (1,), False), *extra])


def noise_sets(layout, steering, owners, aux, shrink: float = 1.0):
    if not steering:
        return []
    return [NoiseShapingSet(layout, steering, owners, aux.reference, aux.tolerance * shrink)]


def shape_checks(layout, steering, owners, aux, power):
    """Closure reporting the hard-constraint residual figures common to all modes."""
    def check(y):
        x = layout.view(y, "x")
        out = {"power": float(np.vdot(x, x).real), "power_budget": float(power)}
        if steering:
            vals = NoiseShapingSet(layout, steering, owners, aux.reference, aux.tolerance).residual_values(y)
            out["noise_shaping"] = vals.tolist()
            out["noise_tolerance"] = [float(aux.tolerance[k]) for k in owners]
        return out
    return check


def solve_iscc_psk(scene: Scene, cfg: SystemConfig, frame: SymbolFrame | None, aux: NoiseShapingAux | None,
                   options: SolveOptions = SolveOptions()):
    """MM-PDA design of a PSK ISCC waveform.

    Returns ``(waveform, d, report)``.  With ``options.covert`` False the
    noise-shaping sets and ``d`` are dropped (conventional SLP).
    """
    if frame is not None and frame.constellation.kind != "psk":
        raise ValueError("solve_iscc_psk needs a PSK frame")
    n_t = scene.n_targets
    if n_t == 0:
        raise ValueError("at least one target is required")
    layout = base_layout(cfg, n_t)
    steering, owners = covert_members(scene, cfg, aux, options.covert)
    sets, polish = [], []
    mu = None
    if frame is not None and scene.n_users:
        m = frame.constellation.order_param
        mu = user_thresholds(cfg, m, options)
        rot = RotatedSymbols.from_frame(frame).stacked()
        sets.append(SepSet(layout, scene.channels, rot, mu))
        polish.append(SepSet(layout, scene.channels, rot, mu * (1 + POLISH_MARGIN) + 1e-12))
    sets += noise_sets(layout, steering, owners, aux)
    polish += noise_sets(layout, steering, owners, aux, 1 - POLISH_MARGIN)
    sets.append(PowerSet(layout, cfg.power_budget))
    polish.append(PowerSet(layout, cfg.power_budget * (1 - 1e-9)))

    x0 = initial_waveform(scene.targets, cfg)
    y0 = layout.pack(DecisionPoint(x0, np.zeros(n_t, complex), 0.0))
    checks = shape_checks(layout, steering, owners, aux, cfg.power_budget)

    def all_checks(y):
        out = checks(y)
        if mu is not None:
            margins = psk_rotated_margins(layout.view(y, "x"), scene.channels, frame.symbols,
                                          frame.constellation.order_param)
            out["sep_margin_min_excess"] = float(np.min(margins - mu[None, :, None]))
            if np.all(mu > 0):
                out["sep_margin_min_ratio"] = float(np.min(margins / mu[None, :, None]))
            out["mu"] = mu.tolist()
        return out

    problem = MMProblem(layout, y0, list(scene.targets), sets, polish, cfg, all_checks)
    y, report = run_mm(problem, options)
    d = layout.view(y, "d").copy()
    report.extra["method"] = "iscc" if options.covert else "slp"
    return Waveform(layout.view(y, "x").copy()), d, report


def slp_options(options: SolveOptions) -> SolveOptions:
    return replace(options, covert=False)
