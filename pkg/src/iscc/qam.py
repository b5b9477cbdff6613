"""Square-QAM symbol-level ISCC waveform design with jointly optimized dynamic ranges."""
from __future__ import annotations

import numpy as np

from .array_model import Constellation, NoiseShapingAux, Scene, SymbolFrame, SystemConfig
from .metrics import Waveform, q_inv
from .mm import MMProblem, SolveOptions, initial_waveform, run_mm
from .pda import DecisionPoint
from .projections import CouplingSet, PowerSet, QamBounds, QamMarginSet
from .psk import POLISH_MARGIN, base_layout, covert_members, noise_sets, shape_checks


def qam_thresholds(epsilon: float, sigma: float) -> tuple[float, float]:
    """Interior and edge margins ``(alpha, beta)`` meeting per-symbol SEP ``epsilon``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    root = 1.0 - np.sqrt(1.0 - epsilon)
    scale = sigma / np.sqrt(2.0)
    return float(scale * q_inv(root / 2.0)), float(scale * q_inv(root))


def qam_bounds(constellation: Constellation, epsilon: float, sigmas, symbols: np.ndarray):
    """Margin boxes for a symbol frame.

    Returns ``(bounds, alpha, beta)`` with one ``alpha``/``beta`` per user.
    Interior levels get ``alpha`` on both sides; the outermost levels only
    get ``beta`` on their inner side.
    """
    if constellation.kind != "qam":
        raise ValueError("qam_bounds needs a QAM constellation")
    symbols = np.atleast_2d(np.asarray(symbols))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (symbols.shape[0],))
    ab = np.array([qam_thresholds(epsilon, s) for s in sigmas])
    alpha, beta = ab[:, 0], ab[:, 1]
    top = constellation.max_level
    levels = np.stack([symbols.real, symbols.imag], axis=-1)
    levels = np.rint(levels)
    interior = np.abs(levels) < top
    al = alpha[:, None, None]
    be = beta[:, None, None]
    a = np.where(interior, al, np.where(levels > 0, be, 0.0))
    c = np.where(interior, al, np.where(levels < 0, be, 0.0))
    has_a = interior | (levels > 0)
    has_c = interior | (levels < 0)
    a = np.broadcast_to(a, levels.shape).copy()
    c = np.broadcast_to(c, levels.shape).copy()
    return QamBounds(levels, a, c, has_a, has_c), alpha, beta


def qam_layout(cfg: SystemConfig, n_targets: int, n_users: int, robust: bool = False):
    extra = [("upsilon", (cfg.frame_len, n_users), True), ("tau", (n_users, 2), False)]
    if robust:
        extra.append(("r", (cfg.frame_len,), False))
    return base_layout(cfg, n_targets, extra)


def channel_matrix(scene: Scene) -> np.ndarray:
    """``H`` with rows ``h_k^H`` so that ``upsilon_l = H x_l``."""
    return np.conj(scene.channels)


def initial_dynamic_range(x0: np.ndarray, hmat: np.ndarray, bounds: QamBounds) -> np.ndarray:
    """Smallest per-axis ``tau`` that makes the margin boxes non-empty."""
    tau = np.zeros((hmat.shape[0], 2))
    both = bounds.has_a & bounds.has_c
    span = np.where(both, 0.5 * (bounds.a + bounds.c), 0.0)
    tau[...] = np.maximum(span.max(axis=1), 0.0)
    return tau


def solve_iscc_qam(scene: Scene, cfg: SystemConfig, frame: SymbolFrame, aux: NoiseShapingAux | None,
                   options: SolveOptions = SolveOptions()):
    """MM-PDA design for QAM frames.  Returns ``(waveform, d, tau, report)``."""
    return _solve_qam(scene, cfg, frame, aux, options)


def _solve_qam(scene, cfg, frame, aux, options, eps_user=None, grids=None, extra_sets=None):
    if frame is not None and frame.constellation.kind != "qam":
        raise ValueError("QAM solver needs a QAM frame")
    if scene.n_users == 0:
        # no margin boxes: the design reduces to the user-free PSK problem
        from .psk import solve_iscc_psk
        w, d, report = solve_iscc_psk(scene, cfg, None, aux, options)
        out = [w, d, np.zeros((0, 2))]
        if eps_user is not None:
            out.append(np.linalg.norm(np.asarray(w), axis=1))
        return (*out, report)
    if frame is None:
        raise ValueError("QAM solver needs a symbol frame when users are present")
    n_t, n_u = scene.n_targets, scene.n_users
    robust = eps_user is not None
    layout = qam_layout(cfg, n_t, n_u, robust)
    sig = np.sqrt(np.asarray(cfg.user_noise_powers))
    bounds, alpha, beta = qam_bounds(frame.constellation, options.epsilon, sig, frame.symbols)
    tight = QamBounds(bounds.levels, bounds.a * (1 + POLISH_MARGIN) + 1e-12, bounds.c * (1 + POLISH_MARGIN) + 1e-12,
                      bounds.has_a, bounds.has_c)
    hmat = channel_matrix(scene)
    steering, owners = covert_members(scene, cfg, aux, options.covert, grids)
    margin = QamMarginSet(layout, bounds, eps_user)
    coupling = CouplingSet(layout, hmat, cfg.frame_len)
    sets = [margin, coupling] + noise_sets(layout, steering, owners, aux) + [PowerSet(layout, cfg.power_budget)]
    polish = [QamMarginSet(layout, tight, eps_user), coupling] + noise_sets(layout, steering, owners, aux,
                                                                          1 - POLISH_MARGIN)
    if extra_sets is not None:
        s_main, s_polish = extra_sets(layout)
        sets += s_main
        polish += s_polish
    polish.append(PowerSet(layout, cfg.power_budget * (1 - 1e-9)))

    x0 = initial_waveform(scene.targets, cfg)
    aux_blocks = {"upsilon": x0 @ hmat.T, "tau": initial_dynamic_range(x0, hmat, bounds)}
    if robust:
        aux_blocks["r"] = np.linalg.norm(x0, axis=1)
    y0 = layout.pack(DecisionPoint(x0, np.zeros(n_t, complex), 0.0, aux_blocks))
    checks = shape_checks(layout, steering, owners, aux, cfg.power_budget)

    def all_checks(y):
        out = checks(y)
        x = layout.view(y, "x")
        tau = layout.view(y, "tau")
        received = (x @ hmat.T).T
        used = bounds if not robust else bounds.tightened(eps_user[:, None] * np.linalg.norm(x, axis=1)[None, :])
        out["qam_box_min_slack"] = float(np.min(used.slack(received, tau)))
        out["coupling"] = float(np.max(np.abs(layout.view(y, "upsilon") - x @ hmat.T)))
        out["alpha"] = alpha.tolist()
        out["beta"] = beta.tolist()
        return out

    targets = list(scene.targets)
    if grids is not None:
        from .mm import expand_targets
        targets = expand_targets(scene.targets, grids)
    problem = MMProblem(layout, y0, targets, sets, polish, cfg, all_checks)
    y, report = run_mm(problem, options)
    tau = layout.view(y, "tau").copy()
    report.extra["method"] = "iscc" if options.covert else "slp"
    report.extra["tau"] = tau.tolist()
    d = layout.view(y, "d").copy()
    out = [Waveform(layout.view(y, "x").copy()), d, tau]
    if robust:
        out.append(layout.view(y, "r").copy())
    return (*out, report)
