"""Baselines, Monte-Carlo evaluation and experiment orchestration."""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .array_model import (Constellation, NoiseShapingAux, Scene, SymbolFrame, SystemConfig, TargetSpec, UserSpec,
                          draw_noise_reference, draw_symbol_frame, rng_stream, sample_rician_channels,
                          steering_vector)
from .metrics import beampattern, js_divergence, min_scnr, noise_shaping_residual, wilson_interval
from .mm import SolveOptions, SolveReport
from .pda import write_trace_csv
from .psk import solve_iscc_psk, user_thresholds
from .qam import qam_thresholds, solve_iscc_qam
from .robust import UncertaintyModel, solve_robust_psk, solve_robust_qam

METHODS = ("iscc", "slp", "bf")
SWEEP_VARIABLES = ("gamma_db", "epsilon", "delta", "n_tx", "eps_user", "eps_target_deg")
METRIC_COLUMNS = ("point", "method", "sweep_value", "frame_hash", "min_scnr", "ser_user_mean", "ser_user_ci_lo",
                  "ser_user_ci_hi", "ser_eve_min", "jsd", "eve_gauss_jsd", "noise_residual_max", "feasible")


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

DESK_SCENE = {
    "n_tx": 8, "n_rx": 8, "frame_len": 16, "power": 400.0, "rx_noise_power": 1.0, "spacing_ratio": 0.5,
    "targets": [
        {"angle_deg": -30.0, "rcs": 1.0,
         "clutter": [{"angle_deg": -50.0, "power": 1.0}, {"angle_deg": 0.0, "power": 1.0},
                     {"angle_deg": 50.0, "power": 1.0}]},
        {"angle_deg": 30.0, "rcs": 1.0,
         "clutter": [{"angle_deg": -50.0, "power": 1.0}, {"angle_deg": 0.0, "power": 1.0},
                     {"angle_deg": 50.0, "power": 1.0}]},
    ],
    "users": [
        {"angle_deg": -25.0, "rician_factor": 10.0, "n_paths": 4, "noise_power": 1.0},
        {"angle_deg": 25.0, "rician_factor": 10.0, "n_paths": 4, "noise_power": 1.0},
    ],
}

# the full-size geometry differs only in the array size
WIDE_SCENE = dict(DESK_SCENE, n_tx=15, n_rx=15)


@dataclass
class ExperimentPlan:
    """One experiment: a scene, a sweep and the methods to compare.

    ``frames`` independent symbol frames are designed per (point, method);
    each is reused for ``ceil(trials / (frames L))`` noise draws so every user
    sees at least ``trials`` symbols.
    """

    scene: dict = field(default_factory=lambda: json.loads(json.dumps(DESK_SCENE)))
    seed: int = 1
    constellation: str = "qpsk"
    epsilon: float = 1e-2
    gamma_db: float | None = None
    delta: float = 0.1
    sweep_variable: str | None = None
    sweep_values: list = field(default_factory=list)
    methods: list = field(default_factory=lambda: ["iscc"])
    frames: int = 2
    trials: int = 100000
    eve_noise_power: float = 1.0
    uncertainty: dict | None = None
    beampattern_grid_deg: list = field(default_factory=lambda: [-90.0, 90.0, 1.0])
    constellation_dump: int = 4096
    solver: dict = field(default_factory=dict)
    name: str = "experiment"

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.sweep_variable is not None and self.sweep_variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.sweep_variable!r}")
        if self.frames < 1 or self.trials < 1:
            raise ValueError("frames and trials must be >= 1")
        Constellation.from_name(self.constellation)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        data = dict(data)
        sweep = data.pop("sweep", None)
        if sweep:
            data["sweep_variable"] = sweep["variable"]
            data["sweep_values"] = list(sweep["values"])
        if data.get("scene") == "desk":
            data["scene"] = json.loads(json.dumps(DESK_SCENE))
        elif data.get("scene") == "wide":
            data["scene"] = json.loads(json.dumps(WIDE_SCENE))
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown plan fields {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["sweep"] = {"variable": out.pop("sweep_variable"), "values": out.pop("sweep_values")}
        return out

    def points(self) -> list:
        if self.sweep_variable is None:
            return [None]
        return list(self.sweep_values)

    def effective_seed(self) -> int:
        env = os.environ.get("ISCC_SEED")
        return int(env) if env not in (None, "") else int(self.seed)


@dataclass
class PointSetup:
    cfg: SystemConfig
    scene: Scene
    constellation: Constellation
    options: SolveOptions
    delta: float
    uncertainty: UncertaintyModel | None


def build_scene(desc: dict, seed: int) -> tuple[SystemConfig, Scene]:
    users = desc.get("users", [])
    cfg = SystemConfig(int(desc["n_tx"]), int(desc.get("n_rx", desc["n_tx"])), int(desc["frame_len"]),
                       float(desc["power"]), float(desc.get("spacing_ratio", 0.5)),
                       float(desc.get("rx_noise_power", 1.0)),
                       tuple(float(u.get("noise_power", 1.0)) for u in users))
    targets = tuple(TargetSpec(np.deg2rad(t["angle_deg"]), float(t.get("rcs", 1.0)),
                               tuple((np.deg2rad(c["angle_deg"]), float(c["power"])) for c in t.get("clutter", [])))
                    for t in desc["targets"])
    specs = [UserSpec(np.deg2rad(u["angle_deg"]), float(u.get("rician_factor", 10.0)), int(u.get("n_paths", 4)))
             for u in users]
    channels = sample_rician_channels(cfg, specs, rng_stream(seed, "channels")) if specs else None
    return cfg, Scene(targets, channels)


def solver_options(settings: dict) -> dict:
    """Plan ``solver`` entries as ``SolveOptions`` keywords; nested ``stop``/``schedule`` dicts become objects."""
    opts = dict(settings)
    defaults = SolveOptions()
    unknown = set(opts) - set(SolveOptions.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown solver settings {sorted(unknown)}")
    for key in ("stop", "schedule"):
        if isinstance(opts.get(key), dict):
            base = getattr(defaults, key)
            bad = set(opts[key]) - set(base.__dataclass_fields__)
            if bad:
                raise ValueError(f"unknown {key} settings {sorted(bad)}")
            opts[key] = replace(base, **opts[key])
    return opts


def point_setup(plan: ExperimentPlan, value, seed: int) -> PointSetup:
    desc = json.loads(json.dumps(plan.scene))
    var = plan.sweep_variable
    if var == "n_tx":
        desc["n_tx"] = int(value)
        desc["n_rx"] = int(value)
    cfg, scene = build_scene(desc, seed)
    opts = solver_options(plan.solver)
    epsilon, gamma_db, delta = plan.epsilon, plan.gamma_db, plan.delta
    if var == "epsilon":
        epsilon, gamma_db = float(value), None
    elif var == "gamma_db":
        gamma_db = float(value)
    elif var == "delta":
        delta = float(value)
    options = SolveOptions(epsilon=epsilon, gamma_db=gamma_db, **opts)
    unc = None
    if plan.uncertainty is not None or var in ("eps_user", "eps_target_deg"):
        u = dict(plan.uncertainty or {})
        eu = float(value) if var == "eps_user" else float(u.get("eps_user", 0.0))
        et = float(value) if var == "eps_target_deg" else float(u.get("eps_target_deg", 0.0))
        unc = UncertaintyModel.uniform(scene.n_users, scene.n_targets, eu, np.deg2rad(et),
                                       int(u.get("grid_size", 5)), u.get("grid_kind", "uniform"))
    return PointSetup(cfg, scene, Constellation.from_name(plan.constellation), options, delta, unc)


def frame_inputs(setup: PointSetup, seed: int, f: int):
    cfg, scene = setup.cfg, setup.scene
    frame = draw_symbol_frame(setup.constellation, scene.n_users, cfg.frame_len, rng_stream(seed, "symbols", f))
    ref = draw_noise_reference(scene.n_targets, cfg.frame_len, rng_stream(seed, "noise_reference", f))
    return frame, NoiseShapingAux.create(ref, setup.delta)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def slp_baseline(scene: Scene, cfg: SystemConfig, frame: SymbolFrame, options: SolveOptions = SolveOptions()):
    """Symbol-level precoding without noise shaping.  Returns ``(waveform, report)`` (plus ``tau`` for QAM)."""
    opts = replace(options, covert=False)
    if frame.constellation.kind == "psk":
        w, _, report = solve_iscc_psk(scene, cfg, frame, None, opts)
        return w, report
    w, _, tau, report = solve_iscc_qam(scene, cfg, frame, None, opts)
    return w, tau, report


@dataclass(frozen=True, eq=False)
class BFPrecoder:
    """Block-level linear precoder ``x_l = W s_l + w_r sum_k s_{k,l} / sqrt(K_U)``."""

    user_beams: np.ndarray       # (N_t, K_U)
    radar_beam: np.ndarray       # (N_t,)
    gains: np.ndarray            # effective real gain h_k^H w_k seen by each user

    def apply(self, symbols: np.ndarray) -> np.ndarray:
        s = np.asarray(symbols)
        radar = self.radar_beam[None, :] * (s.sum(axis=0) / np.sqrt(s.shape[0]))[:, None]
        return (self.user_beams @ s).T + radar


def bf_gains(cfg: SystemConfig, constellation: Constellation, options: SolveOptions) -> np.ndarray:
    """Per-user effective gain that meets the QoS target with the nominal decision regions."""
    sig = np.sqrt(np.asarray(cfg.user_noise_powers))
    if options.gamma_db is not None:
        gamma = 10.0 ** (options.gamma_db / 10.0)
        return np.sqrt(gamma * sig**2 / constellation.mean_energy)
    if constellation.kind == "psk":
        mu = user_thresholds(cfg, constellation.order_param, options)
        return mu / np.sin(np.pi / constellation.order_param)
    return np.array([qam_thresholds(options.epsilon, s)[0] for s in sig])


def bf_baseline(scene: Scene, cfg: SystemConfig, constellation: Constellation,
                options: SolveOptions = SolveOptions()):
    """Heuristic block beamformer: scaled zero-forcing plus a null-space radar beam.

    User ``k`` receives ``g_k s_k`` with ``g_k`` set by the QoS target; the
    remaining average power goes to the principal direction of the summed
    target responses projected onto the null space of all user channels.
    """
    report = SolveReport()
    report.extra["method"] = "bf"
    report.extra["label"] = "heuristic baseline"
    hmat = np.conj(scene.channels)                     # rows h_k^H
    n_u = hmat.shape[0]
    if n_u > cfg.n_tx:
        raise ValueError("zero forcing needs K_U <= N_t")
    gains = bf_gains(cfg, constellation, options)
    zf = hmat.conj().T @ np.linalg.inv(hmat @ hmat.conj().T)
    user_beams = zf * gains[None, :]
    es = constellation.mean_energy
    slot_budget = cfg.power_budget / cfg.frame_len
    user_power = es * float(np.sum(np.abs(user_beams) ** 2))
    residual = slot_budget - user_power
    if residual < 0:
        report.infeasible = True
        report.residuals = {"zf_power": user_power * cfg.frame_len, "power_budget": cfg.power_budget}
        return BFPrecoder(user_beams, np.zeros(cfg.n_tx, complex), gains), report
    _, _, vh = np.linalg.svd(hmat)
    null = vh[n_u:].conj().T                            # (N_t, N_t - K_U)
    steer = np.stack([steering_vector(t.angle, cfg.n_tx, cfg.spacing_ratio) for t in scene.targets], axis=1)
    proj = null.conj().T @ steer
    u, _, _ = np.linalg.svd(proj @ proj.conj().T)
    radar_dir = null @ u[:, 0] if null.shape[1] else np.zeros(cfg.n_tx, complex)
    radar_beam = radar_dir * np.sqrt(residual / es) if null.shape[1] else radar_dir
    report.converged = True
    report.residuals = {"power": cfg.frame_len * (user_power + es * float(np.vdot(radar_beam, radar_beam).real)),
                        "power_budget": cfg.power_budget,
                        "radar_leakage": float(np.max(np.abs(hmat @ radar_beam))) if n_u else 0.0}
    return BFPrecoder(user_beams, radar_beam, gains), report


# ---------------------------------------------------------------------------
# Monte-Carlo evaluation
# ---------------------------------------------------------------------------

@dataclass
class SerEstimate:
    errors: np.ndarray           # per user
    trials: np.ndarray
    samples: list                # per user: received samples (flattened)

    @property
    def rates(self) -> np.ndarray:
        return self.errors / np.maximum(self.trials, 1)

    @property
    def mean(self) -> float:
        return float(self.errors.sum() / max(self.trials.sum(), 1))

    def interval(self) -> tuple[float, float]:
        return wilson_interval(int(self.errors.sum()), int(self.trials.sum()))


def demodulate(y: np.ndarray, constellation: Constellation, scale=None) -> np.ndarray:
    """Nearest-point decisions; QAM samples are first divided per axis by ``scale = (re, im)``."""
    if constellation.kind == "qam" and scale is not None:
        y = y.real / scale[0] + 1j * y.imag / scale[1]
    return constellation.demodulate(y)


def draws_per_frame(trials: int, n_frames: int, frame_len: int) -> int:
    return int(np.ceil(trials / (n_frames * frame_len)))


def monte_carlo_ser(waveforms, channels, noise_powers, frames, trials: int, rng, scales=None) -> SerEstimate:
    """User SER with every designed frame reused for fresh noise draws.

    ``waveforms[f]`` is ``(L, N_t)``; ``scales[f]`` holds per-user QAM axis
    scales ``(K_U, 2)`` (``None`` for PSK).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n_u = channels.shape[0]
    sig = np.sqrt(np.asarray(noise_powers, dtype=float))
    draws = draws_per_frame(trials, len(waveforms), frames[0].frame_len)
    errors = np.zeros(n_u, dtype=np.int64)
    counts = np.zeros(n_u, dtype=np.int64)
    samples = [[] for _ in range(n_u)]
    for f, (x, frame) in enumerate(zip(waveforms, frames)):
        clean = np.conj(channels) @ np.asarray(x).T            # (K, L)
        shape = (n_u, clean.shape[1], draws)
        noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (sig[:, None, None] / np.sqrt(2))
        y = clean[:, :, None] + noise
        for k in range(n_u):
            sc = None if scales is None or scales[f] is None else scales[f][k]
            dec = demodulate(y[k], frame.constellation, sc)
            errors[k] += int(np.count_nonzero(np.abs(dec - frame.symbols[k][:, None]) > 1e-9))
            counts[k] += y[k].size
            samples[k].append(y[k])
    return SerEstimate(errors, counts, [np.concatenate([s.reshape(-1) for s in ss]) for ss in samples])


def genie_gain(observed: np.ndarray, symbols: np.ndarray) -> complex:
    """Least-squares scalar ``g`` minimising ``sum |g z - s|^2``."""
    den = float(np.vdot(observed, observed).real)
    if den <= 0:
        return 0j
    return complex(np.vdot(observed, symbols) / den)


@dataclass
class EveEstimate:
    ser: np.ndarray              # (K_T, K_U)
    trials: int
    samples: dict                # (t, k) -> equalized samples

    @property
    def per_target(self) -> np.ndarray:
        return self.ser.mean(axis=1)

    @property
    def best(self) -> float:
        return float(self.per_target.min())


def eavesdropper_eval(waveforms, target_angles, eve_noise_power: float, frames, trials: int, rng,
                      cfg: SystemConfig) -> EveEstimate:
    """Genie-aided eavesdroppers at every target, one per intended user.

    One least-squares gain is fitted over all observed samples of a
    (target, user) pair, the most favourable fixed equalizer for the eavesdropper.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    draws = draws_per_frame(trials, len(waveforms), frames[0].frame_len)
    n_t, n_u = len(target_angles), frames[0].n_users
    obs = [[] for _ in range(n_t)]
    syms = []
    for x, frame in zip(waveforms, frames):
        for t, ang in enumerate(target_angles):
            a = steering_vector(ang, cfg.n_tx, cfg.spacing_ratio)
            clean = np.asarray(x) @ a.conj()                    # (L,)
            shape = (clean.size, draws)
            noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(eve_noise_power / 2)
            obs[t].append((clean[:, None] + noise).reshape(-1))
        syms.append(np.repeat(frame.symbols, draws, axis=1))
    symbols = np.concatenate(syms, axis=1)                    # (K_U, n)
    const = frames[0].constellation
    ser = np.zeros((n_t, n_u))
    samples = {}
    for t in range(n_t):
        z = np.concatenate(obs[t])
        for k in range(n_u):
            g = genie_gain(z, symbols[k])
            if g == 0:
                ser[t, k] = 1.0 - 1.0 / const.size
                samples[(t, k)] = np.zeros_like(z)
                continue
            eq = g * z
            dec = const.demodulate(eq)
            ser[t, k] = float(np.mean(np.abs(dec - symbols[k]) > 1e-9))
            samples[(t, k)] = eq
    return EveEstimate(ser, symbols.shape[1], samples)


def equalize_user(samples: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    return genie_gain(samples, symbols) * samples


def gaussian_reference_jsd(samples: np.ndarray, rng) -> float:
    """JSD between samples and a circular Gaussian of matched mean and power."""
    s = np.asarray(samples).ravel()
    m = s.mean()
    var = float(np.mean(np.abs(s - m) ** 2))
    g = m + np.sqrt(var / 2) * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
    return js_divergence(s, g)


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------

def design_frame(method: str, setup: PointSetup, frame: SymbolFrame, aux: NoiseShapingAux):
    """Returns ``(waveform (L, N_t), scales or None, d or None, report)``."""
    cfg, scene, opts = setup.cfg, setup.scene, setup.options
    qam = frame.constellation.kind == "qam"
    if method == "bf":
        pre, report = bf_baseline(scene, cfg, frame.constellation, opts)
        x = pre.apply(frame.symbols)
        scales = np.repeat(pre.gains[:, None], 2, axis=1) if qam else None
        return x, scales, None, report
    if method == "slp":
        opts = replace(opts, covert=False)
    robust = setup.uncertainty is not None
    if qam:
        if robust:
            w, d, tau, _, report = solve_robust_qam(scene, setup.uncertainty, cfg, frame, aux, opts)
        else:
            w, d, tau, report = solve_iscc_qam(scene, cfg, frame, aux, opts)
        return np.asarray(w), tau, d, report
    if robust:
        w, d, _, report = solve_robust_psk(scene, setup.uncertainty, cfg, frame, aux, opts)
    else:
        w, d, report = solve_iscc_psk(scene, cfg, frame, aux, opts)
    return np.asarray(w), None, d, report


def run_job(plan: ExperimentPlan, point: int, method: str, seed: int) -> dict:
    """Design and evaluate one (sweep point, method) pair; pure function of its inputs."""
    value = plan.points()[point]
    setup = point_setup(plan, value, seed)
    cfg, scene = setup.cfg, setup.scene
    frames, auxes = zip(*[frame_inputs(setup, seed, f) for f in range(plan.frames)])
    waveforms, scales, ds, reports = [], [], [], []
    for frame, aux in zip(frames, auxes):
        x, sc, d, rep = design_frame(method, setup, frame, aux)
        waveforms.append(x)
        scales.append(sc)
        ds.append(d)
        reports.append(rep)
    feasible = all(not r.infeasible for r in reports)
    min_gamma = float(min(min_scnr(x, scene, cfg) for x in waveforms))
    ser = monte_carlo_ser(waveforms, scene.channels, cfg.user_noise_powers, frames, plan.trials,
                          rng_stream(seed, "mc_noise", f_key(point), 0), scales)
    eve = eavesdropper_eval(waveforms, [t.angle for t in scene.targets], plan.eve_noise_power, frames, plan.trials,
                            rng_stream(seed, "mc_noise", f_key(point), 1), cfg)
    sym_user = [np.concatenate([np.repeat(fr.symbols[k], draws_per_frame(plan.trials, plan.frames, cfg.frame_len))
                                for fr in frames]) for k in range(scene.n_users)]
    user_eq = [equalize_user(ser.samples[k], sym_user[k]) for k in range(scene.n_users)]
    jsd_pairs = [js_divergence(user_eq[k], eve.samples[(t, k)])
                 for t in range(scene.n_targets) for k in range(scene.n_users)]
    grng = rng_stream(seed, "mc_noise", f_key(point), 2)
    gauss = [gaussian_reference_jsd(eve.samples[(t, k)], grng)
             for t in range(scene.n_targets) for k in range(scene.n_users)]
    noise_res = 0.0
    for x, d, aux in zip(waveforms, ds, auxes):
        if d is not None and method == "iscc":
            for k, t in enumerate(scene.targets):
                noise_res = max(noise_res, noise_shaping_residual(x, t.angle, aux.reference[k], d[k], cfg))
    lo, hi = ser.interval()
    row = {
        "point": point, "method": method, "sweep_value": value if value is not None else "",
        "frame_hash": _frames_hash(frames), "min_scnr": min_gamma, "ser_user_mean": ser.mean,
        "ser_user_ci_lo": lo, "ser_user_ci_hi": hi, "ser_eve_min": eve.best,
        "jsd": float(np.mean(jsd_pairs)), "eve_gauss_jsd": float(np.mean(gauss)),
        "noise_residual_max": noise_res, "feasible": int(feasible),
    }
    angles = np.deg2rad(np.arange(*_grid_args(plan.beampattern_grid_deg)))
    tx = beampattern(waveforms[0], angles, cfg, "tx-power")
    echo = beampattern(waveforms[0], angles, cfg, "echo-scnr", scene)
    n_dump = plan.constellation_dump
    dump_user = np.concatenate(user_eq)[:n_dump]
    best_t = int(np.argmin(eve.per_target))
    dump_eve = np.concatenate([eve.samples[(best_t, k)] for k in range(scene.n_users)])[:n_dump]
    return {
        "row": row,
        "solve_ms": float(sum(r.wall_ms for r in reports)),
        "reports": [r.to_dict() for r in reports],
        "trace": reports[0].merged_trace(),
        "waveform": np.asarray(waveforms[0]),
        "beampattern": [(np.rad2deg(a), p, e) for (a, p), (_, e) in zip(tx, echo)],
        "constellation": (dump_user, dump_eve),
        "user_ser": ser.rates.tolist(),
        "eve_ser": eve.ser.tolist(),
    }


def f_key(point: int) -> int:
    return int(point)


def _grid_args(grid):
    lo, hi, step = (float(v) for v in grid)
    return lo, hi + 0.5 * step, step


def _frames_hash(frames) -> str:
    import hashlib
    h = hashlib.sha1()
    for fr in frames:
        h.update(fr.digest().encode())
    return h.hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _write_job_files(out: Path, point: int, method: str, res: dict):
    tag = f"{method}_{point}"
    x = res["waveform"]
    _write_csv(out / f"waveform_{tag}.csv", ["slot", "antenna", "re", "im"],
               [(l, n, x[l, n].real, x[l, n].imag) for l in range(x.shape[0]) for n in range(x.shape[1])])
    user, eve = res["constellation"]
    rows = [(z.real, z.imag, "user") for z in user] + [(z.real, z.imag, "eve") for z in eve]
    _write_csv(out / f"constellation_{tag}.csv", ["re", "im", "role"], rows)
    if res["trace"]:
        write_trace_csv(out / f"trace_{point}_{method}.csv", res["trace"])
    with open(out / "points" / f"{tag}.json", "w") as fh:
        json.dump({"row": res["row"], "beampattern": res["beampattern"], "reports": res["reports"],
                   "user_ser": res["user_ser"], "eve_ser": res["eve_ser"]}, fh)


def _load_manifest(out: Path) -> dict:
    path = out / "manifest.json"
    if path.exists():
        with open(path) as fh:
            return json.load(fh)
    return {"completed": {}, "failed": {}}


def _save_manifest(out: Path, manifest: dict):
    tmp = out / "manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    tmp.replace(out / "manifest.json")


def _job_worker(args):
    plan_dict, point, method, seed = args
    return run_job(ExperimentPlan.from_dict(plan_dict), point, method, seed)


def run_experiment(plan: ExperimentPlan, out_dir, workers: int | None = None, log=None) -> list:
    """Run every (point, method) job, write artifacts and return metric rows.

    Jobs already listed as completed in ``manifest.json`` are not re-run.
    ``metrics.csv`` and ``beampattern.csv`` are rebuilt from the per-job
    records in a fixed order, so reruns are byte-identical.
    """
    out = Path(out_dir)
    (out / "points").mkdir(parents=True, exist_ok=True)
    seed = plan.effective_seed()
    manifest = _load_manifest(out)
    manifest["plan"] = plan.to_dict()
    manifest["seed"] = seed
    jobs = [(p, m) for p in range(len(plan.points())) for m in plan.methods]
    todo = [(p, m) for p, m in jobs if f"{m}_{p}" not in manifest["completed"]]
    if workers is None:
        workers = int(os.environ.get("ISCC_THREADS", "1") or 1)
    timings = manifest.setdefault("timings", {})

    def collect(p, m, res):
        _write_job_files(out, p, m, res)
        manifest["completed"][f"{m}_{p}"] = {"point": p, "method": m, "flags": res["reports"][0].get("converged")}
        manifest["failed"].pop(f"{m}_{p}", None)
        timings[f"{m}_{p}"] = res["solve_ms"]
        _save_manifest(out, manifest)
        if log:
            log(f"done point={p} method={m}")

    def fail(p, m, exc):
        manifest["failed"][f"{m}_{p}"] = {"point": p, "method": m, "error": repr(exc)}
        _save_manifest(out, manifest)
        if log:
            log(f"failed point={p} method={m}: {exc!r}")

    if workers <= 1 or len(todo) <= 1:
        for p, m in todo:
            try:
                collect(p, m, run_job(plan, p, m, seed))
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                fail(p, m, exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {(p, m): pool.submit(_job_worker, (plan.to_dict(), p, m, seed)) for p, m in todo}
            for (p, m), fut in futures.items():
                try:
                    collect(p, m, fut.result())
                except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                    fail(p, m, exc)
    return _assemble(out, plan, jobs, manifest)


def _assemble(out: Path, plan, jobs, manifest) -> list:
    rows, bp_rows, timing_rows = [], [], []
    for p, m in jobs:
        path = out / "points" / f"{m}_{p}.json"
        if not path.exists():
            continue
        with open(path) as fh:
            rec = json.load(fh)
        rows.append(rec["row"])
        label = m if m != "bf" else "bf (heuristic baseline)"
        bp_rows += [(a, tx, echo, label, p) for a, tx, echo in rec["beampattern"]]
        timing_rows.append((p, m, manifest.get("timings", {}).get(f"{m}_{p}", float("nan"))))
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, [[r[c] for c in METRIC_COLUMNS] for r in rows])
    _write_csv(out / "beampattern.csv", ["angle_deg", "tx_power", "echo_scnr", "method", "point"], bp_rows)
    _write_csv(out / "timings.csv", ["point", "method", "solve_ms"], timing_rows)
    return rows


def read_metrics(path) -> list:
    with open(path) as fh:
        return list(csv.DictReader(fh))
