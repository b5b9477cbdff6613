"""Array geometry, scene description and random frame generation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Fixed stream indices: resampling one stream never perturbs another.
STREAMS = {"channels": 0, "symbols": 1, "noise_reference": 2, "mc_noise": 3, "oracle": 4}


def rng_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent named generator derived from a master seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name], *map(int, extra)))
    return np.random.default_rng(ss)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SystemConfig:
    n_tx: int
    n_rx: int
    frame_len: int
    power_budget: float
    spacing_ratio: float = 0.5
    rx_noise_power: float = 1.0
    user_noise_powers: tuple[float, ...] = ()

    def __post_init__(self):
        if min(self.n_tx, self.n_rx, self.frame_len) < 1:
            raise ValueError("antenna counts and frame length must be >= 1")
        if self.power_budget < 0:
            raise ValueError("power budget must be nonnegative")
        if self.spacing_ratio <= 0:
            raise ValueError("spacing ratio must be positive")
        if self.rx_noise_power <= 0 or any(s <= 0 for s in self.user_noise_powers):
            raise ValueError("noise powers must be positive")
        object.__setattr__(self, "user_noise_powers", tuple(float(s) for s in self.user_noise_powers))

    @property
    def n_users(self) -> int:
        return len(self.user_noise_powers)

    @property
    def dim(self) -> int:
        return self.n_tx * self.frame_len


@dataclass(frozen=True)
class TargetSpec:
    angle: float
    rcs_power: float = 1.0
    clutter: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.rcs_power <= 0:
            raise ValueError("rcs_power must be positive")
        clutter = tuple((float(a), float(p)) for a, p in self.clutter)
        if any(p <= 0 for _, p in clutter):
            raise ValueError("clutter powers must be positive")
        object.__setattr__(self, "clutter", clutter)

    def at_angle(self, angle: float) -> "TargetSpec":
        return TargetSpec(angle, self.rcs_power, self.clutter)


@dataclass(frozen=True)
class UserSpec:
    angle: float
    rician_factor: float = 10.0
    n_paths: int = 4


@dataclass(frozen=True, eq=False)
class UserChannelSet:
    channels: np.ndarray          # (K_U, N_t); row k is h_k
    rician_factors: np.ndarray
    n_paths: tuple[int, ...]
    los_angles: np.ndarray
    path_angles: tuple[np.ndarray, ...]

    @property
    def n_users(self) -> int:
        return self.channels.shape[0]


@dataclass(frozen=True, eq=False)
class Scene:
    targets: tuple[TargetSpec, ...]
    users: UserChannelSet | None = None

    @property
    def channels(self) -> np.ndarray:
        if self.users is None:
            return np.zeros((0, 0), dtype=complex)
        return self.users.channels

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def n_users(self) -> int:
        return 0 if self.users is None else self.users.n_users


# ---------------------------------------------------------------------------
# steering
# ---------------------------------------------------------------------------

def steering_vector(angle: float, n: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """Unit-norm ULA response ``exp(j 2 pi d/lambda i sin(angle)) / sqrt(n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n)
    return np.exp(2j * np.pi * spacing_ratio * i * np.sin(angle)) / np.sqrt(n)


class SteeringMatrix:
    """``I_L kron (a_r a_t^H)`` stored as its rank-one factor pair.

    Stacked vectors are handled as ``(L, N)`` arrays whose row ``l`` is the
    ``l``-th block.
    """

    def __init__(self, a_r: np.ndarray, a_t: np.ndarray, frame_len: int):
        self.a_r = np.asarray(a_r, dtype=complex)
        self.a_t = np.asarray(a_t, dtype=complex)
        self.frame_len = int(frame_len)

    @classmethod
    def at(cls, angle: float, cfg: SystemConfig) -> "SteeringMatrix":
        return cls(steering_vector(angle, cfg.n_rx, cfg.spacing_ratio),
                   steering_vector(angle, cfg.n_tx, cfg.spacing_ratio), cfg.frame_len)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frame_len * self.a_r.size, self.frame_len * self.a_t.size

    def tx_response(self, x) -> np.ndarray:
        """Per-slot scalars ``a_t^H x_l``."""
        return _slots(x, self.frame_len, self.a_t.size) @ self.a_t.conj()

    def apply(self, x) -> np.ndarray:
        return self.tx_response(x)[:, None] * self.a_r[None, :]

    def adjoint(self, y) -> np.ndarray:
        y = _slots(y, self.frame_len, self.a_r.size)
        return (y @ self.a_r.conj())[:, None] * self.a_t[None, :]

    def dense(self) -> np.ndarray:
        return np.kron(np.eye(self.frame_len), np.outer(self.a_r, self.a_t.conj()))

    @property
    def frobenius_sq(self) -> float:
        return float(self.frame_len * np.vdot(self.a_r, self.a_r).real * np.vdot(self.a_t, self.a_t).real)


def steering_matrix(angle: float, cfg: SystemConfig) -> SteeringMatrix:
    return SteeringMatrix.at(angle, cfg)


def _slots(x, frame_len: int, width: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 1:
        if x.size != frame_len * width:
            raise ValueError(f"expected length {frame_len * width}, got {x.size}")
        return x.reshape(frame_len, width)
    if x.shape != (frame_len, width):
        raise ValueError(f"expected shape {(frame_len, width)}, got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# interference covariance
# ---------------------------------------------------------------------------

class InterferenceCovariance:
    """``R = s (sigma0^2 I + F F^H)`` with the clutter echoes as columns of ``F``.

    ``s`` is the inverse target RCS power.  Linear solves use the Woodbury
    identity, so only a ``C x C`` system is ever factored.
    """

    def __init__(self, scale: float, noise_power: float, factors: np.ndarray):
        self.scale = float(scale)
        self.noise_power = float(noise_power)
        self.factors = np.asarray(factors, dtype=complex)  # (n, C)
        gram = self.factors.conj().T @ self.factors
        self._inner = noise_power * np.eye(gram.shape[0]) + gram

    @property
    def size(self) -> int:
        return self.factors.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=complex)
        shape = b.shape
        b = b.reshape(-1)
        if self.factors.shape[1]:
            fb = self.factors.conj().T @ b
            b = b - self.factors @ np.linalg.solve(self._inner, fb)
        return (b / (self.noise_power * self.scale)).reshape(shape)

    def dense(self) -> np.ndarray:
        n = self.size
        return self.scale * (self.noise_power * np.eye(n) + self.factors @ self.factors.conj().T)


def clutter_echoes(target: TargetSpec, x, cfg: SystemConfig) -> np.ndarray:
    """Columns ``sqrt(power_c) A_c x`` flattened to length ``N_r L``."""
    cols = [np.sqrt(p) * SteeringMatrix.at(a, cfg).apply(x).reshape(-1) for a, p in target.clutter]
    if not cols:
        return np.zeros((cfg.n_rx * cfg.frame_len, 0), dtype=complex)
    return np.stack(cols, axis=1)


def interference_covariance(target: TargetSpec, waveform, cfg: SystemConfig) -> InterferenceCovariance:
    x = np.asarray(waveform)
    return InterferenceCovariance(1.0 / target.rcs_power, cfg.rx_noise_power, clutter_echoes(target, x, cfg))


# ---------------------------------------------------------------------------
# user channels, constellations, frames
# ---------------------------------------------------------------------------

def sample_rician_channels(cfg: SystemConfig, users: Sequence[UserSpec], rng=None) -> UserChannelSet:
    """Block Rician channels: LoS along the user angle plus ``L_P`` scattered paths.

    Scattered paths use their own uniformly drawn departure angles.
    """
    rng = _as_rng(rng)
    n = cfg.n_tx
    rows, factors, n_paths, los, paths = [], [], [], [], []
    for u in users:
        if u.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        v = float(u.rician_factor)
        angles = rng.uniform(-np.pi / 2, np.pi / 2, size=u.n_paths)
        gains = (rng.standard_normal(u.n_paths) + 1j * rng.standard_normal(u.n_paths)) / np.sqrt(2)
        scatter = np.sqrt(n / u.n_paths) * sum(g * steering_vector(a, n, cfg.spacing_ratio)
                                               for g, a in zip(gains, angles))
        los_part = np.sqrt(n) * steering_vector(u.angle, n, cfg.spacing_ratio)
        if np.isinf(v):
            h = los_part
        else:
            h = np.sqrt(v / (1 + v)) * los_part + np.sqrt(1 / (1 + v)) * scatter
        rows.append(h)
        factors.append(v)
        n_paths.append(u.n_paths)
        los.append(u.angle)
        paths.append(angles)
    channels = np.array(rows, dtype=complex).reshape(len(users), n)
    return UserChannelSet(channels, np.array(factors), tuple(n_paths), np.array(los), tuple(paths))


@dataclass(frozen=True, eq=False)
class Constellation:
    kind: str                 # "psk" | "qam"
    order_param: int          # M: M-PSK, or 4M^2-QAM
    points: np.ndarray = field(repr=False)

    @classmethod
    def psk(cls, m: int) -> "Constellation":
        return cls("psk", m, np.exp(2j * np.pi * np.arange(m) / m))

    @classmethod
    def qam(cls, m: int) -> "Constellation":
        levels = np.arange(-(2 * m - 1), 2 * m, 2, dtype=float)
        pts = (levels[:, None] + 1j * levels[None, :]).reshape(-1)
        return cls("qam", m, pts)

    @classmethod
    def from_name(cls, name: str) -> "Constellation":
        name = name.lower()
        table = {"bpsk": ("psk", 2), "qpsk": ("psk", 4), "8psk": ("psk", 8),
                 "16qam": ("qam", 2), "64qam": ("qam", 4)}
        if name not in table:
            raise ValueError(f"unknown constellation {name!r}")
        kind, m = table[name]
        return cls.psk(m) if kind == "psk" else cls.qam(m)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def mean_energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    @property
    def max_level(self) -> int:
        return 2 * self.order_param - 1

    def demodulate(self, y: np.ndarray) -> np.ndarray:
        """Nearest-point decisions (angular sector for PSK, per-axis grid for QAM)."""
        y = np.asarray(y)
        if self.kind == "psk":
            m = self.order_param
            idx = np.mod(np.rint(np.angle(y) * m / (2 * np.pi)), m).astype(int)
            return self.points[idx]
        top = self.max_level

        def axis(v):
            return np.clip(2 * np.floor(v / 2) + 1, -top, top)

        return axis(y.real) + 1j * axis(y.imag)

    def contains(self, s: np.ndarray, atol: float = 1e-9) -> np.ndarray:
        s = np.asarray(s)
        return np.min(np.abs(s[..., None] - self.points), axis=-1) <= atol


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    symbols: np.ndarray       # (K_U, L)
    constellation: Constellation

    @property
    def n_users(self) -> int:
        return self.symbols.shape[0]

    @property
    def frame_len(self) -> int:
        return self.symbols.shape[1]

    def digest(self) -> str:
        import hashlib
        return hashlib.sha1(np.ascontiguousarray(self.symbols).tobytes()).hexdigest()[:12]


def draw_symbol_frame(constellation: Constellation, n_users: int, frame_len: int, rng=None) -> SymbolFrame:
    if constellation.size == 0:
        raise ValueError("empty constellation")
    rng = _as_rng(rng)
    idx = rng.integers(0, constellation.size, size=(n_users, frame_len))
    return SymbolFrame(constellation.points[idx], constellation)


@dataclass(frozen=True, eq=False)
class NoiseShapingAux:
    reference: np.ndarray     # (K_T, L) i.i.d. CN(0, 1)
    tolerance: np.ndarray     # (K_T,)
    scale: np.ndarray         # (K_T,) complex; solver output / initial value

    @classmethod
    def create(cls, reference: np.ndarray, tolerance) -> "NoiseShapingAux":
        reference = np.asarray(reference, dtype=complex)
        k = reference.shape[0]
        tol = np.broadcast_to(np.asarray(tolerance, dtype=float), (k,)).copy()
        if np.any(tol <= 0):
            raise ValueError("noise-shaping tolerance must be positive")
        return cls(reference, tol, np.zeros(k, dtype=complex))


def draw_noise_reference(n_targets: int, frame_len: int, rng=None) -> np.ndarray:
    rng = _as_rng(rng)
    shape = (n_targets, frame_len)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
