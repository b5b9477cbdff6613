"""Sensing, communication and covertness figures of merit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .array_model import (NoiseShapingAux, Scene, SteeringMatrix, SystemConfig, TargetSpec,
                          interference_covariance, steering_vector)


@dataclass(frozen=True, eq=False)
class Waveform:
    """Stacked transmit codeword, viewed as ``(L, N_t)`` slots."""

    slots: np.ndarray

    @classmethod
    def from_stacked(cls, x: np.ndarray, n_tx: int) -> "Waveform":
        x = np.asarray(x, dtype=complex)
        return cls(x.reshape(-1, n_tx))

    @property
    def stacked(self) -> np.ndarray:
        return self.slots.reshape(-1)

    @property
    def frame_len(self) -> int:
        return self.slots.shape[0]

    @property
    def energy(self) -> float:
        return float(np.vdot(self.slots, self.slots).real)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.slots, dtype=dtype)


def q_func(x):
    """Gaussian tail probability."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def q_inv(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("q_inv needs 0 < p < 1")
    return -special.ndtri(p)


def scnr(waveform, target: TargetSpec, cfg: SystemConfig) -> float:
    """Output SCNR ``x^H A^H R^{-1} A x`` with ``R`` built from the same waveform."""
    x = np.asarray(waveform)
    b = SteeringMatrix.at(target.angle, cfg).apply(x)
    cov = interference_covariance(target, x, cfg)
    return float(np.vdot(b, cov.solve(b)).real)


def min_scnr(waveform, scene: Scene, cfg: SystemConfig) -> float:
    return min(scnr(waveform, t, cfg) for t in scene.targets)


def detection_probability(scnr_value: float, p_fa: float) -> float:
    if not 0.0 < p_fa < 1.0:
        raise ValueError("p_fa must lie in (0, 1)")
    if scnr_value < 0:
        raise ValueError("scnr must be nonnegative")
    return float(q_func(q_inv(p_fa) - np.sqrt(scnr_value)))


def psk_safety_margin(x_slot, h, symbol, m: int):
    """``Re{h^H x s*} - |Im{h^H x s*}| cot(pi/M)``; vectorises over leading axes."""
    z = np.sum(np.conj(h) * x_slot, axis=-1) * np.conj(symbol)
    return z.real - np.abs(z.imag) / np.tan(np.pi / m)


def psk_sep_bound(margin, sigma: float, m: int):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    val = 2.0 * q_func(np.asarray(margin) * np.sqrt(2.0) * np.sin(np.pi / m) / sigma)
    return np.minimum(1.0, val)


def rotated_symbols(symbols: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """The two rotated conjugate symbols whose real-part margins encode the PSK sector."""
    sc = np.conj(symbols)
    return sc * (np.sin(np.pi / m) + 1j * np.cos(np.pi / m)), sc * (np.sin(np.pi / m) - 1j * np.cos(np.pi / m))


def psk_rotated_margins(waveform, channels: np.ndarray, symbols: np.ndarray, m: int) -> np.ndarray:
    """``Re{h_k^H x_l s}`` for both rotations, shape ``(2, K_U, L)``."""
    x = np.asarray(waveform)
    inner = np.conj(channels) @ x.T
    st, sb = rotated_symbols(symbols, m)
    return np.stack([(inner * st).real, (inner * sb).real])


def noise_shaping_residual(waveform, target_angle: float, reference: np.ndarray, scale: complex,
                           cfg: SystemConfig) -> float:
    """Empirical mean of ``|a_t^H x_l - d u_l|^2`` over the frame."""
    x = np.asarray(waveform)
    a = steering_vector(target_angle, cfg.n_tx, cfg.spacing_ratio)
    e = x @ a.conj() - scale * np.asarray(reference)
    return float(np.mean(np.abs(e) ** 2))


def noise_shaping_residuals(waveform, scene: Scene, aux: NoiseShapingAux, cfg: SystemConfig) -> np.ndarray:
    return np.array([noise_shaping_residual(waveform, t.angle, aux.reference[k], aux.scale[k], cfg)
                     for k, t in enumerate(scene.targets)])


def beampattern(waveform, angles, cfg: SystemConfig, mode: str = "tx-power", scene: Scene | None = None):
    """Angle sweep of either transmit power or a unit-RCS probe target's echo SCNR."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.size == 0:
        raise ValueError("empty angle grid")
    x = np.asarray(waveform)
    out = np.empty(angles.size)
    if mode == "tx-power":
        for i, th in enumerate(angles):
            out[i] = np.mean(np.abs(x @ steering_vector(th, cfg.n_tx, cfg.spacing_ratio).conj()) ** 2)
    elif mode == "echo-scnr":
        clutter = () if scene is None else tuple(c for t in scene.targets for c in t.clutter)
        for i, th in enumerate(angles):
            out[i] = scnr(x, TargetSpec(th, 1.0, clutter), cfg)
    else:
        raise ValueError(f"unknown beampattern mode {mode!r}")
    return list(zip(angles.tolist(), out.tolist()))


def js_support(*sample_sets, quantile: float = 99.5) -> float:
    pooled = np.concatenate([np.abs(np.asarray(s).ravel()) for s in sample_sets])
    return float(np.percentile(pooled, quantile))


def js_divergence(samples_a, samples_b, bins: int = 32, support: float | tuple | None = None) -> float:
    """Jensen-Shannon divergence of two complex sample sets via 2-D histograms.

    ``support`` is a half-width (symmetric box) or ``(re_lo, re_hi, im_lo, im_hi)``;
    by default the box covers the 99.5th percentile magnitude of the pooled samples.
    Cells occupied by either histogram get add-one-half smoothing (cells empty
    in both carry no mass either way); natural log, so the value lies in
    ``[0, ln 2]``.
    """
    a = np.asarray(samples_a).ravel()
    b = np.asarray(samples_b).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    if support is None:
        support = js_support(a, b)
    if np.isscalar(support):
        lo_r, hi_r, lo_i, hi_i = -support, support, -support, support
    else:
        lo_r, hi_r, lo_i, hi_i = support
    if not (hi_r > lo_r and hi_i > lo_i):
        raise ValueError("degenerate histogram support")
    edges = (np.linspace(lo_r, hi_r, bins + 1), np.linspace(lo_i, hi_i, bins + 1))

    def hist(s):
        h, _, _ = np.histogram2d(np.clip(s.real, lo_r, hi_r), np.clip(s.imag, lo_i, hi_i), bins=edges)
        return h

    ha, hb = hist(a), hist(b)
    occupied = (ha + hb) > 0
    p = ha[occupied] + 0.5
    q = hb[occupied] + 0.5
    p, q = p / p.sum(), q / q.sum()
    mix = 0.5 * (p + q)
    jsd = 0.5 * np.sum(p * np.log(p / mix)) + 0.5 * np.sum(q * np.log(q / mix))
    return float(min(max(jsd, 0.0), np.log(2.0)))


def wilson_interval(errors: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    if not 0 <= errors <= trials:
        raise ValueError("need 0 <= errors <= trials")
    phat = errors / trials
    den = 1 + z * z / trials
    centre = (phat + z * z / (2 * trials)) / den
    half = z * np.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / den
    lo = 0.0 if errors == 0 else max(0.0, centre - half)
    hi = 1.0 if errors == trials else min(1.0, centre + half)
    return float(lo), float(hi)
