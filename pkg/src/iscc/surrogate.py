"""Concave quadratic minorizer of the matched-filter SCNR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_model import SteeringMatrix, SystemConfig, TargetSpec, interference_covariance


@dataclass(frozen=True, eq=False)
class RadarSurrogate:
    """``phi~(x) = -||G^H x||^2 + 2 Re{m^H x} + const`` on flattened waveforms.

    ``G G^H`` is the curvature matrix (one column per clutter scatterer);
    ``basis``/``sq_singular`` hold its thin eigendecomposition.
    """

    factors: np.ndarray        # (n, C)
    linear: np.ndarray         # (n,)
    const: float
    basis: np.ndarray          # (n, r)
    sq_singular: np.ndarray    # (r,)
    value_at_anchor: float

    @property
    def curvature(self) -> np.ndarray:
        return self.factors @ self.factors.conj().T

    def __call__(self, x) -> float:
        x = np.asarray(x).reshape(-1)
        gx = self.factors.conj().T @ x
        return float(-np.vdot(gx, gx).real + 2.0 * np.vdot(self.linear, x).real + self.const)


def build_surrogate(xbar, target: TargetSpec, cfg: SystemConfig) -> RadarSurrogate:
    """Tangent minorizer of ``x^H A^H R(x)^{-1} A x`` at ``xbar``.

    From joint convexity of ``b^H R^{-1} b`` in ``(b, R)``: with
    ``w = R(xbar)^{-1} A xbar``, ``phi(x) >= 2 Re{w^H A x} - w^H R(x) w``,
    with equality at ``xbar``.
    """
    xbar = np.asarray(xbar, dtype=complex).reshape(cfg.frame_len, cfg.n_tx)
    a_k = SteeringMatrix.at(target.angle, cfg)
    b = a_k.apply(xbar)
    cov = interference_covariance(target, xbar, cfg)
    w = cov.solve(b)
    phi = float(np.vdot(b, w).real)
    linear = a_k.adjoint(w).reshape(-1)
    cols = [np.sqrt(p / target.rcs_power) * SteeringMatrix.at(ang, cfg).adjoint(w).reshape(-1)
            for ang, p in target.clutter]
    n = cfg.dim
    factors = np.stack(cols, axis=1) if cols else np.zeros((n, 0), dtype=complex)
    gx = factors.conj().T @ xbar.reshape(-1)
    const = float(np.vdot(gx, gx).real) - phi
    if factors.shape[1]:
        u, s, _ = np.linalg.svd(factors, full_matrices=False)
        keep = s > 1e-14 * max(s.max(), 1e-300)
        basis, sq = u[:, keep], s[keep] ** 2
    else:
        basis, sq = np.zeros((n, 0), dtype=complex), np.zeros(0)
    return RadarSurrogate(factors, linear, const, basis, sq, phi)
