"""Closed-form and semi-closed-form Euclidean projections.

The free functions act on plain arrays; the ``*Set`` classes wrap them for
the PDA engine, reading and writing their blocks of a flat decision vector.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .pda import Layout, ProjectionSet
from .surrogate import RadarSurrogate


class ProjectionFault(RuntimeError):
    """A multiplier search failed to bracket its root."""


# ---------------------------------------------------------------------------
# free functions
# ---------------------------------------------------------------------------

def project_power_ball(x: np.ndarray, power: float) -> np.ndarray:
    if power < 0:
        raise ValueError("power must be nonnegative")
    nrm2 = float(np.vdot(x, x).real)
    if nrm2 <= power:
        return np.array(x, copy=True)
    return x * np.sqrt(power / nrm2)


def project_sep_halfspace(x_slot: np.ndarray, h_tilde: np.ndarray, mu: float) -> np.ndarray:
    """Projection onto ``{z : Re{h~^H z} >= mu}``."""
    hn2 = float(np.vdot(h_tilde, h_tilde).real)
    if hn2 == 0:
        raise ValueError("zero channel vector")
    gap = mu - float(np.vdot(h_tilde, x_slot).real)
    return x_slot + (max(gap, 0.0) / hn2) * h_tilde


def project_robust_sep_halfspace(x_slot, r: float, h_tilde, mu: float, eps: float):
    """Projection of ``(x, r)`` onto ``{Re{h~^H x} - eps r >= mu}``."""
    hn2 = float(np.vdot(h_tilde, h_tilde).real)
    if hn2 == 0:
        raise ValueError("zero channel vector")
    gap = mu - (float(np.vdot(h_tilde, x_slot).real) - eps * r)
    if gap <= 0:
        return np.array(x_slot, copy=True), float(r)
    c = gap / (hn2 + eps * eps)
    return x_slot + c * h_tilde, float(r - c * eps)


def project_soc(x_slot, r: float):
    """Projection onto the second-order cone ``||x|| <= r``."""
    nx = float(np.linalg.norm(x_slot))
    if nx <= r:
        return np.array(x_slot, copy=True), float(r)
    if nx <= -r:
        return np.zeros_like(x_slot), 0.0
    t = 0.5 * (nx + r)
    return x_slot * (t / nx), t


def radar_violation(surrogate: RadarSurrogate, x, xi: float) -> float:
    return surrogate(x) + xi


def project_radar_surrogate(x, xi: float, surrogate: RadarSurrogate, tol: float = 1e-10):
    """Projection of ``(x, xi)`` onto ``{phi~(x) + xi >= 0}``.

    Returns ``(x, xi, multiplier)``.  The stationarity conditions give
    ``x = (I + lam G G^H)^{-1}(xbar + lam m)`` and ``xi = xibar + lam/2``.
    """
    shape = np.shape(x)
    xf = np.asarray(x, dtype=complex).reshape(-1)
    h0 = surrogate(xf) + xi
    if h0 >= 0:
        return np.array(x, dtype=complex, copy=True), float(xi), 0.0
    u, s2, m = surrogate.basis, surrogate.sq_singular, surrogate.linear
    p = u.conj().T @ xf
    q = u.conj().T @ m
    mx = float(np.vdot(m, xf).real)
    mm = float(np.vdot(m, m).real)
    c0 = surrogate.const + xi
    lam = kernels.radar_multiplier(p, q, s2, mx, mm, c0, tol * max(1.0, abs(c0)))
    if lam < 0:
        raise ProjectionFault("radar surrogate multiplier search did not bracket")
    coeff = (lam * s2 / (1.0 + lam * s2)) * (p + lam * q)
    xn = xf + lam * m - u @ coeff
    return xn.reshape(shape), float(xi + 0.5 * lam), float(lam)


def project_noise_shaping(x_slots: np.ndarray, d: complex, a_t: np.ndarray, u: np.ndarray, delta: float,
                          tol: float = 1e-12):
    """Projection of ``(x_1..x_L, d)`` onto ``sum_l |a^H x_l - d u_l|^2 <= L delta``.

    ``B B^H = I + u u^H`` has only two distinct eigenvalues, so the multiplier
    equation reduces to two scalar terms.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    frame_len = x_slots.shape[0]
    res = x_slots @ a_t.conj() - d * u
    target = frame_len * delta
    total = float(np.vdot(res, res).real)
    if total <= target:
        return np.array(x_slots, copy=True), complex(d)
    un2 = float(np.vdot(u, u).real)
    if un2 > 0:
        uhat = u / np.sqrt(un2)
        r_par = uhat * np.vdot(uhat, res)
    else:
        r_par = np.zeros_like(res)
    r_perp = res - r_par
    sig2 = 1.0 + un2
    n_par2 = float(np.vdot(r_par, r_par).real)
    n_perp2 = max(total - n_par2, 0.0)
    lam = kernels.noise_multiplier(n_perp2, n_par2, sig2, target, tol * target)
    if lam < 0:
        raise ProjectionFault("noise-shaping multiplier search did not bracket")
    w = r_perp / (1.0 + lam) + r_par / (1.0 + lam * sig2)
    xn = x_slots - lam * w[:, None] * a_t[None, :]
    dn = d + lam * np.vdot(u, w)
    return xn, complex(dn)


def project_channel_coupling(x_slot, ups_slot, channel_matrix, inverse=None):
    """Projection onto ``{(x, v) : v = H x}``."""
    h = np.asarray(channel_matrix)
    if inverse is None:
        inverse = np.linalg.inv(h.conj().T @ h + np.eye(h.shape[1]))
    x = (np.asarray(x_slot) + np.asarray(ups_slot) @ h.conj()) @ inverse.T
    return x, x @ h.T


# ---------------------------------------------------------------------------
# QAM margin boxes
# ---------------------------------------------------------------------------

class QamBounds:
    """Per (user, slot, axis) lower/upper offsets with explicit unbounded flags.

    ``a``/``c`` have shape ``(K_U, L, 2)``; axis 0 is in-phase, 1 quadrature.
    ``has_a[k, l, i]`` is False where the lower side is absent (-inf in the
    closed-form description); likewise ``has_c`` for the upper side.
    """

    def __init__(self, levels, a, c, has_a, has_c):
        self.levels = np.asarray(levels, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.has_a = np.asarray(has_a, dtype=bool)
        self.has_c = np.asarray(has_c, dtype=bool)

    @property
    def n_users(self) -> int:
        return self.levels.shape[0]

    def tightened(self, offset: np.ndarray) -> "QamBounds":
        """Shrink every box by ``offset[k, l]`` on both sides of both axes."""
        off = np.asarray(offset, dtype=float)[:, :, None]
        return QamBounds(self.levels, self.a + off, self.c + off, self.has_a, self.has_c)

    def permuted(self, order) -> "QamBounds":
        return QamBounds(self.levels[order], self.a[order], self.c[order], self.has_a[order], self.has_c[order])

    def slack(self, received: np.ndarray, tau: np.ndarray) -> np.ndarray:
        """Signed box slack ``(K_U, L, 2)``; negative entries are violations."""
        v = np.stack([received.real, received.imag], axis=-1)
        t = tau[:, None, :]
        lower = v - ((self.levels - 1.0) * t + self.a)
        upper = ((self.levels + 1.0) * t - self.c) - v
        lower = np.where(self.has_a, lower, np.inf)
        upper = np.where(self.has_c, upper, np.inf)
        return np.minimum(lower, upper)


def project_qam_margins(upsilon: np.ndarray, tau: np.ndarray, bounds: QamBounds):
    """Exact projection of ``(upsilon, tau)`` onto the QAM margin boxes and ``tau >= 0``.

    ``upsilon`` is ``(K_U, L)`` complex, ``tau`` is ``(K_U, 2)``.  The problem
    splits into ``2 K_U`` scalar-``tau`` subproblems, each solved by the
    breakpoint search.
    """
    ups = np.asarray(upsilon, dtype=complex)
    out_v = np.empty((ups.shape[0], ups.shape[1], 2))
    out_t = np.empty_like(np.asarray(tau, dtype=float))
    parts = (ups.real, ups.imag)
    for k in range(ups.shape[0]):
        for i in range(2):
            v, t = kernels.qam_project_axis(
                np.ascontiguousarray(parts[i][k]), float(tau[k, i]),
                np.ascontiguousarray(bounds.levels[k, :, i]),
                np.ascontiguousarray(bounds.a[k, :, i]), np.ascontiguousarray(bounds.c[k, :, i]),
                np.ascontiguousarray(bounds.has_a[k, :, i]), np.ascontiguousarray(bounds.has_c[k, :, i]))
            out_v[k, :, i] = v
            out_t[k, i] = t
    return out_v[..., 0] + 1j * out_v[..., 1], out_t


# ---------------------------------------------------------------------------
# set wrappers for the engine
# ---------------------------------------------------------------------------

class RadarSet(ProjectionSet):
    label = "radar"

    def __init__(self, layout: Layout, surrogates, tol: float = 1e-10):
        self.layout = layout
        self.surrogates = list(surrogates)
        self.count = len(self.surrogates)
        self.tol = tol

    def project(self, y, member=0):
        lay = self.layout
        out = y.copy()
        x, xi, _ = project_radar_surrogate(lay.view(y, "x"), lay.view(y, "xi")[0], self.surrogates[member], self.tol)
        lay.view(out, "x")[...] = x
        lay.view(out, "xi")[0] = xi
        return out

    def violations(self, y) -> np.ndarray:
        x = self.layout.view(y, "x")
        xi = self.layout.view(y, "xi")[0]
        return np.array([s(x) + xi for s in self.surrogates])


class SepSet(ProjectionSet):
    """All (rotation, user, slot) SEP halfspaces, optionally robustified by slack radii ``r``."""

    label = "sep"

    def __init__(self, layout: Layout, channels, rotated, mu, eps=None):
        self.layout = layout
        self.h = np.ascontiguousarray(channels, dtype=complex)
        self.srot = np.ascontiguousarray(rotated, dtype=complex)      # (R, K, L)
        self.mu = np.ascontiguousarray(np.broadcast_to(mu, (self.h.shape[0],)), dtype=float)
        self.robust = eps is not None
        self.eps = np.zeros(self.h.shape[0]) if eps is None else \
            np.ascontiguousarray(np.broadcast_to(eps, (self.h.shape[0],)), dtype=float)
        self.count = self.srot.size

    def _r(self, y):
        if self.robust:
            return np.ascontiguousarray(self.layout.view(y, "r"))
        return np.zeros(self.srot.shape[2])

    def _apply(self, y, srot, h, mu, eps, out):
        x = np.ascontiguousarray(self.layout.view(y, "x"))
        dx, dr, dist = kernels.sep_batch(x, self._r(y), h, srot, mu, eps)
        self.layout.view(out, "x")[...] += dx
        if self.robust:
            self.layout.view(out, "r")[...] += dr
        return dist

    def accumulate(self, y, out):
        return self._apply(y, self.srot, self.h, self.mu, self.eps, out).reshape(-1)

    def project(self, y, member=0):
        r, k, l = np.unravel_index(member, self.srot.shape)
        out = y.copy()
        x = self.layout.view(out, "x")
        h_tilde = self.h[k] * np.conj(self.srot[r, k, l])
        if self.robust:
            rv = self.layout.view(out, "r")
            x[l], rv[l] = project_robust_sep_halfspace(x[l], rv[l], h_tilde, self.mu[k], self.eps[k])
        else:
            x[l] = project_sep_halfspace(x[l], h_tilde, self.mu[k])
        return out

    def project_cyclic(self, y):
        n_rot, n_users, _ = self.srot.shape
        for r in range(n_rot):
            for k in range(n_users):
                out = np.zeros_like(y)
                self._apply(y, np.ascontiguousarray(self.srot[r:r + 1, k:k + 1]),
                            np.ascontiguousarray(self.h[k:k + 1]), self.mu[k:k + 1], self.eps[k:k + 1], out)
                y = y + out
        return y


class NoiseShapingSet(ProjectionSet):
    """One member per (target, steering direction); member ``i`` couples ``x`` with ``d[target[i]]``."""

    label = "noise"

    def __init__(self, layout: Layout, steering, targets, reference, delta, tol: float = 1e-12):
        self.layout = layout
        self.steering = [np.asarray(a, dtype=complex) for a in steering]
        self.targets = list(targets)
        self.reference = np.asarray(reference, dtype=complex)
        self.delta = np.asarray(delta, dtype=float)
        self.count = len(self.steering)
        self.tol = tol

    def project(self, y, member=0):
        lay = self.layout
        k = self.targets[member]
        out = y.copy()
        d = lay.view(out, "d")
        x, dk = project_noise_shaping(lay.view(y, "x"), d[k], self.steering[member], self.reference[k],
                                      float(self.delta[k]), self.tol)
        lay.view(out, "x")[...] = x
        d[k] = dk
        return out

    def residual_values(self, y) -> np.ndarray:
        x = self.layout.view(y, "x")
        d = self.layout.view(y, "d")
        return np.array([np.mean(np.abs(x @ a.conj() - d[k] * self.reference[k]) ** 2)
                         for a, k in zip(self.steering, self.targets)])


class PowerSet(ProjectionSet):
    label = "power"

    def __init__(self, layout: Layout, power: float):
        self.layout = layout
        self.power = float(power)

    def project(self, y, member=0):
        out = y.copy()
        x = self.layout.view(out, "x")
        x[...] = project_power_ball(self.layout.view(y, "x"), self.power)
        return out


class SocSet(ProjectionSet):
    """Per-slot cones ``||x_l|| <= r_l`` (disjoint blocks, so batched exactly)."""

    label = "soc"

    def __init__(self, layout: Layout, frame_len: int):
        self.layout = layout
        self.count = frame_len

    def _targets(self, y):
        x = self.layout.view(y, "x")
        r = self.layout.view(y, "r")
        nx = np.linalg.norm(x, axis=1)
        t = 0.5 * (nx + r)
        scale = np.where(nx > 0, t / np.where(nx > 0, nx, 1.0), 0.0)
        inside = nx <= r
        polar = nx <= -r
        new_x = np.where(inside[:, None], x, np.where(polar[:, None], 0.0, x * scale[:, None]))
        new_r = np.where(inside, r, np.where(polar, 0.0, t))
        return x, r, new_x, new_r

    def accumulate(self, y, out):
        x, r, nx_, nr = self._targets(y)
        dx = nx_ - x
        dr = nr - r
        self.layout.view(out, "x")[...] += dx
        self.layout.view(out, "r")[...] += dr
        return np.sqrt(np.sum(np.abs(dx) ** 2, axis=1) + dr**2)

    def project(self, y, member=0):
        out = y.copy()
        x = self.layout.view(out, "x")
        r = self.layout.view(out, "r")
        x[member], r[member] = project_soc(self.layout.view(y, "x")[member], self.layout.view(y, "r")[member])
        return out

    def project_cyclic(self, y):
        out = y.copy()
        _, _, nx_, nr = self._targets(y)
        self.layout.view(out, "x")[...] = nx_
        self.layout.view(out, "r")[...] = nr
        return out


class QamMarginSet(ProjectionSet):
    """The joint margin-box set on ``(upsilon, tau)``.

    With ``eps`` given, the boxes are tightened by ``eps_k r_l`` using the
    slack radii of the point being projected (held fixed inside this set).
    """

    label = "qam"

    def __init__(self, layout: Layout, bounds: QamBounds, eps=None):
        self.layout = layout
        self.bounds = bounds
        self.eps = None if eps is None else np.broadcast_to(np.asarray(eps, float), (bounds.n_users,))

    def _bounds(self, y):
        if self.eps is None:
            return self.bounds
        r = self.layout.view(y, "r")
        return self.bounds.tightened(self.eps[:, None] * r[None, :])

    def project(self, y, member=0):
        lay = self.layout
        out = y.copy()
        ups, tau = project_qam_margins(lay.view(y, "upsilon").T, lay.view(y, "tau"), self._bounds(y))
        lay.view(out, "upsilon")[...] = ups.T
        lay.view(out, "tau")[...] = tau
        return out

    def slack(self, y) -> np.ndarray:
        lay = self.layout
        return self._bounds(y).slack(lay.view(y, "upsilon").T, lay.view(y, "tau"))


class CouplingSet(ProjectionSet):
    """Per-slot affine sets ``upsilon_l = H x_l``; the inverse factor is computed once."""

    label = "coupling"

    def __init__(self, layout: Layout, channel_matrix, frame_len: int):
        self.layout = layout
        self.H = np.asarray(channel_matrix, dtype=complex)
        self.inverse = np.linalg.inv(self.H.conj().T @ self.H + np.eye(self.H.shape[1]))
        self.count = frame_len

    def _targets(self, y):
        x = self.layout.view(y, "x")
        ups = self.layout.view(y, "upsilon")
        nx_, nu = project_channel_coupling(x, ups, self.H, self.inverse)
        return x, ups, nx_, nu

    def accumulate(self, y, out):
        x, ups, nx_, nu = self._targets(y)
        dx, du = nx_ - x, nu - ups
        self.layout.view(out, "x")[...] += dx
        self.layout.view(out, "upsilon")[...] += du
        return np.sqrt(np.sum(np.abs(dx) ** 2, axis=1) + np.sum(np.abs(du) ** 2, axis=1))

    def project(self, y, member=0):
        out = y.copy()
        x, ups, nx_, nu = self._targets(y)
        self.layout.view(out, "x")[member] = nx_[member]
        self.layout.view(out, "upsilon")[member] = nu[member]
        return out

    def project_cyclic(self, y):
        out = y.copy()
        _, _, nx_, nu = self._targets(y)
        self.layout.view(out, "x")[...] = nx_
        self.layout.view(out, "upsilon")[...] = nu
        return out
