"""Hot inner loops of the projection operators.

Every kernel exists twice: a numba-compiled loop version (``*_nb``) and a
numpy/pure-Python reference (``*_np``).  The public names dispatch on
:data:`iscc._accel.USE_NUMBA`; both paths are tested against each other.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit

_MAX_BRACKET = 200
_MAX_BISECT = 200


# ---------------------------------------------------------------------------
# radar surrogate multiplier
# ---------------------------------------------------------------------------

def _radar_h_np(lam, p, q, s2, mx, mm, c0):
    w = p + lam * q
    den = 1.0 + lam * s2
    quad = np.sum(s2 * (w.real**2 + w.imag**2) / den**2)
    corr = np.sum((lam * s2 / den) * (q.conjugate() * w).real)
    return -quad + 2.0 * (mx + lam * mm - corr) + c0 + 0.5 * lam


def _radar_multiplier_np(p, q, s2, mx, mm, c0, tol):
    """Root of the (increasing) active-constraint function of the radar set."""
    hi = 1.0
    n = 0
    while _radar_h_np(hi, p, q, s2, mx, mm, c0) < 0.0:
        hi *= 2.0
        n += 1
        if n > _MAX_BRACKET:
            return -1.0
    lo = 0.0
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        val = _radar_h_np(mid, p, q, s2, mx, mm, c0)
        if val < 0.0:
            lo = mid
        else:
            hi = mid
            if val <= tol:
                break
        if hi - lo <= 1e-16 * hi:
            break
    return hi


@njit
def _radar_h_nb(lam, p, q, s2, mx, mm, c0):
    quad = 0.0
    corr = 0.0
    for i in range(p.shape[0]):
        w = p[i] + lam * q[i]
        den = 1.0 + lam * s2[i]
        quad += s2[i] * (w.real * w.real + w.imag * w.imag) / (den * den)
        corr += (lam * s2[i] / den) * (q[i].real * w.real + q[i].imag * w.imag)
    return -quad + 2.0 * (mx + lam * mm - corr) + c0 + 0.5 * lam


@njit
def _radar_multiplier_nb(p, q, s2, mx, mm, c0, tol):
    hi = 1.0
    n = 0
    while _radar_h_nb(hi, p, q, s2, mx, mm, c0) < 0.0:
        hi *= 2.0
        n += 1
        if n > _MAX_BRACKET:
            return -1.0
    lo = 0.0
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        val = _radar_h_nb(mid, p, q, s2, mx, mm, c0)
        if val < 0.0:
            lo = mid
        else:
            hi = mid
            if val <= tol:
                break
        if hi - lo <= 1e-16 * hi:
            break
    return hi


# ---------------------------------------------------------------------------
# noise-shaping multiplier
# ---------------------------------------------------------------------------

def _noise_multiplier_py(n_perp2, n_par2, sig2, target, tol):
    """Root of ``n_perp2/(1+l)^2 + n_par2/(1+l*sig2)^2 = target`` (decreasing in l)."""
    hi = 1.0
    n = 0
    while n_perp2 / (1.0 + hi) ** 2 + n_par2 / (1.0 + hi * sig2) ** 2 > target:
        hi *= 2.0
        n += 1
        if n > _MAX_BRACKET:
            return -1.0
    lo = 0.0
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        val = n_perp2 / (1.0 + mid) ** 2 + n_par2 / (1.0 + mid * sig2) ** 2 - target
        if val > 0.0:
            lo = mid
        else:
            hi = mid
            if -val <= tol:
                break
        if hi - lo <= 1e-16 * hi:
            break
    return hi


_noise_multiplier_nb = njit(_noise_multiplier_py)


# ---------------------------------------------------------------------------
# batched (robust) SEP halfspaces
# ---------------------------------------------------------------------------

def _sep_batch_np(x, r, h, srot, mu, eps):
    """Simultaneous projections onto ``Re{h_k^H x_l s} - eps_k r_l >= mu_k``.

    Returns the summed x- and r-displacements and the per-member distances
    (shape ``(R, K, L)`` for ``R`` rotations).
    """
    inner = np.conj(h) @ x.T                               # (K, L): h_k^H x_l
    val = (inner[None, :, :] * srot).real - eps[None, :, None] * r[None, None, :]
    hn2 = np.sum(h.real**2 + h.imag**2, axis=1)
    nrm2 = hn2 + eps**2
    viol = np.maximum(mu[None, :, None] - val, 0.0)
    coef = viol / nrm2[None, :, None]
    weights = np.einsum("rkl,rkl->kl", coef, np.conj(srot))  # sum over rotations
    disp_x = weights.T @ h
    disp_r = -np.einsum("rkl,k->l", coef, eps)
    dist = viol / np.sqrt(nrm2)[None, :, None]
    return disp_x, disp_r, dist


@njit
def _sep_batch_nb(x, r, h, srot, mu, eps):
    n_rot, n_users, n_slots = srot.shape
    n_tx = x.shape[1]
    disp_x = np.zeros_like(x)
    disp_r = np.zeros(n_slots)
    dist = np.zeros((n_rot, n_users, n_slots))
    for k in range(n_users):
        hn2 = 0.0
        for n in range(n_tx):
            hn2 += h[k, n].real ** 2 + h[k, n].imag ** 2
        nrm2 = hn2 + eps[k] ** 2
        for l in range(n_slots):
            inner = 0j
            for n in range(n_tx):
                inner += np.conj(h[k, n]) * x[l, n]
            for rr in range(n_rot):
                val = (inner * srot[rr, k, l]).real - eps[k] * r[l]
                viol = mu[k] - val
                if viol > 0.0:
                    coef = viol / nrm2
                    sc = coef * np.conj(srot[rr, k, l])
                    for n in range(n_tx):
                        disp_x[l, n] += sc * h[k, n]
                    disp_r[l] -= coef * eps[k]
                    dist[rr, k, l] = viol / math.sqrt(nrm2)
    return disp_x, disp_r, dist


# ---------------------------------------------------------------------------
# QAM dynamic-range breakpoint search (one user, one axis)
# ---------------------------------------------------------------------------

def _qam_objective_np(tau, vbar, tbar, s, a, c, has_a, has_c):
    lo = np.where(has_a, (s - 1.0) * tau + a, -np.inf)
    up = np.where(has_c, (s + 1.0) * tau - c, np.inf)
    v = np.minimum(np.maximum(vbar, lo), up)
    return (tau - tbar) ** 2 + np.sum((v - vbar) ** 2), v


def _qam_breakpoints_np(vbar, s, a, c, has_a, has_c):
    both = has_a & has_c
    tau_min = 0.0
    if np.any(both):
        tau_min = max(0.0, float(np.max(0.5 * (a[both] + c[both]))))
    m1 = has_a & (s != 1.0)
    m2 = has_c & (s != -1.0)
    pts = np.concatenate([(vbar[m1] - a[m1]) / (s[m1] - 1.0), (vbar[m2] + c[m2]) / (s[m2] + 1.0)])
    pts = pts[pts > tau_min]
    return tau_min, np.unique(np.concatenate([[tau_min], pts]))


def _qam_project_np(vbar, tbar, s, a, c, has_a, has_c):
    tau_min, omega = _qam_breakpoints_np(vbar, s, a, c, has_a, has_c)
    lefts = omega
    rights = np.append(omega[1:], np.inf)
    probes = np.where(np.isinf(rights), lefts + 1.0, 0.5 * (lefts + rights))
    # classify every slot inside every interval at a strictly interior probe
    lo = np.where(has_a, (s - 1.0)[None, :] * probes[:, None] + a, -np.inf)
    up = np.where(has_c, (s + 1.0)[None, :] * probes[:, None] - c, np.inf)
    below = vbar[None, :] < lo          # clamped to the lower bound
    above = vbar[None, :] > up          # clamped to the upper bound
    sl = (s - 1.0)[None, :]
    su = (s + 1.0)[None, :]
    num = tbar - np.sum(np.where(below, sl * (a - vbar), 0.0), axis=1) \
        + np.sum(np.where(above, su * (c + vbar), 0.0), axis=1)
    den = 1.0 + np.sum(np.where(below, sl**2, 0.0), axis=1) + np.sum(np.where(above, su**2, 0.0), axis=1)
    cand = np.clip(num / den, lefts, rights)
    best_tau, best_val, best_v = tau_min, np.inf, None
    for tau in cand:
        val, v = _qam_objective_np(tau, vbar, tbar, s, a, c, has_a, has_c)
        if val < best_val:
            best_tau, best_val, best_v = tau, val, v
    return best_v, best_tau


@njit
def _qam_objective_nb(tau, vbar, tbar, s, a, c, has_a, has_c, out):
    val = (tau - tbar) ** 2
    for l in range(vbar.shape[0]):
        v = vbar[l]
        if has_a[l]:
            lo = (s[l] - 1.0) * tau + a[l]
            if v < lo:
                v = lo
        if has_c[l]:
            up = (s[l] + 1.0) * tau - c[l]
            if v > up:
                v = up
        out[l] = v
        val += (v - vbar[l]) ** 2
    return val


@njit
def _qam_project_nb(vbar, tbar, s, a, c, has_a, has_c):
    n = vbar.shape[0]
    tau_min = 0.0
    for l in range(n):
        if has_a[l] and has_c[l]:
            t = 0.5 * (a[l] + c[l])
            if t > tau_min:
                tau_min = t
    pts = np.empty(2 * n + 1)
    m = 0
    pts[m] = tau_min
    m += 1
    for l in range(n):
        if has_a[l] and s[l] != 1.0:
            t = (vbar[l] - a[l]) / (s[l] - 1.0)
            if t > tau_min:
                pts[m] = t
                m += 1
        if has_c[l] and s[l] != -1.0:
            t = (vbar[l] + c[l]) / (s[l] + 1.0)
            if t > tau_min:
                pts[m] = t
                m += 1
    omega = np.sort(pts[:m])
    work = np.empty(n)
    best_v = np.empty(n)
    best_tau = tau_min
    best_val = np.inf
    for p in range(m):
        left = omega[p]
        if p + 1 < m:
            right = omega[p + 1]
            if right <= left:
                continue
            probe = 0.5 * (left + right)
        else:
            right = np.inf
            probe = left + 1.0
        num = tbar
        den = 1.0
        for l in range(n):
            if has_a[l]:
                lo = (s[l] - 1.0) * probe + a[l]
                if vbar[l] < lo:
                    num -= (s[l] - 1.0) * (a[l] - vbar[l])
                    den += (s[l] - 1.0) ** 2
                    continue
            if has_c[l]:
                up = (s[l] + 1.0) * probe - c[l]
                if vbar[l] > up:
                    num += (s[l] + 1.0) * (c[l] + vbar[l])
                    den += (s[l] + 1.0) ** 2
        tau = num / den
        if tau < left:
            tau = left
        if tau > right:
            tau = right
        val = _qam_objective_nb(tau, vbar, tbar, s, a, c, has_a, has_c, work)
        if val < best_val:
            best_val = val
            best_tau = tau
            best_v[:] = work
    return best_v, best_tau


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    radar_multiplier = _radar_multiplier_nb
    noise_multiplier = _noise_multiplier_nb
    sep_batch = _sep_batch_nb
    qam_project_axis = _qam_project_nb
else:
    radar_multiplier = _radar_multiplier_np
    noise_multiplier = _noise_multiplier_py
    sep_batch = _sep_batch_np
    qam_project_axis = _qam_project_np

NUMPY_KERNELS = {
    "radar_multiplier": _radar_multiplier_np,
    "noise_multiplier": _noise_multiplier_py,
    "sep_batch": _sep_batch_np,
    "qam_project_axis": _qam_project_np,
}
NUMBA_KERNELS = {
    "radar_multiplier": _radar_multiplier_nb,
    "noise_multiplier": _noise_multiplier_nb,
    "sep_batch": _sep_batch_nb,
    "qam_project_axis": _qam_project_nb,
}
