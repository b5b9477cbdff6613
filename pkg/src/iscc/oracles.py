"""Independent reference projections.

Two families of oracles share the output layout of the closed-form routines
in :mod:`iscc.projections`:

* dense oracles work on real-stacked variables with generic linear algebra:
  single-constraint sets are solved through the scalar dual equation with a
  dense ``(I + lam Q)`` solve and Brent root finding, the cone and the QAM
  boxes by bounded 1-D search over the scalar variable;
* conic oracles hand the same problems to cvxpy (optional dependency,
  imported on first use).
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .array_model import rng_stream
from .projections import (QamBounds, project_channel_coupling, project_noise_shaping, project_power_ball,
                          project_qam_margins, project_radar_surrogate, project_robust_sep_halfspace,
                          project_sep_halfspace, project_soc)
from .surrogate import RadarSurrogate


def _cvx():
    try:
        import cvxpy as cp
    except ImportError as exc:   # pragma: no cover - depends on the environment
        raise RuntimeError("oracles need cvxpy (pip install 'artifact[oracle]')") from exc
    return cp


def _solve(problem):
    cp = _cvx()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if "CLARABEL" in cp.installed_solvers():
            problem.solve(solver="CLARABEL", tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
        else:
            problem.solve()
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"oracle solver status {problem.status}")


# ---------------------------------------------------------------------------
# dense oracles
# ---------------------------------------------------------------------------

def realify_vec(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).ravel()
    return np.concatenate([z.real, z.imag])


def complexify_vec(v) -> np.ndarray:
    n = v.size // 2
    return v[:n] + 1j * v[n:]


def realify_map(m) -> np.ndarray:
    """Real ``(2p, 2n)`` matrix of ``z -> M z`` acting on ``[Re z; Im z]``."""
    m = np.asarray(m, dtype=complex)
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


def qcqp_project(x0, quad, lin, const, tol: float = 1e-15) -> np.ndarray:
    """Projection of ``x0`` onto ``{v : v^T Q v + 2 q^T v + c <= 0}`` with ``Q`` PSD.

    Solves ``g(v(lam)) = 0`` for the multiplier, ``v(lam) = (I + lam Q)^{-1}(x0 - lam q)``.
    """
    x0 = np.asarray(x0, dtype=float)
    eye = np.eye(x0.size)

    def point(lam):
        return np.linalg.solve(eye + lam * quad, x0 - lam * lin)

    def g(lam):
        v = point(lam)
        return float(v @ quad @ v + 2 * lin @ v + const)

    if g(0.0) <= 0:
        return x0.copy()
    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
        if hi > 1e30:
            raise RuntimeError("multiplier bracket failed")
    lam = brentq(g, 0.0, hi, xtol=tol * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return point(lam)


def dense_power_ball(x, power):
    v = realify_vec(x)
    return complexify_vec(qcqp_project(v, np.eye(v.size), np.zeros(v.size), -power)).reshape(np.shape(x))


def dense_sep_halfspace(x, h_tilde, mu):
    v = realify_vec(x)
    return complexify_vec(qcqp_project(v, np.zeros((v.size, v.size)), -0.5 * realify_vec(h_tilde), mu))


def dense_robust_sep_halfspace(x, r, h_tilde, mu, eps):
    v = np.append(realify_vec(x), r)
    lin = np.append(-0.5 * realify_vec(h_tilde), 0.5 * eps)
    out = qcqp_project(v, np.zeros((v.size, v.size)), lin, mu)
    return complexify_vec(out[:-1]), float(out[-1])


def dense_radar_surrogate(x, xi, surrogate: RadarSurrogate):
    xf = np.asarray(x, dtype=complex).ravel()
    gmap = realify_map(surrogate.factors.conj().T)
    n = 2 * xf.size
    quad = np.zeros((n + 1, n + 1))
    quad[:n, :n] = gmap.T @ gmap
    lin = np.append(-realify_vec(surrogate.linear), -0.5)
    out = qcqp_project(np.append(realify_vec(xf), xi), quad, lin, -surrogate.const)
    return complexify_vec(out[:-1]).reshape(np.shape(x)), float(out[-1])


def dense_noise_shaping(x_slots, d, a_t, u, delta):
    frame, n = x_slots.shape
    m = np.zeros((frame, frame * n + 1), dtype=complex)
    for l in range(frame):
        m[l, l * n:(l + 1) * n] = np.conj(a_t)
    m[:, -1] = -np.asarray(u)
    bmap = realify_map(m)
    v = realify_vec(np.append(np.asarray(x_slots).ravel(), d))
    out = complexify_vec(qcqp_project(v, bmap.T @ bmap, np.zeros(v.size), -frame * delta))
    return out[:-1].reshape(frame, n), complex(out[-1])


def dense_channel_coupling(x_slot, ups_slot, channel_matrix):
    h = np.asarray(channel_matrix, dtype=complex)
    cmap = realify_map(np.hstack([h, -np.eye(h.shape[0])]))
    v = realify_vec(np.append(x_slot, ups_slot))
    out = complexify_vec(v - cmap.T @ np.linalg.solve(cmap @ cmap.T, cmap @ v))
    n = np.size(x_slot)
    return out[:n], out[n:]


def _bounded_min(f, lo, hi, grid: int = 2001):
    ts = np.linspace(lo, hi, grid)
    vals = np.array([f(t) for t in ts])
    i = int(np.argmin(vals))
    a, b = ts[max(i - 1, 0)], ts[min(i + 1, grid - 1)]
    if b <= a:
        return float(ts[i])
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": 1e-13, "maxiter": 2000})
    return float(res.x) if res.fun <= vals[i] else float(ts[i])


def grid_soc(x, r):
    """Cone projection by 1-D search over the radius."""
    nx = float(np.linalg.norm(x))

    def f(t):
        return (t - r) ** 2 + max(nx - t, 0.0) ** 2

    t = _bounded_min(f, 0.0, nx + abs(r) + 1.0)
    z = np.asarray(x) * (min(1.0, t / nx) if nx > 0 else 0.0)
    return z, t


def _interval_dist2(v, lo, up):
    return np.where(v < lo, (lo - v) ** 2, np.where(v > up, (v - up) ** 2, 0.0))


def grid_qam_margins(upsilon, tau, bounds: QamBounds):
    """QAM box projection by 1-D search over each dynamic range, then per-entry clipping."""
    ups = np.asarray(upsilon, dtype=complex)
    parts = (ups.real, ups.imag)
    out = [np.empty_like(parts[0]), np.empty_like(parts[1])]
    t_out = np.empty((ups.shape[0], 2))
    for k in range(ups.shape[0]):
        for i in range(2):
            s = bounds.levels[k, :, i]
            a, c = bounds.a[k, :, i], bounds.c[k, :, i]
            ha, hc = bounds.has_a[k, :, i], bounds.has_c[k, :, i]
            vb, tb = parts[i][k], float(tau[k, i])
            both = ha & hc
            t_min = max(0.0, float(np.max(np.where(both, 0.5 * (a + c), 0.0))))

            def lims(t):
                lo = np.where(ha, (s - 1) * t + a, -np.inf)
                up = np.where(hc, (s + 1) * t - c, np.inf)
                return lo, up

            def f(t):
                lo, up = lims(t)
                return (t - tb) ** 2 + float(np.sum(_interval_dist2(vb, lo, up)))

            t_hi = t_min + abs(tb) + float(np.max(np.abs(vb))) + float(np.max(a + c)) + 1.0
            t = _bounded_min(f, t_min, t_hi)
            lo, up = lims(t)
            out[i][k] = np.clip(vb, lo, up)
            t_out[k, i] = t
    return out[0] + 1j * out[1], t_out


# ---------------------------------------------------------------------------
# conic oracles
# ---------------------------------------------------------------------------

def oracle_power_ball(x, power):
    cp = _cvx()
    z = cp.Variable(x.shape, complex=True)
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(z - x)), [cp.sum_squares(z) <= power]))
    return z.value


def oracle_sep_halfspace(x, h_tilde, mu):
    cp = _cvx()
    z = cp.Variable(x.shape, complex=True)
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(z - x)), [cp.real(np.conj(h_tilde) @ z) >= mu]))
    return z.value


def oracle_robust_sep_halfspace(x, r, h_tilde, mu, eps):
    cp = _cvx()
    z = cp.Variable(x.shape, complex=True)
    t = cp.Variable()
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(z - x) + cp.square(t - r)),
                      [cp.real(np.conj(h_tilde) @ z) - eps * t >= mu]))
    return z.value, float(t.value)


def oracle_soc(x, r):
    cp = _cvx()
    z = cp.Variable(x.shape, complex=True)
    t = cp.Variable()
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(z - x) + cp.square(t - r)), [cp.norm(z) <= t]))
    return z.value, float(t.value)


def oracle_radar_surrogate(x, xi, surrogate: RadarSurrogate):
    cp = _cvx()
    xf = np.asarray(x).reshape(-1)
    z = cp.Variable(xf.shape, complex=True)
    t = cp.Variable()
    g = surrogate.factors
    val = -cp.sum_squares(g.conj().T @ z) + 2 * cp.real(np.conj(surrogate.linear) @ z) + surrogate.const
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(z - xf) + cp.square(t - xi)), [val + t >= 0]))
    return z.value.reshape(np.shape(x)), float(t.value)


def oracle_noise_shaping(x_slots, d, a_t, u, delta):
    cp = _cvx()
    z = cp.Variable(x_slots.shape, complex=True)
    e = cp.Variable(complex=True)
    res = z @ np.conj(a_t) - e * u
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(z - x_slots) + cp.square(cp.abs(e - d))),
                      [cp.sum_squares(res) <= x_slots.shape[0] * delta]))
    return z.value, complex(e.value)


def oracle_channel_coupling(x_slot, ups_slot, channel_matrix):
    cp = _cvx()
    z = cp.Variable(x_slot.shape, complex=True)
    v = cp.Variable(ups_slot.shape, complex=True)
    _solve(cp.Problem(cp.Minimize(cp.sum_squares(z - x_slot) + cp.sum_squares(v - ups_slot)),
                      [v == channel_matrix @ z]))
    return z.value, v.value


def oracle_qam_margins(upsilon, tau, bounds: QamBounds):
    cp = _cvx()
    k, n = upsilon.shape
    v = [cp.Variable((k, n)), cp.Variable((k, n))]
    t = cp.Variable((k, 2), nonneg=True)
    parts = (upsilon.real, upsilon.imag)
    cons = []
    for i in range(2):
        lvl, a, c = bounds.levels[..., i], bounds.a[..., i], bounds.c[..., i]
        for kk in range(k):
            for ll in range(n):
                if bounds.has_a[kk, ll, i]:
                    cons.append(v[i][kk, ll] >= (lvl[kk, ll] - 1) * t[kk, i] + a[kk, ll])
                if bounds.has_c[kk, ll, i]:
                    cons.append(v[i][kk, ll] <= (lvl[kk, ll] + 1) * t[kk, i] - c[kk, ll])
    obj = cp.sum_squares(v[0] - parts[0]) + cp.sum_squares(v[1] - parts[1]) + cp.sum_squares(t - tau)
    _solve(cp.Problem(cp.Minimize(obj), cons))
    return v[0].value + 1j * v[1].value, t.value


# ---------------------------------------------------------------------------
# random cases and the suite runner
# ---------------------------------------------------------------------------

def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_surrogate(rng, n: int = 6, c: int = 3) -> RadarSurrogate:
    g = _cn(rng, n, c)
    u, s, _ = np.linalg.svd(g, full_matrices=False)
    return RadarSurrogate(g, _cn(rng, n) * 2, float(rng.uniform(-1, 1)), u, s**2, 0.0)


def random_qam_bounds(rng, k: int, n: int, top: int = 3) -> QamBounds:
    levels = rng.choice(np.arange(-top, top + 1, 2), size=(k, n, 2)).astype(float)
    alpha = rng.uniform(0.1, 1.0, size=(k, 1, 1))
    beta = alpha * rng.uniform(0.5, 1.0, size=(k, 1, 1))
    interior = np.abs(levels) < top
    a = np.where(interior, alpha, np.where(levels > 0, beta, 0.0))
    c = np.where(interior, alpha, np.where(levels < 0, beta, 0.0))
    return QamBounds(levels, a, c, interior | (levels > 0), interior | (levels < 0))


def _gap(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


DENSE = {
    "power_ball": dense_power_ball, "sep_halfspace": dense_sep_halfspace,
    "robust_halfspace": dense_robust_sep_halfspace, "soc": grid_soc, "radar_surrogate": dense_radar_surrogate,
    "noise_shaping": dense_noise_shaping, "channel_coupling": dense_channel_coupling,
    "qam_margins": grid_qam_margins,
}
CONIC = {
    "power_ball": oracle_power_ball, "sep_halfspace": oracle_sep_halfspace,
    "robust_halfspace": oracle_robust_sep_halfspace, "soc": oracle_soc, "radar_surrogate": oracle_radar_surrogate,
    "noise_shaping": oracle_noise_shaping, "channel_coupling": oracle_channel_coupling,
    "qam_margins": oracle_qam_margins,
}
# oracles built on a 1-D grid search; the remaining ones are exact up to root finding
GRID_ORACLES = ("soc", "qam_margins")


def _flat(*parts) -> np.ndarray:
    return np.concatenate([np.atleast_1d(np.asarray(p, dtype=complex)).ravel() for p in parts])


def projection_cases(rng, oracles=DENSE):
    """Yield ``(name, closed_form_output, oracle_output)`` for one random draw of every projection family."""
    n = 5
    x = _cn(rng, n) * 3
    power = float(rng.uniform(0.5, 4.0))
    yield "power_ball", project_power_ball(x, power), oracles["power_ball"](x, power)
    h = _cn(rng, n)
    mu = float(rng.uniform(0.5, 5.0))
    yield "sep_halfspace", project_sep_halfspace(x, h, mu), oracles["sep_halfspace"](x, h, mu)
    r = float(rng.uniform(-1, 2))
    eps = float(rng.uniform(0, 0.5))
    yield ("robust_halfspace", _flat(*project_robust_sep_halfspace(x, r, h, mu, eps)),
           _flat(*oracles["robust_halfspace"](x, r, h, mu, eps)))
    yield "soc", _flat(*project_soc(x, r)), _flat(*oracles["soc"](x, r))
    sur = random_surrogate(rng)
    xs = _cn(rng, 6)
    xi = float(rng.uniform(0, 5))
    z, t, _ = project_radar_surrogate(xs, xi, sur)
    yield "radar_surrogate", _flat(z, t), _flat(*oracles["radar_surrogate"](xs, xi, sur))
    frame = 4
    xl = _cn(rng, frame, n) * 2
    a = np.exp(1j * np.pi * np.arange(n) * rng.uniform(-1, 1)) / np.sqrt(n)
    u = _cn(rng, frame)
    d = complex(_cn(rng, 1)[0])
    delta = float(rng.uniform(0.05, 0.5))
    yield ("noise_shaping", _flat(*project_noise_shaping(xl, d, a, u, delta)),
           _flat(*oracles["noise_shaping"](xl, d, a, u, delta)))
    hm = _cn(rng, 2, n)
    v = _cn(rng, 2)
    yield ("channel_coupling", _flat(*project_channel_coupling(x, v, hm)),
           _flat(*oracles["channel_coupling"](x, v, hm)))
    bounds = random_qam_bounds(rng, 2, 6)
    ups = _cn(rng, 2, 6) * 3
    tau = rng.uniform(0, 2, size=(2, 2))
    yield "qam_margins", _flat(*project_qam_margins(ups, tau, bounds)), _flat(*oracles["qam_margins"](ups, tau, bounds))


def run_suite(suite: str = "projections", seed: int = 0, cases: int = 100, tol: float = 1e-6,
              grid_tol: float = 1e-3) -> list:
    """Compare every closed-form projection with an oracle on random cases.

    ``suite="projections"`` uses the dense and grid oracles, ``"conic"`` the
    cvxpy ones (whose interior-point accuracy warrants ``tol`` around 1e-5).
    Returns ``[(name, ok, detail), ...]`` with the worst relative gap per family.
    """
    if suite not in ("projections", "conic"):
        raise ValueError(f"unknown oracle suite {suite!r}")
    oracles = DENSE if suite == "projections" else CONIC
    worst: dict = {}
    for case in range(cases):
        for name, ours, ref in projection_cases(rng_stream(seed, "oracle", case), oracles):
            worst[name] = max(worst.get(name, 0.0), _gap(ours, ref))
    out = []
    for name, gap in worst.items():
        limit = grid_tol if (suite == "projections" and name in GRID_ORACLES) else tol
        out.append((name, gap <= limit, f"max relative gap {gap:.2e} over {cases} cases (limit {limit:g})"))
    return out
