import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iscc.array_model import SystemConfig, TargetSpec, steering_vector
from iscc.pda import (Layout, PenaltySchedule, ProjectionSet, StopRule, max_residual, pda_solve, pda_step,
                      penalized_objective, restore_feasibility, write_trace_csv)
from iscc.projections import NoiseShapingSet, PowerSet, RadarSet, SepSet
from iscc.surrogate import build_surrogate

from conftest import cn


class Halfspace(ProjectionSet):
    """``{y : n . y >= b}`` on the flat real vector."""

    def __init__(self, normal, offset):
        self.normal = np.asarray(normal, dtype=float)
        self.offset = float(offset)

    def project(self, y, member=0):
        gap = self.offset - self.normal @ y
        return y + max(gap, 0.0) / (self.normal @ self.normal) * self.normal


LP = Layout([("x", (1,), False), ("xi", (1,), False)])


def lp_sets():
    # y = (x, xi): xi >= 1 - x, xi >= x, 0 <= x <= 1
    return [Halfspace([1, 1], 1), Halfspace([-1, 1], 0), Halfspace([1, 0], 0), Halfspace([-1, 0], -1)]


def test_penalized_objective_cases():
    sets = lp_sets()
    y = np.array([0.5, 0.6])
    assert penalized_objective(y, sets, 3.0, LP) == pytest.approx(0.6)
    # one violated halfspace at distance t
    y = np.array([0.5, 0.3])
    t = 0.2 / np.sqrt(2)
    assert penalized_objective(y, [Halfspace([1, 1], 1)], 2.0, LP) == pytest.approx(0.3 + t**2)
    loop = 0.3 + 2.0 / (2 * 4) * sum(np.linalg.norm(s.project(y) - y) ** 2 for s in sets)
    assert penalized_objective(y, sets, 2.0, LP) == pytest.approx(loop, abs=1e-12)
    with pytest.raises(ValueError):
        penalized_objective(y, sets, 0.0, LP)


def test_pda_step_cases():
    y = np.array([0.5, 0.6])
    out = pda_step(y, lp_sets(), 4.0, LP)
    np.testing.assert_allclose(out, [0.5, 0.6 - 0.25])
    y = np.array([0.2, 0.1])
    one = Halfspace([1, 1], 1)
    np.testing.assert_allclose(pda_step(y, [one], 2.0, LP), one.project(y) - [0, 0.5])
    two = [Halfspace([1, 1], 1), Halfspace([-1, 1], 0)]
    # hand computation: projections (0.55, 0.45) and (0.15, 0.15) averaged, then xi - 1/rho
    np.testing.assert_allclose(pda_step(y, two, 1.0, LP), [0.35, 0.3 - 1.0])


def test_pda_toy_lp():
    schedule = PenaltySchedule(1.0, 1.2, 20, 1e9, adaptive=True)
    res = pda_solve(np.array([0.0, 0.0]), lp_sets(), LP, schedule, True, StopRule(20000, 1e-7, 1e-10))
    assert res.converged
    assert res.y[1] == pytest.approx(0.5, abs=1e-3)
    assert res.y[0] == pytest.approx(0.5, abs=1e-3)


@given(st.integers(0, 2**31 - 1))
def test_penalized_objective_monotone_without_acceleration(seed):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(2) * 3
    for _ in range(30):
        nxt = pda_step(y, lp_sets(), 2.0, LP)
        assert penalized_objective(nxt, lp_sets(), 2.0, LP) <= penalized_objective(y, lp_sets(), 2.0, LP) + 1e-10
        y = nxt


def test_rho_schedule_non_decreasing_and_capped():
    res = pda_solve(np.array([0.0, 0.0]), lp_sets(), LP, PenaltySchedule(1.0, 2.0, 5, 50.0), False,
                    StopRule(400, 1e-12, 1e-15))
    rhos = [row[2] for row in res.trace]
    assert all(b >= a for a, b in zip(rhos, rhos[1:]))
    assert max(rhos) == 50.0


def test_schedule_and_stop_validation():
    with pytest.raises(ValueError):
        PenaltySchedule(1.0, 1.0)
    with pytest.raises(ValueError):
        StopRule(0)
    with pytest.raises(ValueError):
        pda_solve(np.zeros(2), [], LP)


def test_restore_feasibility_and_trace(tmp_path):
    y, ok, sweeps = restore_feasibility(np.array([-3.0, -5.0]), lp_sets(), 1e-10)
    assert ok and max_residual(y, lp_sets()) <= 1e-10
    res = pda_solve(np.array([0.0, 0.0]), lp_sets(), LP, stop=StopRule(50, 1e-5, 1e-6))
    path = tmp_path / "trace.csv"
    write_trace_csv(path, res.trace)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,xi,rho,max_residual,step_norm" and len(lines) == len(res.trace) + 1


def test_psk_subproblem_matches_convex_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(4)
    cfg = SystemConfig(4, 4, 4, 10.0, user_noise_powers=(1.0,))
    target = TargetSpec(0.3, 1.0, ((-0.6, 1.0),))
    lay = Layout([("x", (4, 4), True), ("d", (1,), True), ("xi", (1,), False)])
    h = cn(rng, 1, 4) * 2
    s = np.exp(2j * np.pi * rng.integers(0, 4, (1, 4)) / 4)
    rot = np.stack([np.conj(s) * (np.sin(np.pi / 4) + 1j * np.cos(np.pi / 4)),
                    np.conj(s) * (np.sin(np.pi / 4) - 1j * np.cos(np.pi / 4))])
    mu = np.array([1.0])
    u = cn(rng, 1, 4)
    a = steering_vector(0.3, 4)
    xbar = np.tile(np.sqrt(10 / 4) * a, (4, 1))
    sur = build_surrogate(xbar, target, cfg)
    sets = [RadarSet(lay, [sur]), SepSet(lay, h, rot, mu), NoiseShapingSet(lay, [a], [0], u, np.array([0.5])),
            PowerSet(lay, 10.0)]
    y0 = lay.zeros()
    lay.view(y0, "x")[...] = xbar
    res = pda_solve(y0, sets, lay, PenaltySchedule(1.0, 1.2, 20, 1e9, adaptive=True), True,
                    StopRule(20000, 1e-6, 1e-10))
    x = cp.Variable(16, complex=True)
    d = cp.Variable(complex=True)
    g = sur.factors
    val = -cp.sum_squares(g.conj().T @ x) + 2 * cp.real(np.conj(sur.linear) @ x) + sur.const
    cons = [cp.sum_squares(x) <= 10.0,
            cp.sum_squares(cp.reshape(x, (4, 4), order="C") @ np.conj(a) - d * u[0]) <= 4 * 0.5]
    for r in range(2):
        for l in range(4):
            cons.append(cp.real(np.conj(h[0]) @ x[4 * l:4 * l + 4] * rot[r, 0, l]) >= mu[0])
    prob = cp.Problem(cp.Maximize(val), cons)
    prob.solve(solver="CLARABEL")
    xi_ref = -prob.value
    assert res.y[lay.slice("xi")][0] == pytest.approx(xi_ref, rel=1e-2)
