import numpy as np
import pytest
from hypothesis import given, strategies as st

from iscc.metrics import min_scnr
from iscc.mm import SolveOptions
from iscc.psk import solve_iscc_psk
from iscc.qam import solve_iscc_qam
from iscc.robust import (UncertaintyModel, angle_grid, solve_robust_psk, solve_robust_qam, worst_case_qam_offset,
                         worst_case_sep_margin_psk)

from conftest import cn, small_problem

OPTS = SolveOptions(max_outer=10)


def test_angle_grid_examples():
    np.testing.assert_allclose(angle_grid(0.2, 0.1, 3), [0.1, 0.2, 0.3])
    np.testing.assert_allclose(angle_grid(0.2, 0.1, 1), [0.2])
    g = angle_grid(0.0, 0.1, 4, "chebyshev")
    assert np.all(np.abs(g) < 0.1) and np.allclose(np.sort(g), -np.sort(g)[::-1])
    with pytest.raises(ValueError):
        angle_grid(0.0, 0.1, 0)
    with pytest.raises(ValueError):
        angle_grid(0.0, 0.1, 3, "random")


def test_uncertainty_model_validation():
    m = UncertaintyModel.uniform(2, 1, 0.1, 0.0, 5)
    assert m.eps_user == (0.1, 0.1) and m.eps_target == (0.0,)
    with pytest.raises(ValueError):
        UncertaintyModel((-0.1,), (0.0,))
    with pytest.raises(ValueError):
        UncertaintyModel((0.1,), (0.0,), grid_size=0)


def test_worst_case_margin_example():
    assert worst_case_sep_margin_psk(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 1.0, 0.1) == pytest.approx(0.9)
    assert worst_case_qam_offset(np.array([3.0, 4.0]), 0.2) == pytest.approx(1.0)


@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_worst_case_margin_is_attained_and_bounds_samples(seed, eps):
    rng = np.random.default_rng(seed)
    x, h = cn(rng, 4), cn(rng, 4)
    s = np.exp(1j * rng.uniform(0, 2 * np.pi))
    wc = worst_case_sep_margin_psk(x, h, s, eps)
    # the minimising perturbation lies on the sphere, opposite to x s
    dh = -eps * x * s / np.linalg.norm(x)
    assert (np.vdot(h + dh, x) * s).real == pytest.approx(wc, abs=1e-10)
    for _ in range(20):
        u = cn(rng, 4)
        u *= eps * rng.uniform() ** 0.25 / np.linalg.norm(u)
        assert (np.vdot(h + u, x) * s).real >= wc - 1e-12
        # each axis of the received sample moves by at most eps ||x||
        off = np.vdot(u, x)
        assert max(abs(off.real), abs(off.imag)) <= worst_case_qam_offset(x, eps) + 1e-12


def test_zero_uncertainty_matches_nominal_psk():
    cfg, scene, frame, aux = small_problem()
    w_n, _, _ = solve_iscc_psk(scene, cfg, frame, aux, OPTS)
    w_r, _, r, rep = solve_robust_psk(scene, UncertaintyModel.uniform(1, 1, 0.0, 0.0), cfg, frame, aux, OPTS)
    assert min_scnr(w_r, scene, cfg) == pytest.approx(min_scnr(w_n, scene, cfg), rel=1e-3)
    assert np.all(r >= np.linalg.norm(np.asarray(w_r), axis=1) - 1e-6)


def test_zero_uncertainty_matches_nominal_qam():
    cfg, scene, frame, aux = small_problem("16qam", power=120.0)
    w_n, _, _, _ = solve_iscc_qam(scene, cfg, frame, aux, OPTS)
    w_r, _, _, _, _ = solve_robust_qam(scene, UncertaintyModel.uniform(1, 1, 0.0, 0.0), cfg, frame, aux, OPTS)
    assert min_scnr(w_r, scene, cfg) == pytest.approx(min_scnr(w_n, scene, cfg), rel=1e-3)


def test_channel_uncertainty_costs_sensing_and_holds_worst_case():
    cfg, scene, frame, aux = small_problem()
    w0, _, _, _ = solve_robust_psk(scene, UncertaintyModel.uniform(1, 1, 0.0, 0.0), cfg, frame, aux, OPTS)
    w1, _, _, rep = solve_robust_psk(scene, UncertaintyModel.uniform(1, 1, 0.3, 0.0), cfg, frame, aux, OPTS)
    assert min_scnr(w1, scene, cfg) < min_scnr(w0, scene, cfg)
    assert rep.residuals["worst_sep_margin_min_excess"] >= -1e-6


def test_angle_uncertainty_reports_grid_scnr():
    cfg, scene, frame, aux = small_problem()
    w, _, _, rep = solve_robust_psk(scene, UncertaintyModel.uniform(1, 1, 0.0, 0.1, 3), cfg, frame, aux, OPTS)
    assert rep.extra["grid_min_scnr"] <= rep.extra["nominal_min_scnr"]
    assert rep.extra["fine_grid_min_scnr"] <= rep.extra["grid_min_scnr"] * (1 + 1e-9)


def test_robust_rejects_mismatched_model():
    cfg, scene, frame, aux = small_problem()
    with pytest.raises(ValueError):
        solve_robust_psk(scene, UncertaintyModel.uniform(2, 1, 0.1, 0.0), cfg, frame, aux, OPTS)
    cfg, scene, frame, aux = small_problem("16qam")
    with pytest.raises(ValueError):
        solve_robust_psk(scene, UncertaintyModel.uniform(1, 1, 0.1, 0.0), cfg, frame, aux, OPTS)
