import os
import subprocess
import sys

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from iscc import kernels
from iscc.array_model import rng_stream

from conftest import cn

seeds = st.integers(0, 2**31 - 1)


@given(seeds)
def test_radar_multiplier_parity(seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 12))
    s2 = rng.uniform(0.1, 4.0, r)
    p, q = cn(rng, r) * 2, cn(rng, r)
    mx = float(rng.uniform(-3, 3))
    mm = float(np.vdot(q, q).real + rng.uniform(0.1, 2))
    c0 = float(rng.uniform(-30, -1))
    a = kernels.NUMPY_KERNELS["radar_multiplier"](p, q, s2, mx, mm, c0, 1e-12)
    b = kernels.NUMBA_KERNELS["radar_multiplier"](p, q, s2, mx, mm, c0, 1e-12)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@given(st.floats(0, 10), st.floats(0, 10), st.floats(1, 5), st.floats(0.01, 3))
def test_noise_multiplier_parity(n_perp, n_par, sig2, target):
    a = kernels.NUMPY_KERNELS["noise_multiplier"](n_perp, n_par, sig2, target, 1e-13)
    b = kernels.NUMBA_KERNELS["noise_multiplier"](n_perp, n_par, sig2, target, 1e-13)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@given(seeds, st.booleans())
def test_sep_batch_parity(seed, robust):
    rng = np.random.default_rng(seed)
    k, n, frame = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 8))
    x, h = cn(rng, frame, n), cn(rng, k, n)
    srot = np.exp(1j * rng.uniform(0, 2 * np.pi, (2, k, frame)))
    r = rng.uniform(0, 2, frame)
    mu = rng.uniform(0, 2, k)
    eps = rng.uniform(0, 0.5, k) if robust else np.zeros(k)
    out_np = kernels.NUMPY_KERNELS["sep_batch"](x, r, h, srot, mu, eps)
    out_nb = kernels.NUMBA_KERNELS["sep_batch"](x, r, h, srot, mu, eps)
    for a, b in zip(out_np, out_nb):
        np.testing.assert_allclose(a, b, atol=1e-12)


@given(seeds)
def test_qam_axis_parity(seed):
    rng = np.random.default_rng(seed)
    frame = int(rng.integers(1, 10))
    levels = rng.choice([-3.0, -1.0, 1.0, 3.0], frame)
    inner = np.abs(levels) < 3
    al = float(rng.uniform(0.1, 1))
    a = np.where(inner, al, np.where(levels > 0, 0.7 * al, 0.0))
    c = np.where(inner, al, np.where(levels < 0, 0.7 * al, 0.0))
    args = (rng.standard_normal(frame) * 3, float(rng.uniform(-1, 3)), levels, a, c, inner | (levels > 0),
            inner | (levels < 0))
    v1, t1 = kernels.NUMPY_KERNELS["qam_project_axis"](*args)
    v2, t2 = kernels.NUMBA_KERNELS["qam_project_axis"](*args)
    assert abs(t1 - t2) < 1e-10
    np.testing.assert_allclose(v1, v2, atol=1e-10)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, ISCC_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "import iscc; print(iscc.backend_name())"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_numpy_backend_runs_projections():
    code = ("import numpy as np\n"
            "from iscc.oracles import run_suite\n"
            "res = run_suite(cases=3)\n"
            "assert all(ok for _, ok, _ in res), res\n")
    env = dict(os.environ, ISCC_NUMBA="0")
    subprocess.run([sys.executable, "-c", code], env=env, check=True)


def test_default_backend_dispatch_is_consistent():
    table = kernels.NUMBA_KERNELS if kernels.USE_NUMBA else kernels.NUMPY_KERNELS
    assert kernels.radar_multiplier is table["radar_multiplier"]
    assert kernels.sep_batch is table["sep_batch"]
    assert rng_stream(0, "oracle").standard_normal() == rng_stream(0, "oracle").standard_normal()
