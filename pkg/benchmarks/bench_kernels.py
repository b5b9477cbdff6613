"""Compare the numba and numpy kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 200] [--solve]

The kernel table times each hot routine in both backends within one process.
``--solve`` also times a full desk-scale QPSK design in two subprocesses, one
with ``ISCC_NUMBA=0``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from iscc import kernels
from iscc.array_model import rng_stream


def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def kernel_inputs(seed: int = 0) -> dict:
    rng = rng_stream(seed, "oracle", 999)
    n_tx, n_slots, n_users = 8, 16, 2
    s2 = rng.uniform(0.5, 3.0, size=48)
    p, q = _cn(rng, 48), _cn(rng, 48)
    radar = (p, q, s2, float(np.vdot(q, p).real) - 5.0, float(np.vdot(q, q).real) + 1.0, -40.0, 1e-10)
    noise = (3.0, 1.5, 2.0, 1.6, 1e-12)
    srot = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(2, n_users, n_slots)))
    sep = (_cn(rng, n_slots, n_tx), np.ones(n_slots), _cn(rng, n_users, n_tx), srot,
           np.full(n_users, 3.0), np.full(n_users, 0.05))
    levels = rng.choice([-3.0, -1.0, 1.0, 3.0], size=n_slots)
    inner = np.abs(levels) < 3
    a = np.where(inner, 0.8, np.where(levels > 0, 0.6, 0.0))
    c = np.where(inner, 0.8, np.where(levels < 0, 0.6, 0.0))
    qam = (rng.standard_normal(n_slots) * 3, 1.0, levels, a, c, inner | (levels > 0), inner | (levels < 0))
    return {"radar_multiplier": radar, "noise_multiplier": noise, "sep_batch": sep, "qam_project_axis": qam}


def time_call(fn, args, repeat: int) -> float:
    fn(*args)                                   # warm-up and compilation
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e6


def kernel_table(repeat: int) -> list:
    inputs = kernel_inputs()
    rows = []
    for name, args in inputs.items():
        t_np = time_call(kernels.NUMPY_KERNELS[name], args, repeat)
        t_nb = time_call(kernels.NUMBA_KERNELS[name], args, repeat)
        rows.append((name, t_np, t_nb))
    return rows


SOLVE_SNIPPET = """
import time
import numpy as np
from iscc.harness import ExperimentPlan, point_setup, frame_inputs, design_frame
plan = ExperimentPlan(solver={"mm_tol": 1e-3, "step_tol": 1e-2})
setup = point_setup(plan, None, 1)
frame, aux = frame_inputs(setup, 1, 0)
design_frame("iscc", setup, frame, aux)
t0 = time.perf_counter()
design_frame("iscc", setup, frame, aux)
print(time.perf_counter() - t0)
"""


def solve_times() -> dict:
    out = {}
    for label, flag in (("numba", "1"), ("numpy", "0")):
        env = dict(os.environ, ISCC_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], env=env, capture_output=True, text=True,
                             check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--solve", action="store_true")
    args = ap.parse_args(argv)
    print(f"{'kernel':<20}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, t_np, t_nb in kernel_table(args.repeat):
        print(f"{name:<20}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>10.1f}")
    if args.solve:
        t = solve_times()
        print(f"desk QPSK design: numba {t['numba']:.2f} s, numpy {t['numpy']:.2f} s, "
              f"speedup {t['numpy'] / t['numba']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
