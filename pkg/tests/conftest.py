import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from iscc.harness import DESK_SCENE, build_scene

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk():
    """Default desk scene: ``(cfg, scene)``."""
    return build_scene(json.loads(json.dumps(DESK_SCENE)), 1)


def small_problem(constellation="qpsk", n_users=1, delta=0.5, power=40.0, seed=3):
    """A 4-antenna, 4-slot scene for quick solver tests: ``(cfg, scene, frame, aux)``."""
    from iscc.array_model import (Constellation, NoiseShapingAux, Scene, SystemConfig, TargetSpec, UserSpec,
                                  draw_noise_reference, draw_symbol_frame, rng_stream, sample_rician_channels)
    cfg = SystemConfig(4, 4, 4, power, user_noise_powers=(1.0,) * n_users)
    users = [UserSpec(0.15 * (k + 1), 10.0, 3) for k in range(n_users)]
    chans = sample_rician_channels(cfg, users, rng_stream(seed, "channels")) if n_users else None
    scene = Scene((TargetSpec(-0.5, 1.0, ((0.6, 1.0),)),), chans)
    const = Constellation.from_name(constellation)
    frame = draw_symbol_frame(const, n_users, 4, rng_stream(seed, "symbols")) if n_users else None
    aux = NoiseShapingAux.create(draw_noise_reference(1, 4, rng_stream(seed, "noise_reference")), delta)
    return cfg, scene, frame, aux


# one summary line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
