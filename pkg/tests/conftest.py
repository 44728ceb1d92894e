import numpy as np
import pytest

from dranloc.geometry import PinholeCamera, PoseSE3, se3_exp
from dranloc.synth import SynthConfig, generate_scene


def random_pose(rng, t_scale=1.0):
    return se3_exp(np.concatenate([rng.normal(size=3) * t_scale, rng.uniform(-1, 1, 3)]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    return PinholeCamera(180.0, 180.0, 127.5, 95.5, 256, 192)


@pytest.fixture(scope="session")
def clean_bench():
    """Small noise-free synthetic benchmark shared across test modules."""
    cfg = SynthConfig(num_keyframes=10, num_queries=6, pixel_noise=0.0, feature_noise=0.0, seed=7)
    return generate_scene(cfg)


@pytest.fixture(scope="session")
def saved_bench(tmp_path_factory):
    """Small noisy benchmark written to disk for the CLI tests."""
    cfg = SynthConfig(num_keyframes=8, num_queries=5, points_per_keyframe=80, seed=11)
    root = tmp_path_factory.mktemp("bench") / "bench"
    bench = generate_scene(cfg)
    bench.save(str(root))
    return root, bench


__all__ = ["random_pose", "PoseSE3"]


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
