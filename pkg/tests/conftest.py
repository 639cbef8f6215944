import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meshtrace.camera import CameraRig, look_at, perspective, translation  # noqa: E402
from meshtrace.refine import RoiFeature  # noqa: E402


def toy_camera(depth=4.0):
    """Camera at the origin looking down +z at an object placed ``depth`` ahead."""
    return CameraRig(translation((0.0, 0.0, depth)), look_at((0, 0, 0), (0, 0, 1)),
                     perspective(np.deg2rad(50.0), 1.0, 0.1, 100.0), (0, 0, 128, 128))


def smooth_feature(seed=0, channels=3, size=28, box=(30.0, 30.0, 98.0, 98.0)):
    """Sum of random low-frequency sinusoids, so bilinear kinks stay tiny."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    data = np.zeros((channels, size, size))
    for c in range(channels):
        for _ in range(3):
            fx, fy, ph = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)
            data[c] += rng.normal() * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
    return RoiFeature(data, box)


@pytest.fixture
def camera():
    return toy_camera()


@pytest.fixture
def feature():
    return smooth_feature()


@pytest.fixture(scope="session")
def drift_clip(tmp_path_factory):
    """Small one-cube clip generated once per session."""
    from meshtrace.dataset import drifting_cube_spec, generate_fixtures
    root = tmp_path_factory.mktemp("drift")
    return generate_fixtures(drifting_cube_spec(length=4), root / "drift")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
