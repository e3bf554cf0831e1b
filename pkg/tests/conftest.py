import numpy as np
import pytest

from lsdcalib import kernels
from lsdcalib.schedule import build_cosine_schedule
from lsdcalib.scene import SceneConfig, generate_scene


@pytest.fixture(scope="session")
def schedule():
    return build_cosine_schedule(1000, 0.008)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneConfig(num_points=200), np.random.default_rng(7), scene_id="small")


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run the test once per kernel path."""
    if request.param == "numba" and not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(kernels, "USE_NUMBA", request.param == "numba")
    return request.param


def random_twists(rng, n, max_angle=3.0, max_trans=2.0):
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0.0, max_angle, size=(n, 1))
    trans = rng.uniform(-max_trans, max_trans, size=(n, 3))
    return np.concatenate([trans, axes * angles], axis=1)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
