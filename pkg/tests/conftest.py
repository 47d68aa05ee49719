import numpy as np
import pytest

from synthfit.render import Mesh, RenderConfig
from synthfit.toy import make_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blob_mesh():
    return make_mesh(np.random.default_rng(7))


@pytest.fixture
def render_cfg():
    return RenderConfig(width=40, height=40, ortho_scale=8.0)


@pytest.fixture
def tetra():
    verts = [(0.0, 0.0, 1.0), (1.0, 0.0, -0.5), (-0.5, 0.9, -0.5), (-0.5, -0.9, -0.5)]
    faces = [(0, 1, 2), (0, 2, 3), (0, 3, 1), (1, 3, 2)]
    return Mesh(verts, faces)


def smooth_image(rng, h=40, w=40):
    from scipy import ndimage

    return np.clip(0.5 + ndimage.gaussian_filter(rng.normal(size=(h, w)), 2.0) * 1.5, 0.0, 1.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
