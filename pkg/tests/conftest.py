import numpy as np
import pytest

from fpw.geometry import FisheyeCamera
from fpw.compositor import CompositeLayout


@pytest.fixture(scope="session")
def cam():
    """Default test camera: 1024x1024 image, 90-degree half field of view."""
    return FisheyeCamera(center_x=512.0, center_y=512.0, radius=512.0,
                         max_angle=np.pi / 2)


@pytest.fixture(scope="session")
def layout():
    return CompositeLayout()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
