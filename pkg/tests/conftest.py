import warnings
from dataclasses import replace

import pytest

from gsqz import quantize, scenes

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def small_scene():
    """A fast scene for unit tests: 800 gaussians, 8 cameras."""
    spec = replace(scenes.GARDEN_DESK, seed=3, n_gaussians=800, n_cameras=8)
    model, rig, held_out = scenes.generate(spec)
    return model, rig, held_out


@pytest.fixture(scope="session")
def small_geometry(small_scene):
    _, rig, _ = small_scene
    return quantize.derive_geometry(rig)


@pytest.fixture(scope="session")
def garden_desk():
    """The benchmark scene all acceptance numbers refer to."""
    model, rig, held_out = scenes.generate(scenes.GARDEN_DESK)
    return model, rig, held_out
