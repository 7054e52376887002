import os
import sys

import numpy as np
import pytest

# Ensure the project root is in the path for module discovery
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from sphere_seg.Scripts.phantom import PhantomSpec, generate_phantom
from sphere_seg.Scripts.volume_core import Spacing

# Reduced phantom: small enough for the default test run, large enough for the cascade
SMALL_PHANTOM = dict(
    extent_mm=(128.0, 128.0, 112.0),
    spacing=(1.0, 1.0, 1.0),
    brain_semi_axes_mm=(55.0, 60.0, 48.0),
    tumor_center_mm=(74.0, 78.0, 58.0),
    radii_mm=(20.0, 12.0, 6.0),
    seed=0,
)


@pytest.fixture
def unit_spacing():
    return Spacing.isotropic(1.0)


@pytest.fixture(scope="session")
def small_phantom_spec():
    return PhantomSpec(**SMALL_PHANTOM)


@pytest.fixture(scope="session")
def small_phantom(small_phantom_spec):
    """(MultiChannelVolume, LabelVolume) of the reduced phantom."""
    return generate_phantom(small_phantom_spec)


def ball(shape, center, radius):
    """Boolean ball of voxel radius `radius` around voxel `center`."""
    grid = np.indices(shape)
    dist2 = sum((g - c) ** 2 for g, c in zip(grid, center))
    return dist2 <= radius ** 2


def cube(shape, start, size):
    mask = np.zeros(shape, dtype=bool)
    i, j, k = start
    mask[i:i + size, j:j + size, k:k + size] = True
    return mask
