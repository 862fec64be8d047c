import numpy as np
import pytest

from flowforge.config import resolve_config


@pytest.fixture
def small_cfg():
    """Fast configuration: small objects, coarse grid, few scenes."""
    return resolve_config(base_dict={
        "repeat": 3,
        "seed": 123,
        "sampling_mode": "sobol",
        "number_of_objects": 1,
        "shapes": {
            "cuboid": {"height": [20, 60], "width": [20, 60], "thickness": [20, 60]},
            "cylinder": {"radius": [10, 40], "height": [10, 60], "angle": [45, 360]},
            "sphere": {"radius": [10, 40]},
            "cone": {"radius_1": [5, 40], "radius_2": [5, 40], "height": [10, 60],
                     "angle": [45, 360]},
            "torus": {"radius_major": [20, 50], "radius_minor": [5, 15]},
            "wedge": {"length": [20, 80], "width": [30, 80], "height": [10, 40],
                      "opening_angle": [15, 60]},
        },
    })


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
