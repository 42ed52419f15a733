import numpy as np
import pytest

from mvsense.em_core import PhysicsConfig, RoiGrid, ViewLayout


@pytest.fixture(scope="session")
def cfg():
    return PhysicsConfig()


@pytest.fixture(scope="session")
def small_grid():
    return RoiGrid(side_length=0.5, resolution=8)


@pytest.fixture(scope="session")
def small_layout(cfg):
    rng = np.random.default_rng(7)
    b_ang = rng.uniform(0, 2 * np.pi, 2)
    u_ang = rng.uniform(0, 2 * np.pi, 3)
    bs = 90.0 * np.column_stack([np.cos(b_ang), np.sin(b_ang)])
    ue = 6.0 * np.column_stack([np.cos(u_ang), np.sin(u_ang)])
    return ViewLayout.build(bs, ue, num_bs_antennas=4, cfg=cfg)
