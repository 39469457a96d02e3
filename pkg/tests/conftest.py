import numpy as np
import pytest

from magcgo.forward import dn_map
from magcgo.grid import Field, make_grid
from magcgo.potentials import sample_admissible_pair


@pytest.fixture(scope="session")
def grid24():
    return make_grid(24, 0.5)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(16, 0.5)


@pytest.fixture(scope="session")
def pair24(grid24):
    return sample_admissible_pair(grid24, 1.0, 0.45, seed=0, eps_p=0.1)


@pytest.fixture(scope="session")
def dn_pair24(grid24, pair24):
    dn1 = dn_map(pair24.W1.W, pair24.q1.q, grid24, 4)
    dn2 = dn_map(pair24.W2.W, pair24.q2.q, grid24, 4)
    return dn1, dn2


@pytest.fixture(scope="session")
def pair16(grid16):
    return sample_admissible_pair(grid16, 1.0, 0.45, seed=0, eps_p=0.1)


@pytest.fixture(scope="session")
def dn_pair16(grid16, pair16):
    dn1 = dn_map(pair16.W1.W, pair16.q1.q, grid16, 4)
    dn2 = dn_map(pair16.W2.W, pair16.q2.q, grid16, 4)
    return dn1, dn2


def zeros(grid, vector=False):
    shape = ((3,) if vector else ()) + grid.shape
    return Field(grid, np.zeros(shape))


def bump(grid, center=(0.5, 0.5, 0.5), radius=0.35, power=4):
    r2 = np.sum((grid.coords - np.asarray(center)[:, None, None, None]) ** 2, axis=0)
    return np.where(r2 < radius ** 2, (1 - r2 / radius ** 2) ** power, 0.0)
