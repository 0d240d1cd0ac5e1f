import numpy as np
import pytest

from rcv.geometry import AxesTriad, OrientedBox3D, RigidTransform


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via QR with sign fix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_transform(rng: np.random.Generator, t_scale: float = 2.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-t_scale, t_scale, 3))


def random_box(rng: np.random.Generator, t_scale: float = 2.0,
               extent_range=(0.2, 1.5), **kw) -> OrientedBox3D:
    return OrientedBox3D(pose=random_transform(rng, t_scale),
                         extent=rng.uniform(*extent_range, 3), **kw)


def random_triad(rng: np.random.Generator) -> AxesTriad:
    return AxesTriad(random_rotation(rng))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240831)
