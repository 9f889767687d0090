import numpy as np
import pytest

from aircomp_fl.config import SystemConfig, SyntheticSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**changes) -> SystemConfig:
    """Desk-sized config: 5 devices, tiny synthetic data, few rounds."""
    base = dict(
        K=5, T=3, local_size=60, num_shards=5, mu2=0.0, delta=0.0,
        synthetic=SyntheticSpec(n_features=6, n_classes=10, n_train=600, n_test=200),
    )
    base.update(changes)
    return SystemConfig(**base)


@pytest.fixture
def small_cfg():
    return small_config()
