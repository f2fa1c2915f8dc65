import numpy as np
import pytest

from deflare import network, training


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the scan kernels once so timed tests measure runtime only."""
    cfg = network.NetworkConfig(base_channels=4, levels=2, state_size=4,
                                window=(4, 4), seed=0)
    tcfg = training.TrainConfig(iters=1, dataset_size=1, image_h=8, image_w=8,
                                eval_every=0)
    training.train(cfg, tcfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
