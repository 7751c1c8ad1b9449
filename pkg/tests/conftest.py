from pathlib import Path

import numpy as np
import pytest

from arn.data import load_idx, split_per_class
from arn.vision import Network, NetworkConfig, train

DATA = Path(__file__).resolve().parents[1] / "data"
IMAGES = DATA / "digits10k-images-idx3-ubyte.gz"
LABELS = DATA / "digits10k-labels-idx1-ubyte.gz"


@pytest.fixture(scope="session")
def digits():
    return load_idx(IMAGES, LABELS)


@pytest.fixture(scope="session")
def small_split(digits):
    return split_per_class(digits, 5, 3, seed=7)


@pytest.fixture(scope="session")
def small_net(small_split):
    """A network trained on 5 digits per class, cheap enough for unit tests."""
    train_set, _ = small_split
    net = Network(NetworkConfig())
    train(net, train_set.images, train_set.labels, angles=(-5.0, 5.0))
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
