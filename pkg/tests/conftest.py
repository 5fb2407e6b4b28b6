import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skgfat import data, models


@pytest.fixture(scope="session")
def blob_pair():
    train = data.make_blobs(4, 100, dim=8, spread=0.08, seed=11, split="train")
    test = data.make_blobs(4, 100, dim=8, spread=0.08, seed=12, split="test")
    return train, test


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
