import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flowforge import scene as sc  # noqa: E402


@pytest.fixture(scope="session")
def skeleton():
    return sc.build_skeleton(sc.default_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
