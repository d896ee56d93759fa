import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to Python path
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from modules.experiments import uniform_frame  # noqa: E402
from modules.samplers import RngStream  # noqa: E402
from modules.smg_model import ObservationSet, SmgParams  # noqa: E402


@pytest.fixture
def rng():
    return RngStream(12345)


@pytest.fixture
def np_rng():
    return np.random.default_rng(2024)


@pytest.fixture
def smg_params_6x6():
    """Random rank-2 SMG parameters on a 6x6 grid."""
    stream = RngStream(7)
    return SmgParams(uniform_frame(6, 2, stream), uniform_frame(6, 2, stream), 1.5)


@pytest.fixture
def planted_rank2():
    """Noiseless rank-2 20x20 matrix with 60% of its entries observed."""
    gen = np.random.default_rng(11)
    X = gen.standard_normal((20, 2)) @ gen.standard_normal((2, 20))
    mask = gen.uniform(size=X.shape) < 0.6
    return X, ObservationSet.from_mask(X, mask)
