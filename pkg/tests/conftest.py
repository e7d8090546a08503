import numpy as np
import pytest

import tsinet.tensor as T


@pytest.fixture(autouse=True)
def _debug_checks():
    # Unit tests always run with NaN/Inf validation on.
    previous = T.set_debug_checks(True)
    yield
    T.set_debug_checks(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
