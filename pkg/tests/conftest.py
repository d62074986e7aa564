import os

import numpy as np
import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SGS_ACK_LARGE") == "1":
        return
    skip = pytest.mark.skip(reason="large run; set SGS_ACK_LARGE=1 to enable")
    for item in items:
        if "large" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))
