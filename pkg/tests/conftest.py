import os

import pytest

from .fixtures.datasets import *
from .fixtures.geometry import *


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MVPT_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set MVPT_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
