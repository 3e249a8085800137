"""
Shared pytest configuration.

Long acceptance runs are marked `slow` and only run with DDIC_OT_RUN_SLOW=1.
"""

import os

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("DDIC_OT_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set DDIC_OT_RUN_SLOW=1 to run slow acceptance tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
