import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "psidit"))

SLOW = os.environ.get("PSIDIT_SLOW") == "1"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks, enabled with PSIDIT_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if SLOW:
        return
    skip = pytest.mark.skip(reason="set PSIDIT_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
