import logging
import sys
from pathlib import Path

import pytest
from hypothesis import settings

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS))

settings.register_profile("default", deadline=None)
settings.load_profile("default")

FIXTURES = TESTS / "fixtures"


@pytest.fixture(autouse=True)
def _restore_package_logger():
    # in-process CLI runs install a stderr handler and stop propagation, which hides records from caplog
    logger = logging.getLogger("sidewalk_audit")
    logger.handlers[:], logger.propagate = [], True
    logger.setLevel(logging.NOTSET)
    yield


@pytest.fixture
def mini_sector() -> Path:
    return FIXTURES / "mini_sector"


@pytest.fixture
def ratings_dir() -> Path:
    return FIXTURES / "ratings"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
