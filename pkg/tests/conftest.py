import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


import pytest


# one verdict line per acceptance criterion, filled in by test_acceptance.py
@pytest.fixture(scope="session")
def verdicts(request):
    if not hasattr(request.config, "acceptance_verdicts"):
        request.config.acceptance_verdicts = {}
    return request.config.acceptance_verdicts


def pytest_terminal_summary(terminalreporter):
    found = getattr(terminalreporter.config, "acceptance_verdicts", None)
    if found:
        terminalreporter.section("acceptance criteria")
        for k in sorted(found):
            terminalreporter.write_line(found[k])
