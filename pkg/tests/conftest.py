import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "schauderlab",
    deadline=None,
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", "40")),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("schauderlab")

_LINES = []


@pytest.fixture
def record_criterion():
    """Collect acceptance lines for the terminal summary."""
    def _rec(res):
        _LINES.append(res.line())
        return res
    return _rec


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=lambda s: int(s.split()[2])):
        terminalreporter.write_line(line)
