import pytest

# acceptance lines collected by tests/test_acceptance.py, printed once at the end
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def straight_graph():
    from riskmpcc.lane_graph import LaneSpec, split_lanes

    return split_lanes([LaneSpec("a", ((0.0, 0.0), (20.0, 0.0)))], 5.0)
