import numpy as np
import pytest

from safeseg.hierarchy import LabelHierarchy, Node, default_hierarchy


def four_leaf() -> LabelHierarchy:
    """root -> {P1, P2}; P1 -> {a, b}; P2 -> {c, d}; n = 2."""
    return LabelHierarchy(
        [
            Node("P1", 1),
            Node("a", 2, "P1", 0),
            Node("b", 2, "P1", 1),
            Node("P2", 1),
            Node("c", 2, "P2", 2),
            Node("d", 2, "P2", 3),
        ],
        n_levels=2,
    )


@pytest.fixture
def fixture_h():
    return four_leaf()


@pytest.fixture(scope="session")
def idd():
    return default_hierarchy()


@pytest.fixture
def worked_maps():
    # gt = [a, a, c, c], pred = [a, b, c, a]
    return np.array([[0, 0, 2, 2]], dtype=np.uint8), np.array([[0, 1, 2, 0]], dtype=np.uint8)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Record one acceptance line; printed now (with -s) and in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def _record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        lines.append((number, line))
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
