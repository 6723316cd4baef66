import numpy as np
import pytest

from emresformer.rain import StreakParams, synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The 20-pair 64×64 procedural set used by training-level tests."""
    root = tmp_path_factory.mktemp("desk")
    synth_dataset(root, StreakParams(seed=11), count=20, size=64)
    return root / "manifest.json"


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    synth_dataset(root, StreakParams(seed=3), count=5, size=16)
    return root / "manifest.json"


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """``report(n, ok, detail)`` records one acceptance line for the summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def emit(n, ok, detail):
        lines.append((n, f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
