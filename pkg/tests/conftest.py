import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent / "oracles"))

from gamebridge import build_transformed, programmed_iteration, target_grid  # noqa: E402
from gamebridge.problemfile import packaged  # noqa: E402


class Solved:
    def __init__(self, name):
        self.cfg = packaged(name)
        self.problem = self.cfg.problem
        self.spec = self.cfg.spec
        self.aux = self.cfg.aux
        self.transformed = build_transformed(self.problem, self.aux)
        t0 = time.perf_counter()
        self.M = target_grid(self.problem, self.spec)
        self.direct = programmed_iteration(self.problem, self.spec, 30, target=self.M, record=True)
        t1 = time.perf_counter()
        self.star = programmed_iteration(self.transformed, self.spec, 30, record=True)
        self.seconds = {"direct": t1 - t0, "transformed": time.perf_counter() - t1}


@pytest.fixture(scope="session")
def cylinder():
    return Solved("cylinder_1d")


@pytest.fixture(scope="session")
def island():
    return Solved("sinking_island_1d")


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    return pytestconfig.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
