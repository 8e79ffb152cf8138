import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import functools

import pytest

from polaron_lab.stats import ChainParams

# Long chains shared by the acceptance and refinement tests, keyed by name.
# Steps resolve the path time scale 1/alpha^2 up to alpha = 4 at 1/16; alpha = 6, 8 use 1/32.
LONG_CHAINS = {
    ("coulomb", 0.0): (0.0, ChainParams(T=8.0, sweeps=20000, thin=4, seed=100)),
    ("coulomb", 0.5): (0.5, ChainParams(T=8.0, sweeps=20000, thin=4, seed=101)),
    ("coulomb", 1.0): (1.0, ChainParams(T=8.0, sweeps=20000, thin=4, seed=102)),
    ("coulomb", 2.0): (2.0, ChainParams(T=8.0, sweeps=20000, thin=4, seed=103)),
    ("coulomb", 4.0): (4.0, ChainParams(T=8.0, sweeps=20000, thin=4, seed=104)),
    ("coulomb", 6.0): (6.0, ChainParams(T=8.0, step=1 / 32, sweeps=10000, thin=5, seed=106)),
    ("coulomb", 8.0): (8.0, ChainParams(T=8.0, step=1 / 32, sweeps=10000, thin=5, seed=108)),
    ("truncated", 1.0): (1.0, ChainParams(T=8.0, sweeps=20000, thin=4, seed=111, kind="truncated", cap=1.0)),
    ("half_window", 1.0): (1.0, ChainParams(T=4.0, sweeps=20000, thin=4, seed=121)),
    ("fine_step", 1.0): (1.0, ChainParams(T=8.0, step=1 / 32, sweeps=8000, thin=2, seed=131)),
}


@pytest.fixture(scope="session")
def long_chain():
    @functools.lru_cache(maxsize=None)
    def get(name: str, alpha: float):
        a, params = LONG_CHAINS[(name, float(alpha))]
        return params.run(a)

    def lookup(name: str, alpha: float):
        return get(name, float(alpha))

    lookup.params = lambda name, alpha: LONG_CHAINS[(name, float(alpha))][1]
    return lookup


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
