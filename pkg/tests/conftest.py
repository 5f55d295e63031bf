import pytest

from hybridcast import fixture_path
from hybridcast.hybrid import two_stage_fit
from hybridcast.panel import load_panel

FIXTURE_TRAIN_END = 100


@pytest.fixture(scope="session")
def fixture_panel():
    return load_panel(fixture_path(), cameo=True)


@pytest.fixture(scope="session")
def fixture_model(fixture_panel):
    """Default-configuration hybrid fitted on the bundled panel up to t=100."""
    return two_stage_fit(fixture_panel, train_end=FIXTURE_TRAIN_END)


@pytest.fixture(scope="session")
def case_runs():
    """Simulation case results at seed 0, computed once per session on first use."""
    from hybridcast.experiments import run_case

    cache = {}

    def get(case):
        if case not in cache:
            cache[case] = run_case(case, seed=0)
        return cache[case]

    return get
