import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zec.domain import HouseConfig, ScenarioConfig, Season
from zec.env import CommunityEnv

settings.register_profile("zec", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("zec")

TRAINING_SEEDS = (0, 1, 2, 3, 4)
TRAINING_EPISODES = 500


def tiny_env(consumption, generation, initial=None, days=1, **config_kw):
    """Environment over hand-written per-slot series; only the first columns need be given."""
    consumption = np.atleast_2d(np.asarray(consumption, dtype=float))
    generation = np.atleast_2d(np.asarray(generation, dtype=float))
    n, given = consumption.shape
    slots = days * 48
    pad = lambda a: np.pad(a, ((0, 0), (0, slots - given)))  # noqa: E731
    initial = [0.0] * n if initial is None else initial
    houses = tuple(HouseConfig(chr(ord("A") + i), 0, initial[i], "house1") for i in range(n))
    config = ScenarioConfig(houses, days=days, **config_kw)
    return CommunityEnv(config, pad(consumption), pad(generation))


class RunCache:
    """Memoises long training runs so several test modules can share them."""

    def __init__(self):
        self._runs = {}

    def get(self, scenario, season, strategy, seed, episodes=TRAINING_EPISODES):
        from zec.harness import build_scenario, run

        key = (scenario, Season(season), strategy, seed, episodes)
        if key not in self._runs:
            config = build_scenario(scenario, season, seed)
            self._runs[key] = run(config, strategy, episodes, seed=seed)
        return self._runs[key]


@pytest.fixture(scope="session")
def run_cache():
    return RunCache()


class ConservationGuard:
    """Wraps ``CommunityEnv.settle_step`` for the whole session and checks every outcome it returns."""

    def __init__(self):
        self.outcomes = 0
        self.slots = 0
        self.worst = 0.0

    def check(self, outcomes):
        from zec.env import CONSERVATION_TOL

        sent = received = 0.0
        for o in outcomes.values():
            err = abs(o.imbalance())
            self.worst = max(self.worst, err)
            assert err <= CONSERVATION_TOL, f"energy balance violated for {o}"
            sent += o.sent_to_neighbours
            received += o.received_from_neighbours
        assert abs(sent - received) <= CONSERVATION_TOL, "neighbour transfers are not zero-sum"
        self.outcomes += len(outcomes)
        self.slots += 1


GUARD = ConservationGuard()


@pytest.fixture(scope="session", autouse=True)
def conservation_guard():
    original = CommunityEnv.settle_step

    def checked(self, *args, **kwargs):
        outcomes = original(self, *args, **kwargs)
        GUARD.check(outcomes)
        return outcomes

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(CommunityEnv, "settle_step", checked)
        yield GUARD


CRITERIA = {}


def report_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
