import numpy as np
import pytest
from scipy import stats

from conftest import TRAINING_SEEDS, tiny_env
from zec.agent import HouseAgent, run_episode
from zec.baselines import Strategy
from zec.cms import CommunityMonitoringService
from zec.domain import Action, Season, table1_configs
from zec.drl import EpsilonSchedule
from zec.env import CommunityEnv


def setup(config_or_env, strategy=Strategy.LEARNED, seed=0):
    env = config_or_env if isinstance(config_or_env, CommunityEnv) else CommunityEnv.from_config(config_or_env)
    rng = np.random.default_rng(seed)
    agents = {a: HouseAgent(a, strategy, learning_rate=0.02, random_state=int(rng.integers(2**31))) for a in env.agent_ids}
    cms = CommunityMonitoringService()
    for a in agents:
        cms.join(a)
    return agents, env, cms, rng


def winter_two():
    return table1_configs(Season.WINTER)[1]


def test_full_exploration_matches_random_baseline():
    counts = {}
    for strategy in (Strategy.LEARNED, Strategy.RANDOM):
        agents, env, cms, rng = setup(winter_two(), strategy)
        total = np.zeros(2)
        for k in range(3):
            report = run_episode(agents, env, cms, EpsilonSchedule(10), 0, rng, learn=False)
            assert report.epsilon in (1.0, 0.0)
            for stats_ in report.agents.values():
                total += [stats_.actions[Action.REQUEST_NEIGHBOUR], stats_.actions[Action.REQUEST_GRID]]
        counts[strategy] = total
    assert stats.chi2_contingency(np.array(list(counts.values()))).pvalue > 0.01


def test_self_sufficient_agent_never_requests():
    # A always has more generation than load; B is always short
    consumption = [[0.1] * 48, [0.5] * 48]
    generation = [[0.3] * 48, [0.0] * 48]
    env = tiny_env(consumption, generation)
    agents, env, cms, rng = setup(env)
    for k in range(3):
        report = run_episode(agents, env, cms, EpsilonSchedule(3), k, rng)
        acts = report.agents["A"].actions
        assert acts[Action.REQUEST_NEIGHBOUR] == acts[Action.REQUEST_GRID] == 0
        assert acts[Action.STORE_EXCESS] == 48


def test_decision_states_per_episode():
    agents, env, cms, rng = setup(table1_configs(Season.WINTER)[0])
    report = run_episode(agents, env, cms, EpsilonSchedule(10), 0, rng)
    assert report.slots == 144
    for agent_id, stats_ in report.agents.items():
        assert stats_.transitions >= 144
        assert len(agents[agent_id].buffer) == stats_.transitions
        assert agents[agent_id].net.n_updates_ == stats_.transitions


def test_zero_slots_is_empty():
    agents, env, cms, rng = setup(table1_configs(Season.WINTER)[0])
    report = run_episode(agents, env, cms, EpsilonSchedule(10), 0, rng, slots=0)
    assert report.slots == 0 and report.community_status == 0.0
    for agent in agents.values():
        assert len(agent.buffer) == 0
        assert agent.net.n_updates_ == 0


def test_episode_deterministic():
    def play():
        agents, env, cms, rng = setup(table1_configs(Season.WINTER)[0], seed=7)
        return [run_episode(agents, env, cms, EpsilonSchedule(4), k, rng) for k in range(2)]

    assert play() == play()


def test_exploit_mode_freezes_weights():
    agents, env, cms, rng = setup(table1_configs(Season.WINTER)[0])
    before = {a: [W.copy() for W in ag.net.coefs_] for a, ag in agents.items()}
    first = run_episode(agents, env, cms, EpsilonSchedule(10), 0, rng, learn=False, exploit=True)
    second = run_episode(agents, env, cms, EpsilonSchedule(10), 0, rng, learn=False, exploit=True)
    assert first.epsilon == 0.0
    assert first == second
    for a, ag in agents.items():
        assert all(np.array_equal(W0, W1) for W0, W1 in zip(before[a], ag.net.coefs_))


def test_reward_is_shared_and_matches_status():
    agents, env, cms, rng = setup(table1_configs(Season.WINTER)[0])
    report = run_episode(agents, env, cms, EpsilonSchedule(10), 0, rng)
    for agent in agents.values():
        rewards = [t.reward for t in agent.buffer]
        assert set(rewards) <= set(report.slot_status)
    assert cms.episode_reward(range(report.slots)) == pytest.approx(report.community_status, abs=1e-9)


@pytest.mark.slow
def test_training_improves_status(run_cache):
    better = 0
    for seed in TRAINING_SEEDS:
        status = run_cache.get(1, "winter", "learned", seed).community_status
        better += status[499] > status[0]
    assert better >= 3
