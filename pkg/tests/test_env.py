import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import tiny_env
from zec.domain import Action, InvalidInput, Season, table1_configs
from zec.env import (
    CONSERVATION_TOL,
    CommunityEnv,
    EnergyRequest,
    ProtocolViolation,
    StepOutcome,
    UnknownAgent,
    community_net_balance,
    legal_actions,
)

CAP = 7.2


def reference_settlement(consumed, generated, soc, chosen, grants, loss=0.0):
    """Plain-float settlement used as an oracle: battery first, neighbours in order, grid last."""
    ids = list(consumed)
    soc = dict(soc)
    surplus, need = {}, {}
    for a in ids:
        net = generated[a] - consumed[a]
        if net >= 0:
            room = CAP - soc[a]
            soc[a] += min(net, room)
            surplus[a], need[a] = max(net - room, 0.0), 0.0
        else:
            take = min(-net, soc[a])
            soc[a] -= take
            surplus[a], need[a] = 0.0, -net - take
    got = dict.fromkeys(ids, 0.0)
    sent = dict.fromkeys(ids, 0.0)
    lost = dict.fromkeys(ids, 0.0)
    for a in ids:
        if chosen[a] != Action.REQUEST_NEIGHBOUR or need[a] <= 1e-12:
            continue
        for b in ids:
            if b == a or need[a] <= 1e-12:
                continue
            avail = surplus[b] + soc[b]
            if avail <= 1e-12 or not grants.get(b, False):
                continue
            out = min(need[a] / (1 - loss), avail)
            use_surplus = min(out, surplus[b])
            surplus[b] -= use_surplus
            soc[b] -= out - use_surplus
            sent[b] += out * (1 - loss)
            lost[b] += out * loss
            got[a] += out * (1 - loss)
            need[a] -= out * (1 - loss)
    return {
        a: dict(grid=max(need[a], 0.0) if need[a] > 1e-12 else 0.0, received=got[a], sent=sent[a], wasted=surplus[a] + lost[a], soc=soc[a])
        for a in ids
    }


def test_percept_and_dave_generation():
    _, two = table1_configs(Season.WINTER)
    env = CommunityEnv.from_config(two)
    for slot in range(env.horizon):
        assert env.percept("Dave", slot)[1] == 0.0
    for agent in env.agent_ids:
        assert env.percept(agent, 0)[1] == 0.0  # midnight
    day = sum(env.percept("Alice", s)[0] for s in range(48))
    assert day == pytest.approx(11.01)
    with pytest.raises(UnknownAgent):
        env.percept("Eve", 0)
    with pytest.raises(IndexError):
        env.percept("Alice", env.horizon)


def test_legal_actions_examples():
    assert legal_actions(-0.4) == (Action.REQUEST_NEIGHBOUR, Action.REQUEST_GRID)
    request = EnergyRequest("A", 1.0, 1.0)
    assert legal_actions(0.0, request) == (Action.DENY_REQUEST,)
    assert legal_actions(0.3) == (Action.STORE_EXCESS,)
    assert legal_actions(0.3, request) == (Action.GRANT_REQUEST, Action.DENY_REQUEST)


def test_legal_actions_enumeration():
    request = EnergyRequest("A", 1.0, 1.0)
    for balance, pending in itertools.product([-2.0, -1e-9, 0.0, 1e-9, 0.7], [None, request]):
        legal = set(legal_actions(balance, pending))
        if pending is None and balance < 0:
            expected = {Action.REQUEST_NEIGHBOUR, Action.REQUEST_GRID}
        elif pending is None:
            expected = {Action.STORE_EXCESS}
        elif balance > 0:
            expected = {Action.GRANT_REQUEST, Action.DENY_REQUEST}
        else:
            expected = {Action.DENY_REQUEST}
        assert legal == expected, (balance, pending)


def test_single_agent_grid():
    env = tiny_env([[1.0]], [[0.0]])
    out = env.settle_step({"A": Action.REQUEST_GRID}, 0)["A"]
    assert out.drawn_from_grid == 1.0
    assert (out.received_from_neighbours, out.sent_to_neighbours, out.wasted, out.battery_delta) == (0, 0, 0, 0)


def two_agent_env():
    return tiny_env([[1.0], [0.0]], [[0.0], [1.5]])


def test_neighbour_grant():
    env = two_agent_env()
    out = env.settle_step({"A": Action.REQUEST_NEIGHBOUR, "B": Action.STORE_EXCESS}, 0, {"B": Action.GRANT_REQUEST})
    assert out["A"].received_from_neighbours == pytest.approx(1.0)
    assert out["B"].sent_to_neighbours == pytest.approx(1.0)
    assert out["A"].drawn_from_grid == 0.0
    # B stored 1.5, then gave 1.0 of it
    assert env.batteries["B"].soc == pytest.approx(0.5)


def test_neighbour_deny_falls_back_to_grid():
    env = two_agent_env()
    out = env.settle_step({"A": Action.REQUEST_NEIGHBOUR, "B": Action.STORE_EXCESS}, 0, {"B": Action.DENY_REQUEST})
    assert out["A"].drawn_from_grid == pytest.approx(1.0)
    assert out["B"].sent_to_neighbours == 0.0


def test_responder_sees_request_and_grantable():
    env = tiny_env([[1.0], [0.0]], [[0.0], [0.4]], initial=[0.0, 0.3])
    seen = []

    def respond(donor, request, grantable):
        seen.append((donor, request.requester_id, request.amount, grantable))
        return Action.GRANT_REQUEST

    out = env.settle_step({"A": Action.REQUEST_NEIGHBOUR, "B": Action.STORE_EXCESS}, 0, respond)
    # B's 0.4 surplus is stored first, so everything it can give is battery (0.3 + 0.4)
    assert seen == [("B", "A", 1.0, pytest.approx(0.7))]
    assert out["A"].received_from_neighbours == pytest.approx(0.7)
    assert out["A"].drawn_from_grid == pytest.approx(0.3)


def test_illegal_action_names_agent():
    env = two_agent_env()
    with pytest.raises(ProtocolViolation, match="B"):
        env.settle_step({"A": Action.REQUEST_GRID, "B": Action.REQUEST_GRID}, 0)


def test_illegal_donor_answer():
    env = two_agent_env()
    with pytest.raises(ProtocolViolation):
        env.settle_step({"A": Action.REQUEST_NEIGHBOUR, "B": Action.STORE_EXCESS}, 0, {"B": Action.REQUEST_GRID})


def test_missing_action_and_wrong_slot():
    env = two_agent_env()
    with pytest.raises(InvalidInput):
        env.settle_step({"A": Action.REQUEST_GRID}, 0)
    with pytest.raises(InvalidInput):
        env.settle_step({"A": Action.REQUEST_GRID, "B": Action.STORE_EXCESS}, 1)


def test_observe_does_not_mutate():
    env = tiny_env([[1.0], [0.0]], [[0.0], [1.5]], initial=[0.5, 0.0])
    view = env.observe(0)
    assert view["A"].balance == pytest.approx(-0.5)
    assert view["B"].balance == pytest.approx(1.5)
    assert env.batteries["A"].soc == 0.5


def random_step(rng, n, loss=0.0):
    consumed = rng.uniform(0, 2, n) * (rng.random(n) > 0.2)
    generated = rng.uniform(0, 2, n) * (rng.random(n) > 0.3)
    soc = rng.uniform(0, CAP, n) * (rng.random(n) > 0.3)
    env = tiny_env(consumed[:, None], generated[:, None], initial=list(soc), transfer_loss=loss)
    view = env.observe(0)
    chosen = {a: legal[int(rng.integers(len(legal)))] for a in env.agent_ids for legal in [legal_actions(view[a].balance)]}
    grants = {a: bool(rng.random() < 0.6) for a in env.agent_ids}
    return env, chosen, grants


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.sampled_from([0.0, 0.1]))
def test_settlement_matches_reference(seed, n, loss):
    rng = np.random.default_rng(seed)
    env, chosen, grants = random_step(rng, n, loss)
    ids = env.agent_ids
    expect = reference_settlement(
        {a: env.consumption[i, 0] for i, a in enumerate(ids)},
        {a: env.generation[i, 0] for i, a in enumerate(ids)},
        {a: env.batteries[a].soc for a in ids},
        chosen,
        grants,
        loss,
    )
    answers = {a: Action.GRANT_REQUEST if g else Action.DENY_REQUEST for a, g in grants.items()}
    out = env.settle_step(chosen, 0, lambda donor, request, grantable: answers[donor])
    for a in ids:
        assert out[a].drawn_from_grid == pytest.approx(expect[a]["grid"], abs=1e-9)
        assert out[a].received_from_neighbours == pytest.approx(expect[a]["received"], abs=1e-9)
        assert out[a].sent_to_neighbours == pytest.approx(expect[a]["sent"], abs=1e-9)
        assert out[a].wasted == pytest.approx(expect[a]["wasted"], abs=1e-9)
        assert env.batteries[a].soc == pytest.approx(expect[a]["soc"], abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_conservation_and_zero_sum(seed, n):
    rng = np.random.default_rng(seed)
    env, chosen, grants = random_step(rng, n)
    out = env.settle_step(chosen, 0, {a: Action.GRANT_REQUEST if g else Action.DENY_REQUEST for a, g in grants.items()})
    for o in out.values():
        assert abs(o.imbalance()) <= CONSERVATION_TOL
        assert min(o.drawn_from_grid, o.received_from_neighbours, o.sent_to_neighbours, o.wasted) >= 0
    sent = sum(o.sent_to_neighbours for o in out.values())
    received = sum(o.received_from_neighbours for o in out.values())
    assert sent == pytest.approx(received, abs=1e-9)
    grid = sum(o.drawn_from_grid for o in out.values())
    assert community_net_balance(out) == pytest.approx(-grid, abs=1e-9)


def test_grid_only_used_for_uncovered_deficit():
    env = tiny_env([[1.0], [0.0]], [[0.0], [0.0]], initial=[0.0, 3.0])
    out = env.settle_step({"A": Action.REQUEST_NEIGHBOUR, "B": Action.STORE_EXCESS}, 0, {"B": Action.GRANT_REQUEST})
    assert out["A"].drawn_from_grid == 0.0
    assert out["B"].battery_delta == pytest.approx(-1.0)


def test_donor_reserve_is_respected():
    env = tiny_env([[1.0], [0.0]], [[0.0], [0.0]], initial=[0.0, 3.0], donor_reserve=2.5)
    out = env.settle_step({"A": Action.REQUEST_NEIGHBOUR, "B": Action.STORE_EXCESS}, 0, {"B": Action.GRANT_REQUEST})
    assert out["A"].received_from_neighbours == pytest.approx(0.5)
    assert out["A"].drawn_from_grid == pytest.approx(0.5)


def test_transfer_loss_is_donor_waste():
    env = tiny_env([[1.0], [0.0]], [[0.0], [0.0]], initial=[0.0, 5.0], transfer_loss=0.2)
    out = env.settle_step({"A": Action.REQUEST_NEIGHBOUR, "B": Action.STORE_EXCESS}, 0, {"B": Action.GRANT_REQUEST})
    assert out["A"].received_from_neighbours == pytest.approx(1.0)
    assert out["B"].battery_delta == pytest.approx(-1.25)
    assert out["B"].wasted == pytest.approx(0.25)
    assert abs(out["B"].imbalance()) < 1e-12


def test_settlement_deterministic():
    def play():
        env = CommunityEnv.from_config(table1_configs(Season.WINTER)[0])
        rows = []
        for slot in range(env.horizon):
            view = env.observe(slot)
            chosen = {a: legal_actions(view[a].balance)[0] for a in env.agent_ids}
            out = env.settle_step(chosen, slot, {a: Action.GRANT_REQUEST for a in env.agent_ids})
            rows.append([tuple(vars(o).values()) for o in out.values()])
        return rows

    assert play() == play()


def test_community_net_balance_examples():
    def outcome(c, g):
        return StepOutcome("x", consumed=c, generated=g)

    assert community_net_balance([outcome(2, 2), outcome(1.5, 1.5)]) == 0
    assert community_net_balance([outcome(10, 7), outcome(9, 9)]) == -3
    rng = np.random.default_rng(11)
    pairs = rng.uniform(0, 5, (5, 2))
    expected = 0.0
    for c, g in pairs:
        expected += g - c
    assert community_net_balance([outcome(c, g) for c, g in pairs]) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(InvalidInput):
        community_net_balance([])
