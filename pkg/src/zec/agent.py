"""Per-house agents and the slot/episode loop that drives them against the environment and CMS."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from zec.baselines import Strategy, baseline_action
from zec.cms import StatusReport
from zec.domain import Action, discretize
from zec.drl import (
    PAPER_GAMMA,
    PAPER_LEARNING_RATE,
    EpsilonSchedule,
    QNetwork,
    ReplayBuffer,
    State,
    Transition,
    select_action,
    train_step,
)
from zec.env import CommunityEnv, EnergyRequest, StepLog, StepOutcome, community_net_balance, legal_actions


@dataclass
class EnvironmentView:
    community_balance: float = 0.0


class HouseAgent:
    """One house. Learns with its own DQN when ``strategy`` is LEARNED, else follows a fixed rule."""

    def __init__(
        self,
        agent_id: str,
        strategy: Strategy | str = Strategy.LEARNED,
        *,
        learning_rate: float = PAPER_LEARNING_RATE,
        gamma: float = PAPER_GAMMA,
        batch_size: int = 32,
        replay_capacity: int = 10_000,
        random_state: int | None = None,
    ):
        self.agent_id = agent_id
        self.strategy = Strategy(strategy)
        self.gamma = gamma
        self.batch_size = batch_size
        self.view = EnvironmentView()
        self.net = None
        self.buffer = None
        if self.learns:
            self.net = QNetwork(learning_rate=learning_rate, random_state=random_state).initialize()
            self.buffer = ReplayBuffer(replay_capacity)

    @property
    def learns(self) -> bool:
        return self.strategy is Strategy.LEARNED

    def act(self, state: State, legal, epsilon: float, rng: np.random.Generator) -> Action:
        if self.learns:
            return select_action(self.net, state, legal, epsilon, rng)
        return baseline_action(self.strategy, legal, rng)

    def learn(self, transition: Transition, rng: np.random.Generator) -> float | None:
        """Store the transition and run one combined-replay update on it."""
        if not self.learns:
            return None
        self.buffer.append(transition)
        _, loss = train_step(self.net, self.buffer, self.batch_size, gamma=self.gamma, rng=rng)
        return loss


@dataclass
class AgentEpisodeStats:
    actions: Counter = field(default_factory=Counter)
    grid_kwh: float = 0.0
    neighbour_kwh: float = 0.0
    sent_kwh: float = 0.0
    wasted_kwh: float = 0.0
    final_battery: float = 0.0
    transitions: int = 0

    def add(self, outcome: StepOutcome) -> None:
        self.grid_kwh += outcome.drawn_from_grid
        self.neighbour_kwh += outcome.received_from_neighbours
        self.sent_kwh += outcome.sent_to_neighbours
        self.wasted_kwh += outcome.wasted


@dataclass
class EpisodeReport:
    episode: int
    epsilon: float
    community_status: float = 0.0
    slot_status: list[float] = field(default_factory=list)
    agents: dict[str, AgentEpisodeStats] = field(default_factory=dict)

    @property
    def slots(self) -> int:
        return len(self.slot_status)


def _state(env: CommunityEnv, slot: int, balance: float) -> State:
    time_of_day, weekday = env.time_features(slot)
    return State(time_of_day, weekday, discretize(balance, env.config.thresholds))


def run_slot(agents, env: CommunityEnv, cms, slot: int, epsilon: float, rng: np.random.Generator, *, learn=True, tick=None):
    """Percept, choose, settle, report, reward and learn for every agent in one slot.

    Returns ``(outcomes, transitions, reward)`` where ``transitions`` maps each
    agent to the transitions it recorded this slot (one for its own move plus
    one per grant/deny decision it was asked for).
    """
    tick = slot if tick is None else tick
    view = env.observe(slot)
    decisions: dict[str, list[tuple[State, Action]]] = {a: [] for a in env.agent_ids}
    chosen = {}
    for agent_id in env.agent_ids:
        state = _state(env, slot, view[agent_id].balance)
        action = agents[agent_id].act(state, legal_actions(view[agent_id].balance), epsilon, rng)
        decisions[agent_id].append((state, action))
        chosen[agent_id] = action

    def respond(donor: str, request: EnergyRequest, grantable: float) -> Action:
        state = _state(env, slot, grantable)
        action = agents[donor].act(state, legal_actions(grantable, request), epsilon, rng)
        decisions[donor].append((state, action))
        return action

    outcomes = env.settle_step(chosen, slot, respond)
    for agent_id, outcome in outcomes.items():
        cms.post_status(StatusReport(agent_id, tick, consumed=outcome.demanded, generated=outcome.supplied))
    reward = cms.global_reward(tick)

    terminal = slot == env.horizon - 1
    next_state, next_legal = {}, {}
    if not terminal:
        next_view = env.observe(slot + 1)
        for agent_id in env.agent_ids:
            next_state[agent_id] = _state(env, slot + 1, next_view[agent_id].balance)
            next_legal[agent_id] = legal_actions(next_view[agent_id].balance)

    transitions = {}
    for agent_id in env.agent_ids:
        agent = agents[agent_id]
        agent.view.community_balance = reward
        recorded = [
            Transition(state, action, reward, next_state.get(agent_id), next_legal.get(agent_id, ()), terminal)
            for state, action in decisions[agent_id]
        ]
        transitions[agent_id] = recorded
        if learn:
            for transition in recorded:
                agent.learn(transition, rng)
    return outcomes, transitions, reward


def run_episode(
    agents,
    env: CommunityEnv,
    cms,
    schedule: EpsilonSchedule,
    episode_index: int,
    rng: np.random.Generator,
    *,
    learn: bool = True,
    exploit: bool = False,
    step_log: StepLog | None = None,
    slots: int | None = None,
) -> EpisodeReport:
    """Play one episode from the initial battery charges.

    ``slots`` caps the episode length (default: the configured horizon).
    """
    slots = env.horizon if slots is None else min(max(slots, 0), env.horizon)
    eps = schedule(episode_index, exploit=exploit) if any(a.learns for a in agents.values()) else 0.0
    report = EpisodeReport(episode_index, eps, agents={a: AgentEpisodeStats() for a in env.agent_ids})
    env.reset()
    cms.reset_status()
    for slot in range(slots):
        outcomes, transitions, reward = run_slot(agents, env, cms, slot, eps, rng, learn=learn)
        status = community_net_balance(outcomes)
        report.slot_status.append(status)
        for agent_id, outcome in outcomes.items():
            stats = report.agents[agent_id]
            stats.add(outcome)
            for t in transitions[agent_id]:
                stats.actions[t.action] += 1
            stats.transitions += len(transitions[agent_id])
        if step_log is not None:
            step_log.add(episode_index, slot, outcomes)
    report.community_status = float(np.sum(report.slot_status)) if report.slot_status else 0.0
    for agent_id, battery in env.batteries.items():
        report.agents[agent_id].final_battery = battery.soc
    return report
