"""Half-hour community environment: percepts, battery dynamics and the three-phase settlement.

Each slot is settled in a fixed order:

1. local   -- every house nets demand against its panels, then against its own
              battery; surplus that does not fit in the battery is held as
              uncommitted surplus.
2. sharing -- neighbour requests are served in house order; each request is
              offered to every other house (in house order) that has grantable
              energy, and that house answers with GrantRequest or DenyRequest.
3. grid    -- any deficit still open is drawn from the supply grid.

Uncommitted surplus left after sharing is recorded as wasted.
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from typing import Callable, Iterable, Mapping

import numpy as np

from zec.data import consumption_for, exposure_for, generation_for
from zec.domain import (
    DAYS_PER_WEEK,
    SLOTS_PER_DAY,
    Action,
    BatteryBank,
    InvalidInput,
    ScenarioConfig,
    check_energy,
)

EPS = 1e-12
CONSERVATION_TOL = 1e-9


class ProtocolViolation(RuntimeError):
    """An agent submitted an action that is not legal in its current sub-state."""

    def __init__(self, agent_id, action, legal):
        self.agent_id, self.action, self.legal = agent_id, action, tuple(legal)
        names = ", ".join(a.name for a in self.legal)
        super().__init__(f"agent {agent_id!r} chose {Action(action).name}; legal: {{{names}}}")


class UnknownAgent(KeyError):
    pass


@dataclass
class EnergyRequest:
    requester_id: str
    amount: float
    remaining: float

    def __post_init__(self):
        if not self.amount > 0:
            raise InvalidInput(f"request amount must be > 0, got {self.amount}")
        if not 0 <= self.remaining <= self.amount:
            raise InvalidInput("remaining must lie in [0, amount]")


@dataclass
class StepOutcome:
    agent_id: str
    consumed: float = 0.0
    generated: float = 0.0
    battery_delta: float = 0.0
    received_from_neighbours: float = 0.0
    sent_to_neighbours: float = 0.0
    drawn_from_grid: float = 0.0
    wasted: float = 0.0

    @property
    def supplied(self) -> float:
        """Energy the house put to use from its own assets: harvested PV plus battery discharge."""
        return self.generated - self.wasted + max(-self.battery_delta, 0.0)

    @property
    def demanded(self) -> float:
        """Energy absorbed by the house: its load plus battery charging."""
        return self.consumed + max(self.battery_delta, 0.0)

    def imbalance(self) -> float:
        inflow = self.generated + self.drawn_from_grid + self.received_from_neighbours + max(-self.battery_delta, 0.0)
        outflow = self.consumed + self.sent_to_neighbours + max(self.battery_delta, 0.0) + self.wasted
        return inflow - outflow


@dataclass(frozen=True)
class AgentState:
    """What an agent sees at the start of a slot, before anyone acts."""

    consumed: float
    generated: float
    stored: float
    balance: float  # after own-battery recourse; < 0 is an open deficit
    pending_request: EnergyRequest | None = None


def legal_actions(balance: float, pending_request: EnergyRequest | None = None) -> tuple[Action, ...]:
    """Actions open to an agent, in enum order.

    Without a pending request ``balance`` is the agent's net balance after its
    own battery. With one, ``balance`` is the grantable surplus the agent
    could hand over.
    """
    balance = check_energy(balance, "balance", signed=True)
    if pending_request is not None:
        if balance > EPS:
            return (Action.GRANT_REQUEST, Action.DENY_REQUEST)
        return (Action.DENY_REQUEST,)
    if balance < -EPS:
        return (Action.REQUEST_NEIGHBOUR, Action.REQUEST_GRID)
    return (Action.STORE_EXCESS,)


def community_net_balance(outcomes: Iterable[StepOutcome]) -> float:
    """Community energy status for one slot: sum over houses of on-site supply minus on-site demand.

    Neighbour transfers cancel and grid draws never count as supply, so this
    equals minus the total grid import when transfers are lossless.
    """
    outcomes = list(outcomes.values()) if isinstance(outcomes, Mapping) else list(outcomes)
    if not outcomes:
        raise InvalidInput("need at least one outcome")
    return float(sum(o.supplied - o.demanded for o in outcomes))


Responder = Callable[[str, EnergyRequest, float], Action]


class CommunityEnv:
    """The environment every agent of one simulated community interacts with.

    Parameters
    ----------
    config : ScenarioConfig
    consumption, generation : array (n_houses, n_slots)
        Per-slot kWh, rows in ``config.houses`` order.
    """

    def __init__(self, config: ScenarioConfig, consumption: np.ndarray, generation: np.ndarray, start_weekday: int = 0):
        self.config = config
        self.agent_ids = config.agent_ids
        self._index = {a: i for i, a in enumerate(self.agent_ids)}
        shape = (len(self.agent_ids), config.slots)
        self.consumption = np.asarray(consumption, dtype=float)
        self.generation = np.asarray(generation, dtype=float)
        if self.consumption.shape != shape or self.generation.shape != shape:
            raise InvalidInput(f"series must have shape {shape}")
        if np.any(self.consumption < 0) or np.any(self.generation < 0):
            raise InvalidInput("consumption and generation must be non-negative")
        self.start_weekday = start_weekday
        self.reset()

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "CommunityEnv":
        exposure = exposure_for(config.season, config.days, config.data_dir).readings
        demand = np.array(
            [consumption_for(h.consumption_profile, config.season, config.days, config.data_dir).readings for h in config.houses]
        )
        supply = np.array([generation_for(h.solar_cells, exposure, config.yield_factor) for h in config.houses])
        return cls(config, demand, supply)

    def reset(self) -> None:
        self.batteries = {h.agent_id: h.new_battery() for h in self.config.houses}
        self.slot = 0

    @property
    def horizon(self) -> int:
        return self.config.slots

    def time_features(self, slot: int) -> tuple[int, int]:
        """(half-hour of day, day of week) for an episode slot."""
        return slot % SLOTS_PER_DAY, (self.start_weekday + slot // SLOTS_PER_DAY) % DAYS_PER_WEEK

    def _row(self, agent_id: str) -> int:
        try:
            return self._index[agent_id]
        except KeyError:
            raise UnknownAgent(agent_id) from None

    def percept(self, agent_id: str, slot: int) -> tuple[float, float]:
        row = self._row(agent_id)
        if not 0 <= slot < self.horizon:
            raise IndexError(f"slot {slot} outside horizon 0..{self.horizon - 1}")
        return float(self.consumption[row, slot]), float(self.generation[row, slot])

    def observe(self, slot: int) -> dict[str, AgentState]:
        """Sub-state of every agent for ``slot`` given current battery charges. Does not mutate."""
        view = {}
        for agent_id in self.agent_ids:
            consumed, generated = self.percept(agent_id, slot)
            soc = self.batteries[agent_id].soc
            net = generated - consumed
            balance = net if net >= 0 else min(0.0, net + soc)
            view[agent_id] = AgentState(consumed, generated, soc, balance)
        return view

    def grantable(self, agent_id: str, uncommitted: float = 0.0) -> float:
        return uncommitted + max(self.batteries[agent_id].soc - self.config.donor_reserve, 0.0)

    def settle_step(
        self,
        chosen: Mapping[str, Action],
        slot: int,
        responder: Responder | Mapping[str, Action] | None = None,
    ) -> dict[str, StepOutcome]:
        """Settle one slot and advance the batteries.

        ``responder`` answers neighbour requests: either a callable
        ``(donor_id, request, grantable) -> Action`` or a fixed mapping
        donor id -> GrantRequest/DenyRequest. Donors default to denying.
        """
        if slot != self.slot:
            raise InvalidInput(f"expected slot {self.slot}, got {slot}")
        view = self.observe(slot)
        for agent_id in self.agent_ids:
            if agent_id not in chosen:
                raise InvalidInput(f"no action submitted for agent {agent_id!r}")
            legal = legal_actions(view[agent_id].balance)
            if Action(chosen[agent_id]) not in legal:
                raise ProtocolViolation(agent_id, chosen[agent_id], legal)
        if responder is None:
            responder = {}
        if isinstance(responder, Mapping):
            answers = responder
            responder = lambda donor, request, grantable: answers.get(donor, Action.DENY_REQUEST)  # noqa: E731

        outcomes = {a: StepOutcome(a, view[a].consumed, view[a].generated) for a in self.agent_ids}
        before = {a: self.batteries[a].soc for a in self.agent_ids}
        deficit = {}
        uncommitted = {}

        # phase 1: local netting and battery recourse
        for agent_id in self.agent_ids:
            battery = self.batteries[agent_id]
            net = view[agent_id].generated - view[agent_id].consumed
            if net >= 0:
                _, overflow = battery.charge(net)
                uncommitted[agent_id] = overflow
                deficit[agent_id] = 0.0
            else:
                covered = battery.discharge(-net)
                uncommitted[agent_id] = 0.0
                deficit[agent_id] = max(-net - covered, 0.0)
                if deficit[agent_id] <= EPS:
                    deficit[agent_id] = 0.0

        # phase 2: neighbour sharing
        keep = 1.0 - self.config.transfer_loss
        for requester in self.agent_ids:
            if chosen[requester] != Action.REQUEST_NEIGHBOUR or deficit[requester] <= 0:
                continue
            request = EnergyRequest(requester, deficit[requester], deficit[requester])
            for donor in self.agent_ids:
                if donor == requester or request.remaining <= 0:
                    continue
                available = self.grantable(donor, uncommitted[donor])
                if available <= EPS:
                    continue
                answer = Action(responder(donor, request, available))
                legal = legal_actions(available, request)
                if answer not in legal:
                    raise ProtocolViolation(donor, answer, legal)
                if answer != Action.GRANT_REQUEST:
                    continue
                send = min(request.remaining / keep, available)
                from_surplus = min(send, uncommitted[donor])
                uncommitted[donor] -= from_surplus
                if send > from_surplus:
                    self.batteries[donor].discharge(send - from_surplus)
                delivered = send * keep
                outcomes[donor].sent_to_neighbours += delivered
                outcomes[donor].wasted += send - delivered
                outcomes[requester].received_from_neighbours += delivered
                request.remaining = max(request.remaining - delivered, 0.0)
                if request.remaining <= EPS:
                    request.remaining = 0.0
            deficit[requester] = request.remaining

        # phase 3: grid fallback, then book leftover surplus as waste
        for agent_id in self.agent_ids:
            out = outcomes[agent_id]
            out.drawn_from_grid = deficit[agent_id]
            out.wasted += uncommitted[agent_id]
            out.battery_delta = self.batteries[agent_id].soc - before[agent_id]
        self.slot += 1
        return outcomes


STEP_FIELDS = ["episode", "slot"] + [f.name for f in fields(StepOutcome)]


class StepLog:
    """Accumulates per-(episode, slot, agent) outcomes for ``steps.csv``."""

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, episode: int, slot: int, outcomes: Mapping[str, StepOutcome]) -> None:
        for outcome in outcomes.values():
            self.rows.append((episode, slot) + astuple(outcome))

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(STEP_FIELDS)
            for row in self.rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
