"""Value types shared across the simulator: energy levels, actions, batteries, scenarios."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

SLOTS_PER_DAY = 48
SLOT_HOURS = 0.5
DAYS_PER_WEEK = 7

# 12 V at 100 A for 20 h is quoted as a 1.2 kWh unit; six units per house.
BATTERY_VOLTS = 12.0
BATTERY_AMP_HOURS = 100.0
DEFAULT_UNIT_KWH = BATTERY_VOLTS * BATTERY_AMP_HOURS / 1000.0
DEFAULT_UNIT_COUNT = 6

DEFAULT_THRESHOLDS = (0.05, 0.5, 1.5)
DEFAULT_YIELD_FACTOR = 0.1
SCHEMA_VERSION = 1


class InvalidInput(ValueError):
    """Raised for non-finite or out-of-domain energy quantities."""


def check_energy(value: float, name: str = "energy", *, signed: bool = False) -> float:
    """Coerce ``value`` to float, rejecting NaN/inf and (unless ``signed``) negatives."""
    try:
        value = float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"{name} is not a number: {value!r}") from exc
    if not math.isfinite(value):
        raise InvalidInput(f"{name} must be finite, got {value}")
    if not signed and value < 0:
        raise InvalidInput(f"{name} must be >= 0, got {value}")
    return value


class EnergyLevel(enum.IntEnum):
    NONE = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3


class Action(enum.IntEnum):
    """The five choices open to a house agent. Enum order is the argmax tie-break order."""

    STORE_EXCESS = 0
    REQUEST_NEIGHBOUR = 1
    REQUEST_GRID = 2
    GRANT_REQUEST = 3
    DENY_REQUEST = 4


class Season(str, enum.Enum):
    WINTER = "winter"
    SUMMER = "summer"


def discretize(balance: float, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> EnergyLevel:
    """Map a kWh balance to a four-level code by the magnitude of the balance.

    A magnitude exactly on a threshold belongs to the lower level.

    >>> discretize(0.8)
    <EnergyLevel.MEDIUM: 2>
    """
    balance = check_energy(balance, "balance", signed=True)
    thresholds = check_thresholds(thresholds)
    magnitude = abs(balance)
    for level, edge in zip((EnergyLevel.NONE, EnergyLevel.LOW, EnergyLevel.MEDIUM), thresholds):
        if magnitude <= edge:
            return level
    return EnergyLevel.HIGH


def check_thresholds(thresholds: Sequence[float]) -> tuple[float, float, float]:
    values = tuple(float(t) for t in thresholds)
    if len(values) != 3:
        raise InvalidInput(f"need exactly 3 thresholds, got {len(values)}")
    if not all(math.isfinite(t) and t > 0 for t in values):
        raise InvalidInput(f"thresholds must be finite and > 0: {values}")
    if not values[0] < values[1] < values[2]:
        raise InvalidInput(f"thresholds must be strictly ascending: {values}")
    return values  # type: ignore[return-value]


@dataclass
class BatteryBank:
    unit_capacity: float = DEFAULT_UNIT_KWH
    unit_count: int = DEFAULT_UNIT_COUNT
    soc: float = 0.0

    def __post_init__(self):
        self.unit_capacity = check_energy(self.unit_capacity, "unit_capacity")
        if int(self.unit_count) != self.unit_count or self.unit_count < 1:
            raise InvalidInput(f"unit_count must be a positive integer, got {self.unit_count}")
        self.unit_count = int(self.unit_count)
        self.soc = check_energy(self.soc, "soc")
        if self.soc > self.capacity:
            raise InvalidInput(f"soc {self.soc} exceeds capacity {self.capacity}")

    @property
    def capacity(self) -> float:
        # rounded so 6 x 1.2 kWh is exactly 7.2
        return round(self.unit_capacity * self.unit_count, 9)

    @property
    def headroom(self) -> float:
        return self.capacity - self.soc

    def charge(self, amount: float) -> tuple[float, float]:
        """Store up to ``amount``; returns ``(stored, overflow)``."""
        amount = check_energy(amount, "charge amount")
        stored = min(amount, self.headroom)
        self.soc = min(self.soc + stored, self.capacity)
        return stored, amount - stored

    def discharge(self, amount: float) -> float:
        """Withdraw up to ``amount``; returns what was actually delivered."""
        amount = check_energy(amount, "discharge amount")
        delivered = min(amount, self.soc)
        self.soc = max(self.soc - delivered, 0.0)
        return delivered


@dataclass(frozen=True)
class HouseConfig:
    agent_id: str
    solar_cells: int
    initial_charge: float
    consumption_profile: str
    unit_capacity: float = DEFAULT_UNIT_KWH
    unit_count: int = DEFAULT_UNIT_COUNT

    def __post_init__(self):
        if int(self.solar_cells) != self.solar_cells or self.solar_cells < 0:
            raise InvalidInput(f"solar_cells must be a non-negative integer, got {self.solar_cells}")
        charge = check_energy(self.initial_charge, "initial_charge")
        if charge > self.capacity + 1e-12:
            raise InvalidInput(
                f"{self.agent_id}: initial charge {charge} exceeds capacity {self.capacity}"
            )
        object.__setattr__(self, "initial_charge", min(charge, self.capacity))

    @property
    def capacity(self) -> float:
        return round(self.unit_capacity * self.unit_count, 9)

    def new_battery(self) -> BatteryBank:
        return BatteryBank(self.unit_capacity, self.unit_count, self.initial_charge)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one simulated community.

    ``houses`` order is the settlement order used for requesters and donors.
    """

    houses: tuple[HouseConfig, ...]
    season: Season = Season.WINTER
    days: int = 3
    episodes: int = 500
    seed: int = 0
    thresholds: tuple[float, float, float] = DEFAULT_THRESHOLDS
    yield_factor: float = DEFAULT_YIELD_FACTOR
    donor_reserve: float = 0.0
    transfer_loss: float = 0.0
    name: str = "custom"
    data_dir: str | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "houses", tuple(self.houses))
        object.__setattr__(self, "season", Season(self.season))
        object.__setattr__(self, "thresholds", check_thresholds(self.thresholds))
        if not self.houses:
            raise InvalidInput("a scenario needs at least one house")
        ids = [h.agent_id for h in self.houses]
        if len(set(ids)) != len(ids):
            raise InvalidInput(f"duplicate agent ids: {ids}")
        if self.days < 1 or self.episodes < 1:
            raise InvalidInput("days and episodes must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidInput("seed must fit in an unsigned 64-bit integer")
        if not 0.0 <= self.transfer_loss < 1.0:
            raise InvalidInput("transfer_loss must be in [0, 1)")
        check_energy(self.yield_factor, "yield_factor")
        check_energy(self.donor_reserve, "donor_reserve")

    @property
    def agent_ids(self) -> list[str]:
        return [h.agent_id for h in self.houses]

    @property
    def slots(self) -> int:
        return self.days * SLOTS_PER_DAY

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["season"] = self.season.value
        data["thresholds"] = list(self.thresholds)
        data["houses"] = [asdict(h) for h in self.houses]
        return {"schema_version": SCHEMA_VERSION, **data}

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise InvalidInput(f"unsupported schema_version {version!r}")
        data["houses"] = tuple(HouseConfig(**h) for h in data["houses"])
        data["thresholds"] = tuple(data.get("thresholds", DEFAULT_THRESHOLDS))
        return cls(**data)

    def digest(self) -> str:
        """Stable short hash of the resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


TABLE1 = (
    HouseConfig("Alice", 72, 7.2, "house1"),
    HouseConfig("Bob", 54, 2.5, "house2"),
    HouseConfig("Charlie", 12, 5.0, "house3"),
    HouseConfig("Dave", 0, 0.0, "house1"),
)


def table1_configs(season: Season | str = Season.WINTER, seed: int = 0) -> tuple[ScenarioConfig, ScenarioConfig]:
    """Scenario 1 (Alice, Bob, Charlie) and Scenario 2 (plus Dave) from the published house table."""
    one = ScenarioConfig(TABLE1[:3], season=Season(season), seed=seed, name="scenario1")
    two = ScenarioConfig(TABLE1, season=Season(season), seed=seed, name="scenario2")
    return one, two
