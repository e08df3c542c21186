"""Experiment driver: scenario construction, training/evaluation runs, strategy comparison, CSV output."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from zec.agent import EpisodeReport, HouseAgent, run_episode
from zec.baselines import Strategy
from zec.cms import CommunityMonitoringService
from zec.domain import DEFAULT_UNIT_COUNT, DEFAULT_UNIT_KWH, Action, HouseConfig, InvalidInput, ScenarioConfig, Season, table1_configs
from zec.drl import PAPER_GAMMA, EpsilonSchedule
from zec.env import CommunityEnv, StepLog

SCENARIO3_HOUSES = 10
SCENARIO3_CELL_CHOICES = tuple(range(0, 73, 12))
SCENARIO3_PROFILES = ("house1", "house2", "house3")


def build_scenario(scenario_id: int, season: Season | str = Season.WINTER, seed: int = 0, **overrides) -> ScenarioConfig:
    """Scenario 1 (3 houses) and 2 (4 houses) from the published table; 3 is ten seeded random houses."""
    season = Season(season)
    if scenario_id in (1, 2):
        config = table1_configs(season, seed)[scenario_id - 1]
    elif scenario_id == 3:
        rng = np.random.default_rng(seed)
        capacity = DEFAULT_UNIT_KWH * DEFAULT_UNIT_COUNT
        houses = tuple(
            HouseConfig(
                f"House{i + 1:02d}",
                int(rng.choice(SCENARIO3_CELL_CHOICES)),
                round(float(rng.uniform(0.0, capacity)), 3),
                str(rng.choice(SCENARIO3_PROFILES)),
            )
            for i in range(SCENARIO3_HOUSES)
        )
        rule = (
            f"{SCENARIO3_HOUSES} houses; solar cells uniform over {list(SCENARIO3_CELL_CHOICES)}; "
            f"initial charge uniform in [0, {capacity:g}] kWh; profile uniform over {list(SCENARIO3_PROFILES)}; "
            f"drawn from seed {seed}"
        )
        config = ScenarioConfig(houses, season=season, seed=seed, name="scenario3", notes={"generation_rule": rule})
    else:
        raise InvalidInput(f"unknown scenario id {scenario_id!r}; expected 1, 2 or 3")
    return config.with_(**overrides) if overrides else config


@dataclass(frozen=True)
class LearnerParams:
    learning_rate: float = 0.02
    gamma: float = PAPER_GAMMA
    batch_size: int = 32
    replay_capacity: int = 10_000


@dataclass
class RunReport:
    strategy: Strategy
    seed: int
    config_digest: str
    agent_ids: list[str]
    epsilon: list[float] = field(default_factory=list)
    community_status: list[float] = field(default_factory=list)
    grid: dict[str, list[float]] = field(default_factory=dict)
    neighbour: dict[str, list[float]] = field(default_factory=dict)
    episodes: list[EpisodeReport] = field(default_factory=list)
    evaluation: EpisodeReport | None = None
    agents: dict[str, HouseAgent] = field(default_factory=dict, repr=False)

    def add(self, episode: EpisodeReport) -> None:
        self.episodes.append(episode)
        self.epsilon.append(episode.epsilon)
        self.community_status.append(episode.community_status)
        for agent_id, stats in episode.agents.items():
            self.grid.setdefault(agent_id, []).append(stats.grid_kwh)
            self.neighbour.setdefault(agent_id, []).append(stats.neighbour_kwh)

    def final_status(self, last: int = 10) -> float:
        """Mean community status over the last ``last`` episodes."""
        return float(np.mean(self.community_status[-last:]))


def make_agents(config: ScenarioConfig, strategy: Strategy, rng: np.random.Generator, params: LearnerParams) -> dict[str, HouseAgent]:
    agents = {}
    for agent_id in config.agent_ids:
        net_seed = int(rng.integers(2**63))
        agents[agent_id] = HouseAgent(
            agent_id,
            strategy,
            learning_rate=params.learning_rate,
            gamma=params.gamma,
            batch_size=params.batch_size,
            replay_capacity=params.replay_capacity,
            random_state=net_seed,
        )
    return agents


def run(
    config: ScenarioConfig,
    strategy: Strategy | str = Strategy.LEARNED,
    episodes: int | None = None,
    *,
    seed: int | None = None,
    params: LearnerParams = LearnerParams(),
    evaluate: bool = True,
    step_log: StepLog | None = None,
    env: CommunityEnv | None = None,
) -> RunReport:
    """Train (learned strategy) or replay (baselines) for ``episodes`` episodes.

    A learned run ends with one exploitation-mode episode (epsilon 0, no
    updates) stored in ``RunReport.evaluation``.
    """
    strategy = Strategy(strategy)
    episodes = config.episodes if episodes is None else episodes
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    env = CommunityEnv.from_config(config) if env is None else env
    cms = CommunityMonitoringService()
    agents = make_agents(config, strategy, rng, params)
    for agent_id in agents:
        cms.join(agent_id)
    schedule = EpsilonSchedule(episodes)
    learn = strategy is Strategy.LEARNED
    report = RunReport(strategy, seed, config.digest(), config.agent_ids)
    for k in range(episodes):
        report.add(run_episode(agents, env, cms, schedule, k, rng, learn=learn, step_log=step_log))
    if learn and evaluate:
        report.evaluation = run_episode(agents, env, cms, schedule, episodes, rng, learn=False, exploit=True)
    report.agents = agents
    return report


def compare(
    config: ScenarioConfig,
    strategies: Sequence[Strategy | str],
    episodes: int | None = None,
    seeds: Sequence[int] = (0,),
    params: LearnerParams = LearnerParams(),
) -> tuple[list[dict], dict[tuple[Strategy, int], RunReport]]:
    """Run every (strategy, seed) pair; return mean/sd community status per (strategy, episode)."""
    order = list(Strategy)
    strategies = sorted({Strategy(s) for s in strategies}, key=order.index)
    env = CommunityEnv.from_config(config)
    runs = {}
    for strategy in strategies:
        for seed in seeds:
            runs[strategy, seed] = run(config, strategy, episodes, seed=seed, params=params, env=env)
    rows = []
    for strategy in strategies:
        series = np.array([runs[strategy, s].community_status for s in seeds])
        for k in range(series.shape[1]):
            values = series[:, k].tolist()
            rows.append(
                {
                    "strategy": strategy.value,
                    "episode": k,
                    "mean_status": statistics.fmean(values),
                    "sd_status": statistics.stdev(values) if len(values) > 1 else 0.0,
                    "n_seeds": len(values),
                }
            )
    return rows, runs


def _fmt(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else value


def write_report_csv(report: RunReport, path) -> None:
    ids = report.agent_ids
    header = ["episode", "strategy", "seed", "epsilon", "community_status"]
    header += [f"grid_{a}" for a in ids] + [f"neighbour_{a}" for a in ids]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, status in enumerate(report.community_status):
            row = [k, report.strategy.value, report.seed, report.epsilon[k], status]
            row += [report.grid[a][k] for a in ids] + [report.neighbour[a][k] for a in ids]
            writer.writerow([_fmt(v) for v in row])


AGENT_LOG_FIELDS = ["episode", "agent", "epsilon"] + [f"n_{a.name.lower()}" for a in Action] + [
    "grid_kwh",
    "neighbour_kwh",
    "final_battery",
]


def write_agent_log(report: RunReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGENT_LOG_FIELDS)
        for episode in report.episodes:
            for agent_id in report.agent_ids:
                stats = episode.agents[agent_id]
                row = [episode.episode, agent_id, episode.epsilon] + [stats.actions.get(a, 0) for a in Action]
                row += [stats.grid_kwh, stats.neighbour_kwh, stats.final_battery]
                writer.writerow([_fmt(v) for v in row])


def write_compare_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["strategy", "episode", "mean_status", "sd_status", "n_seeds"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_config(config: ScenarioConfig, strategy: Strategy, params: LearnerParams, path) -> None:
    resolved = {"scenario": config.to_dict(), "strategy": Strategy(strategy).value, "learner": asdict(params)}
    text = f"# config digest: {config.digest()}\n" + json.dumps(resolved, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text)


def run_to_dir(config: ScenarioConfig, strategy, episodes: int | None, out_dir, *, seed=None, params=LearnerParams(), steps=True) -> RunReport:
    """``run`` plus report.csv, agents.csv, steps.csv and config.txt under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = StepLog() if steps else None
    report = run(config, strategy, episodes, seed=seed, params=params, step_log=log)
    write_config(config, Strategy(strategy), params, out / "config.txt")
    write_report_csv(report, out / "report.csv")
    write_agent_log(report, out / "agents.csv")
    if log is not None:
        log.write(out / "steps.csv")
    return report
