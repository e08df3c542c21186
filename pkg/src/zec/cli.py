"""Command line entry point: ``zec run | compare | gen-data | serve-cms``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from zec import data
from zec.baselines import Strategy
from zec.domain import ScenarioConfig, Season
from zec.harness import LearnerParams, build_scenario, compare, run_to_dir, write_compare_csv, write_config

log = logging.getLogger("zec")


def _scenario(args) -> ScenarioConfig:
    if args.config:
        config = ScenarioConfig.load(args.config)
    else:
        config = build_scenario(args.scenario, args.season, 0 if args.seed is None else args.seed)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.days is not None:
        overrides["days"] = args.days
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.yield_factor is not None:
        overrides["yield_factor"] = args.yield_factor
    if args.data_dir is not None:
        overrides["data_dir"] = str(args.data_dir)
    return config.with_(**overrides) if overrides else config


def _params(args) -> LearnerParams:
    return LearnerParams(learning_rate=args.learning_rate, gamma=args.gamma, batch_size=args.batch_size, replay_capacity=args.replay_capacity)


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--season", choices=[s.value for s in Season], default=Season.WINTER.value)
    p.add_argument("--config", type=Path, help="scenario file; overrides --scenario/--season")
    p.add_argument("--episodes", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--yield-factor", type=float, dest="yield_factor")
    p.add_argument("--data-dir", type=Path, dest="data_dir", help="directory of <profile>_<season>.csv inputs")
    defaults = LearnerParams()
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate, dest="learning_rate")
    p.add_argument("--gamma", type=float, default=defaults.gamma)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size, dest="batch_size")
    p.add_argument("--replay-capacity", type=int, default=defaults.replay_capacity, dest="replay_capacity")
    p.add_argument("--out", type=Path, required=True)


def cmd_run(args) -> int:
    config = _scenario(args)
    report = run_to_dir(config, args.strategy, config.episodes, args.out, params=_params(args), steps=not args.no_steps)
    print(f"{report.strategy.value}: final-10 mean community status {report.final_status():.3f} kWh -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    config = _scenario(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows, runs = compare(config, args.strategies.split(","), config.episodes, seeds, params=_params(args))
    args.out.mkdir(parents=True, exist_ok=True)
    write_compare_csv(rows, args.out / "compare.csv")
    write_config(config, Strategy.LEARNED, _params(args), args.out / "config.txt")
    for (strategy, seed), report in sorted(runs.items(), key=lambda kv: (list(Strategy).index(kv[0][0]), kv[0][1])):
        print(f"{strategy.value:>8} seed {seed}: final-10 mean {report.final_status():.3f} kWh")
    return 0


def cmd_gen_data(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for season in Season:
        for ref, mean in data.DAILY_MEAN_KWH[season].items():
            seed = data.profile_seed(ref, season) if args.seed is None else [args.seed, data.profile_seed(ref, season)]
            profile = data.synthesize_consumption(seed, mean, args.days)
            data.write_consumption(profile, data.fixture_path(ref, season, out))
        data.write_exposure(data.clear_sky_exposure(season, args.days), data.fixture_path("exposure", season, out))
    print(f"wrote consumption and exposure series for {args.days} day(s) to {out}")
    return 0


def cmd_serve_cms(args) -> int:
    from zec.cms import make_server

    server = make_server(host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"CMS listening on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zec", description="Multi-agent DQN energy sharing simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train or evaluate one strategy")
    _add_scenario_args(p)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.LEARNED.value)
    p.add_argument("--no-steps", action="store_true", help="skip the per-slot steps.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several strategies over several seeds")
    _add_scenario_args(p)
    p.add_argument("--strategies", default="learned,always,never,random")
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-data", help="write synthetic consumption and exposure files")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--days", type=int, default=3)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("serve-cms", help="serve the community monitoring service over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve_cms)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
