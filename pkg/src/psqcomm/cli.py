"""Command-line entry point: ``psqcomm run|compare|placement <config.toml>``.

Config schema (TOML)::

    [experiment]            # all keys optional except env
    env = "teleport"        # teleport | epp | repeater2 | scaling
    agents = 100
    trials = 50000
    seed = 0
    out = "results/teleport"
    eta = 0.1
    gamma = 0.0
    beta = 1.0              # softmax inverse temperature
    workers = 1
    sub_agents = 16         # delegation budget per uncached block
    sub_trials = 2000
    sub_depth = 1           # delegation levels below the main agent
    max_block = 0           # longest block action in links, 0 = no cap

    [env]                   # keyword arguments of the environment
    variant = "base"        # teleport: base | v1 | v2
    gate_set = "clifford"   # teleport: clifford | universal
    # epp: initial_fidelity, depolarize_each_round
    # repeater2/scaling: RepeaterConfig fields, e.g. initial_fidelities,
    # segment_lengths_km, gate_reliability, threshold, tau_s ("inf" allowed),
    # symmetric_mode, idle_decay, delegation

    [sweep]                 # compare only
    param = "gate_reliability"
    values = [0.99, 0.995]

    [placement]             # placement only
    total_km = 20.0
    candidate_positions_km = [1.73, 5.98, 7.71, 9.44, 12.29, 14.02, 15.75]
    k = 1
    solver = "search"       # search | baseline | agent
    tau_s = 0.1
"""
from __future__ import annotations

import argparse
import json
import math
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import PlacementScenario, placement_search, write_placement_csv
from .experiment import ExperimentSpec, compare_to_baseline, run_experiment, write_comparison


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path!r}: {exc}") from exc


_EXPERIMENT_KEYS = {"env", "agents", "trials", "seed", "out", "eta", "gamma", "beta", "workers",
                    "sub_agents", "sub_trials", "sub_depth", "max_block"}


def spec_from_config(cfg: dict, args) -> ExperimentSpec:
    exp = dict(cfg.get("experiment", {}))
    unknown = set(exp) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"unknown [experiment] keys: {sorted(unknown)}")
    if "env" not in exp:
        raise ConfigError("[experiment] env is required")
    for flag in ("seed", "agents", "trials", "out", "workers"):
        v = getattr(args, flag, None)
        if v is not None:
            exp[flag] = v
    try:
        return ExperimentSpec(env_params=dict(cfg.get("env", {})), **exp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(args) -> int:
    spec = spec_from_config(load_config(args.config), args)
    result = run_experiment(spec)
    s = result.summary
    print(f"agents with a success: {s['agents_with_success']}/{spec.agents}; best {spec.metric}: {s['best_value']}")
    for p in result.paths.values():
        print(f"wrote {p}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg, args)
    sweep = cfg.get("sweep", {})
    rows = compare_to_baseline(spec, sweep.get("param"), sweep.get("values"))
    path = spec.out + "_compare.csv"
    write_comparison(rows, path, sweep.get("param", "point"))
    for r in rows:
        print(f"{r.label}: agent={r.agent_resources} baseline={r.baseline_resources} ratio={r.ratio}")
    print(f"wrote {path}")
    return 0


def cmd_placement(args) -> int:
    cfg = load_config(args.config)
    pl = dict(cfg.get("placement", {}))
    solver = pl.pop("solver", "search")
    out = args.out or cfg.get("experiment", {}).get("out", "placement")
    try:
        scenario = PlacementScenario(**pl)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[placement]: {exc}") from exc
    kwargs = {}
    if solver == "agent":
        kwargs = {"agents": args.agents or 4, "trials": args.trials or 2000, "seed": args.seed or 0}
    rows = placement_search(scenario, solver, **kwargs)
    path = out + "_placement.csv"
    with open(path, "w", newline="") as fh:
        write_placement_csv(rows, fh)
    for r in rows:
        res = f"{r.resources:.3e}" if math.isfinite(r.resources) else "inf"
        print(f"{','.join(map(str, r.subset))}: {res}")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psqcomm", description="Learning quantum communication protocols.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("compare", cmd_compare), ("placement", cmd_placement)):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--seed", type=int)
        p.add_argument("--agents", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
