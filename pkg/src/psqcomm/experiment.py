"""Seeded agent ensembles, learning-curve aggregation and output files.

Seed policy: ``np.random.SeedSequence(seed).spawn(agents)`` gives agent ``i``
its own child sequence; its first two 32-bit words seed the environment and
the agent.  Results are therefore independent of the number of workers.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import Pool
from typing import Any

import numpy as np

from .envs.base import run_trial
from .envs.epp import EppEnv
from .envs.repeater import BlockActionCache, DelegationBudget, RepeaterConfig, ScalingEnv
from .envs.teleport import MAX_ACTIONS, TeleportEnv
from .psagent import MetaParams, PSAgent

ENVIRONMENTS = ("teleport", "epp", "repeater2", "scaling")
UNDEFINED = "undefined"


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one ensemble run.

    ``env_params`` holds the keyword arguments of the chosen environment; for
    the repeater environments they are :class:`RepeaterConfig` fields.
    """

    env: str
    env_params: dict = field(default_factory=dict)
    eta: float = 0.1
    gamma: float = 0.0
    beta: float = 1.0
    agents: int = 100
    trials: int = 50_000
    seed: int = 0
    out: str = "run"
    workers: int = 1
    sub_agents: int = 16
    sub_trials: int = 2000
    sub_depth: int = 1
    max_block: int = 0  # longest block action; 0 means no cap

    def __post_init__(self):
        errors = []
        if self.env not in ENVIRONMENTS:
            errors.append(f"env: expected one of {ENVIRONMENTS}, got {self.env!r}")
        if not isinstance(self.agents, int) or self.agents < 1:
            errors.append("agents: must be an integer >= 1")
        if not isinstance(self.trials, int) or self.trials < 0:
            errors.append("trials: must be an integer >= 0")
        for name in ("eta", "gamma"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                errors.append(f"{name}: must lie in [0, 1]")
        if not isinstance(self.beta, (int, float)) or not 0.0 < self.beta < math.inf:
            errors.append("beta: must be a positive number")
        if not isinstance(self.workers, int) or self.workers < 1:
            errors.append("workers: must be an integer >= 1")
        for name in ("sub_agents", "sub_trials", "sub_depth", "max_block"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                errors.append(f"{name}: must be a non-negative integer")
        if errors:
            raise ValueError("invalid experiment spec: " + "; ".join(errors))

    @property
    def params(self) -> MetaParams:
        return MetaParams(self.eta, self.gamma, self.beta)

    @property
    def metric(self) -> str:
        return {"teleport": "actions", "epp": "reward"}.get(self.env, "resources")


def repeater_config(params: dict) -> RepeaterConfig:
    p = dict(params)
    for key in ("initial_fidelities", "segment_lengths_km", "initial_resources"):
        if p.get(key) is not None:
            p[key] = tuple(p[key])
    if isinstance(p.get("tau_s"), str):
        p["tau_s"] = float(p["tau_s"])
    if "num_links" not in p:
        seq = p.get("initial_fidelities") or p.get("segment_lengths_km")
        if seq is None:
            raise ValueError("env: repeater environments need initial_fidelities or segment_lengths_km")
        p["num_links"] = len(seq)
    return RepeaterConfig(**p)


def make_env(spec: ExperimentSpec, seed: int, cache: BlockActionCache | None = None):
    p = spec.env_params
    if spec.env == "teleport":
        return TeleportEnv(p.get("variant", "base"), p.get("gate_set", "clifford"), seed=seed,
                           max_actions=p.get("max_actions", MAX_ACTIONS))
    if spec.env == "epp":
        return EppEnv(p.get("initial_fidelity", 0.73), p.get("depolarize_each_round", False))
    cfg = repeater_config(p)
    budget = DelegationBudget(spec.sub_agents, spec.sub_trials, spec.sub_depth, spec.max_block or None)
    if spec.env == "repeater2":
        return ScalingEnv(cfg, delegation=False, seed=seed, params=spec.params)
    return ScalingEnv(cfg, delegation=p.get("delegation", True), cache=cache, budget=budget,
                      seed=seed, params=spec.params)


@dataclass
class AgentRun:
    index: int
    metric: np.ndarray  # per-trial value; nan where undefined
    success: np.ndarray  # bool per trial
    best_value: float
    best_trial: int
    best_actions: list
    best_detail: Any
    best_reward: float


def _agent_seeds(spec: ExperimentSpec) -> list[tuple[int, int]]:
    children = np.random.SeedSequence(spec.seed).spawn(spec.agents)
    return [tuple(int(x) for x in c.generate_state(2)) for c in children]


def _detail(spec: ExperimentSpec, env) -> Any:
    if spec.env == "teleport":
        return [[env.action_name(a), o] for a, o in env.transcript]
    if spec.env == "epp":
        tree = env.last_tree
        return [[[env.action_name(a) + ("" if o is None else f"[{o:+d}]") for a, o in leaf.path], leaf.decision]
                for leaf in tree.leaves] if tree is not None else None
    return [list(op) for op in env.protocol]


def run_agent(spec: ExperimentSpec, index: int, seeds: tuple[int, int],
              cache: BlockActionCache | None = None) -> AgentRun:
    env_seed, agent_seed = seeds
    env = make_env(spec, env_seed, cache)
    agent = PSAgent(env.num_actions, spec.params, seed=agent_seed)
    metric = np.full(spec.trials, np.nan)
    success = np.zeros(spec.trials, dtype=bool)
    lower_is_better = spec.metric != "reward"
    best = (math.inf if lower_is_better else -math.inf)
    best_trial, best_actions, best_detail, best_reward = -1, [], None, 0.0
    for t in range(spec.trials):
        rec = run_trial(agent, env)
        success[t] = rec.success
        if spec.metric == "actions":
            value = rec.n_actions if rec.success else MAX_ACTIONS
        elif spec.metric == "reward":
            value = rec.reward
        else:
            value = rec.resources if rec.success else math.nan
        metric[t] = value
        if rec.success and (value < best if lower_is_better else value > best):
            best, best_trial, best_reward = value, t, rec.reward
            best_actions = [env.action_name(a) for a in rec.actions]
            best_detail = _detail(spec, env)
    return AgentRun(index, metric, success, best, best_trial, best_actions, best_detail, best_reward)


def _run_agent_star(args):
    return run_agent(*args)


def run_ensemble(spec: ExperimentSpec) -> list[AgentRun]:
    seeds = _agent_seeds(spec)
    if spec.workers > 1 and spec.agents > 1:
        with Pool(spec.workers) as pool:
            return pool.map(_run_agent_star, [(spec, i, s, None) for i, s in enumerate(seeds)])
    cache = BlockActionCache() if spec.env == "scaling" else None
    return [run_agent(spec, i, s, cache) for i, s in enumerate(seeds)]


@dataclass
class CurveRow:
    trial: int
    mean: float
    band: float  # standard deviation across agents divided by 3
    success_fraction: float
    best: float


def aggregate(runs: list[AgentRun], metric: str) -> list[CurveRow]:
    """Per-trial mean across agents; resources are averaged over the agents that succeeded."""
    if not runs:
        return []
    values = np.vstack([r.metric for r in runs])
    success = np.vstack([r.success for r in runs])
    rows = []
    for t in range(values.shape[1]):
        col = values[:, t]
        ok = col[~np.isnan(col)]
        if ok.size:
            mean = float(np.mean(ok))
            band = float(np.std(ok)) / 3.0
            best = float(np.min(ok) if metric != "reward" else np.max(ok))
        else:
            mean = band = best = math.nan
        rows.append(CurveRow(t, mean, band, float(np.mean(success[:, t])), best))
    return rows


def write_curve(rows: list[CurveRow], path: str, metric: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", f"mean_{metric}", "band", "success_fraction", "best"])
        for r in rows:
            w.writerow([r.trial, repr(r.mean), repr(r.band), repr(r.success_fraction), repr(r.best)])


def final_rewards(runs: list[AgentRun], tail: float = 0.1) -> np.ndarray:
    """Per-agent mean reward over the last ``tail`` fraction of trials."""
    out = []
    for r in runs:
        n = max(1, int(round(len(r.metric) * tail)))
        out.append(float(np.mean(r.metric[-n:])) if len(r.metric) else math.nan)
    return np.array(out)


def write_histogram(values: np.ndarray, path: str, width: float = 0.05) -> None:
    """Counts of ``values`` in bins ``[k w, (k+1) w)``."""
    ok = values[np.isfinite(values)]
    top = max(1.0, float(ok.max()) if ok.size else 1.0)
    edges = np.arange(0.0, top + width, width)
    counts, edges = np.histogram(ok, bins=edges)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "agents"])
        for lo, hi, c in zip(edges, edges[1:], counts):
            w.writerow([f"{lo:.4f}", f"{hi:.4f}", int(c)])


def write_transcripts(runs: list[AgentRun], path: str) -> None:
    with open(path, "w") as fh:
        for r in runs:
            rec = {"agent": r.index, "trial": r.best_trial, "actions": r.best_actions,
                   "reward": r.best_reward, "value": None if not math.isfinite(r.best_value) else r.best_value,
                   "detail": r.best_detail}
            fh.write(json.dumps(rec) + "\n")


def _summary(spec: ExperimentSpec, runs: list[AgentRun]) -> dict:
    lower = spec.metric != "reward"
    finite = [r for r in runs if math.isfinite(r.best_value)]
    best = (min if lower else max)(finite, key=lambda r: r.best_value) if finite else None
    return {
        "spec": asdict(spec),
        "metric": spec.metric,
        "agents_with_success": sum(bool(r.success.any()) for r in runs),
        "best_value": best.best_value if best else None,
        "best_agent": best.index if best else None,
        "best_actions": best.best_actions if best else None,
        "best_detail": best.best_detail if best else None,
    }


class ExperimentResult:
    def __init__(self, spec, runs, rows, paths):
        self.spec, self.runs, self.rows, self.paths = spec, runs, rows, paths

    @property
    def summary(self) -> dict:
        return _summary(self.spec, self.runs)


def output_paths(prefix: str, metric: str = "") -> dict:
    paths = {"curve": prefix + "_curve.csv", "transcripts": prefix + "_transcripts.jsonl",
             "summary": prefix + "_summary.json"}
    if metric == "reward":
        paths["histogram"] = prefix + "_histogram.csv"
    return paths


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Train the ensemble and write curve CSV, transcript JSONL and summary JSON.

    Reward-based runs also get a histogram of the agents' final rewards.
    """
    paths = output_paths(spec.out, spec.metric)
    try:
        runs = run_ensemble(spec)
        rows = aggregate(runs, spec.metric)
        d = os.path.dirname(spec.out)
        if d:
            os.makedirs(d, exist_ok=True)
        write_curve(rows, paths["curve"], spec.metric)
        write_transcripts(runs, paths["transcripts"])
        if "histogram" in paths:
            write_histogram(final_rewards(runs), paths["histogram"])
        with open(paths["summary"], "w") as fh:
            json.dump(_summary(spec, runs), fh, indent=2, default=_json_default)
    except BaseException:
        for p in paths.values():
            if os.path.exists(p):
                os.remove(p)
        raise
    return ExperimentResult(spec, runs, rows, paths)


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class ComparisonRow:
    def __init__(self, label, agent_resources, baseline_resources):
        self.label = label
        self.agent_resources = agent_resources
        self.baseline_resources = baseline_resources

    @property
    def ratio(self):
        a, b = self.agent_resources, self.baseline_resources
        if a is None or b is None or not math.isfinite(a) or not math.isfinite(b):
            return UNDEFINED
        return a / b

    def as_list(self):
        return [self.label, self.agent_resources, self.baseline_resources, self.ratio]


def compare_to_baseline(spec: ExperimentSpec, sweep_param: str | None = None,
                        sweep_values: list | None = None) -> list[ComparisonRow]:
    """Agent resources against the optimized working-fidelity strategy, per sweep point."""
    from .baselines import optimize_working_fidelity

    if spec.env not in ("repeater2", "scaling"):
        raise ValueError("compare_to_baseline needs a repeater environment")
    points = [(None, spec)]
    if sweep_param:
        points = [(v, replace(spec, env_params={**spec.env_params, sweep_param: v})) for v in sweep_values]
    rows = []
    for label, s in points:
        base = optimize_working_fidelity(repeater_config(s.env_params), strict=False)
        agent_res = None
        if s.trials > 0:
            runs = run_ensemble(s)
            vals = [r.best_value for r in runs if math.isfinite(r.best_value)]
            agent_res = min(vals) if vals else None
        rows.append(ComparisonRow(label, agent_res, base.expected_resources if base.success else None))
    return rows


def write_comparison(rows: list[ComparisonRow], path: str, label: str = "point") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label, "agent_resources", "baseline_resources", "ratio"])
        for r in rows:
            w.writerow(["" if x is None else x for x in r.as_list()])
