"""Reference repeater strategies and the station-placement search."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .envs.repeater import (
    BlockActionCache, DelegationBudget, RepeaterConfig, RepeaterState, ScalingEnv,
)
from .psagent import MetaParams, PSAgent

MAX_ROUNDS = 400


class StrategyResult(NamedTuple):
    protocol: tuple
    final_fidelity: float
    expected_resources: float
    working_fidelity: float
    success: bool = True


def _failure(F_w: float) -> StrategyResult:
    return StrategyResult((), float("nan"), math.inf, F_w, False)


def _purify_all_to(state: RepeaterState, target: float, ops: list) -> bool:
    """Leftmost-first sweeps of one purification step on every pair below ``target``."""
    for _ in range(MAX_ROUNDS):
        low = [i for i, p in enumerate(state.pairs) if p.fidelity < target]
        if not low:
            return True
        for i in low:
            p = state.pairs[i]
            before = p.fidelity
            state.purify_index(i)
            ops.append(("purify", p.left_station, p.right_station))
            if state.pairs[i].fidelity <= before:
                return False
    return False


def _is_nested(state: RepeaterState) -> bool:
    links = [p.links for p in state.pairs]
    n = len(links)
    return n & (n - 1) == 0 and len(set(links)) == 1


def _swap_station(state: RepeaterState) -> int:
    # smallest combined number of links, leftmost on ties
    best, station = None, None
    for a, b in zip(state.pairs, state.pairs[1:]):
        combined = a.links + b.links
        if best is None or combined < best:
            best, station = combined, a.right_station
    return station


def working_fidelity_strategy(config: RepeaterConfig, F_w: float, nested: bool | None = None) -> StrategyResult:
    """Purify every pair to ``F_w``, swap, repeat; the last pair is purified to the threshold.

    With ``2^k`` equal links the swaps happen at every second active station
    (fully nested scheme); otherwise one swap per round at the station whose
    two pairs span the fewest links.  ``nested=False`` forces the general
    rule for every length.
    """
    if not 0.25 < F_w < 1.0:
        raise ValueError("F_w must lie in (0.25, 1)")
    state = RepeaterState(config)
    ops: list = []
    use_nested = _is_nested(state) if nested is None else nested
    while True:
        last = len(state.pairs) == 1
        target = config.threshold if last else F_w
        if not _purify_all_to(state, target, ops):
            return _failure(F_w)
        if last:
            break
        if use_nested:
            for s in state.inner_stations()[0::2]:
                state.swap_at(s)
                ops.append(("swap", s))
        else:
            s = _swap_station(state)
            state.swap_at(s)
            ops.append(("swap", s))
    p = state.final_pair()
    return StrategyResult(tuple(ops), p.fidelity, p.expected_resources, F_w, True)


def optimize_working_fidelity(config: RepeaterConfig, grid_step: float = 0.001,
                              lo: float = 0.3, hi: float = 0.999, strict: bool = True,
                              nested: bool | None = None) -> StrategyResult:
    """Minimum-resource working-fidelity strategy over a grid of ``F_w`` plus bounded refinement."""
    best = _failure(float("nan"))
    for F_w in np.arange(lo, hi + 1e-12, grid_step):
        r = working_fidelity_strategy(config, float(F_w), nested)
        if r.success and r.expected_resources < best.expected_resources:
            best = r
    if best.success:
        def objective(x):
            r = working_fidelity_strategy(config, float(x), nested)
            return r.expected_resources if r.success else 1e300
        a = max(lo, best.working_fidelity - grid_step)
        b = min(hi, best.working_fidelity + grid_step)
        opt = minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": 1e-6})
        refined = working_fidelity_strategy(config, float(opt.x), nested)
        if refined.success and refined.expected_resources < best.expected_resources:
            best = refined
    if strict and not best.success:
        raise ValueError("no working fidelity reaches the threshold for this configuration")
    return best


# structured search ------------------------------------------------------------

def _swap_trees(lo: int, hi: int):
    """All binary swap orders over links ``lo .. hi-1`` as nested tuples."""
    if hi - lo == 1:
        yield lo
        return
    for mid in range(lo + 1, hi):
        for left in _swap_trees(lo, mid):
            for right in _swap_trees(mid, hi):
                yield (left, mid, right)


def _tree_nodes(tree) -> list:
    if isinstance(tree, int):
        return [tree]
    left, _, right = tree
    return _tree_nodes(left) + _tree_nodes(right) + [tree]


def _tree_ops(tree, counts: dict, bounds: dict) -> list:
    if isinstance(tree, int):
        return [("purify", tree, tree + 1)] * counts[tree]
    left, mid, right = tree
    lo, hi = bounds[tree]
    ops = _tree_ops(left, counts, bounds) + _tree_ops(right, counts, bounds) + [("swap", mid)]
    return ops + [("purify", lo, hi)] * counts[tree]


def _span(tree) -> tuple:
    if isinstance(tree, int):
        return tree, tree + 1
    return _span(tree[0])[0], _span(tree[2])[1]


def _evaluate(config, tree, counts, bounds):
    ops = _tree_ops(tree, counts, bounds)
    state = RepeaterState(config).run(ops)
    p = state.final_pair()
    return ops, p


def structured_search(config: RepeaterConfig, max_count: int = 30, max_final: int = 12) -> StrategyResult:
    """Best protocol that processes each swap subtree left to right.

    Every pair is purified a chosen number of times right before it is used.
    Purification counts are searched exhaustively for two links and by
    coordinate descent otherwise, for every swap order.
    """
    L = config.num_links
    if L == 1:
        state = RepeaterState(config)
        ops: list = []
        if not _purify_all_to(state, config.threshold, ops):
            return _failure(float("nan"))
        p = state.final_pair()
        return StrategyResult(tuple(ops), p.fidelity, p.expected_resources, float("nan"))
    best = _failure(float("nan"))

    def consider(ops, p):
        nonlocal best
        if p.fidelity >= config.threshold and p.expected_resources < best.expected_resources:
            best = StrategyResult(tuple(ops), p.fidelity, p.expected_resources, float("nan"))

    for tree in _swap_trees(0, L):
        nodes = _tree_nodes(tree)
        bounds = {n: _span(n) for n in nodes if not isinstance(n, int)}
        if L == 2:
            for i in range(max_count + 1):
                for j in range(max_count + 1):
                    for k in range(max_final + 1):
                        ops, p = _evaluate(config, tree, {0: i, 1: j, tree: k}, bounds)
                        consider(ops, p)
                        if p.fidelity >= config.threshold:
                            break
            continue
        counts = {n: 0 for n in nodes}
        # start from a working-fidelity-like allocation: purify elementary pairs until they stop helping
        for _ in range(3):
            improved = False
            for n in nodes:
                cur_ops, cur = _evaluate(config, tree, counts, bounds)
                cur_val = cur.expected_resources if cur.fidelity >= config.threshold else math.inf
                best_c, best_val = counts[n], cur_val
                for c in range(max_count + 1):
                    counts[n] = c
                    ops, p = _evaluate(config, tree, counts, bounds)
                    consider(ops, p)
                    val = p.expected_resources if p.fidelity >= config.threshold else math.inf
                    if val < best_val:
                        best_c, best_val = c, val
                counts[n] = best_c
                if best_val < cur_val:
                    improved = True
            if not improved and best.success:
                break
    return best


# placement ------------------------------------------------------------------------

@dataclass(frozen=True)
class PlacementScenario:
    total_km: float
    candidate_positions_km: tuple
    k: int
    attenuation_km: float = 22.0
    gate_reliability: float = 0.99
    threshold: float = 0.9
    tau_s: float = 0.1
    speed_m_per_s: float = 2e8
    idle_decay: bool = True

    def __post_init__(self):
        pos = tuple(float(x) for x in self.candidate_positions_km)
        object.__setattr__(self, "candidate_positions_km", pos)
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("candidate positions must be strictly increasing")
        if pos and (pos[0] <= 0 or pos[-1] >= self.total_km):
            raise ValueError("candidate positions must lie strictly inside (0, total_km)")
        if not 0 <= self.k <= len(pos):
            raise ValueError("k must lie between 0 and the number of candidates")

    def config_for(self, subset: Sequence[int]) -> RepeaterConfig:
        """Repeater line through the chosen (1-based) candidate locations."""
        cuts = [0.0] + [self.candidate_positions_km[i - 1] for i in subset] + [self.total_km]
        lengths = tuple(b - a for a, b in zip(cuts, cuts[1:]))
        return RepeaterConfig(
            num_links=len(lengths), segment_lengths_km=lengths, attenuation_km=self.attenuation_km,
            gate_reliability=self.gate_reliability, threshold=self.threshold, tau_s=self.tau_s,
            speed_m_per_s=self.speed_m_per_s, idle_decay=self.idle_decay,
        )


class PlacementRow(NamedTuple):
    subset: tuple
    resources: float
    final_fidelity: float
    working_fidelity: float
    protocol: tuple


def best_agent_protocol(config: RepeaterConfig, agents: int = 4, trials: int = 2000, seed: int = 0,
                        budget: DelegationBudget = DelegationBudget(4, 300),
                        cache: BlockActionCache | None = None) -> StrategyResult:
    """Lowest-resource protocol found by an ensemble of agents."""
    ss = np.random.SeedSequence(seed)
    cache = cache if cache is not None else BlockActionCache(config.percept_decimals)
    best = _failure(float("nan"))
    for child in ss.spawn(agents):
        s_env, s_agent = (int(x) for x in child.generate_state(2))
        env = ScalingEnv(config, delegation=True, cache=cache, budget=budget, seed=s_env)
        agent = PSAgent(env.num_actions, MetaParams(eta=0.0), seed=s_agent)
        for _ in range(trials):
            step = env.reset()
            agent.begin_trial()
            while not step.done:
                step = env.step(agent.act(step.percept, step.available_actions))
                agent.learn(step.reward)
            if env.succeeded and env.resources < best.expected_resources:
                p = env.state.final_pair()
                best = StrategyResult(tuple(env.protocol), p.fidelity, p.expected_resources, float("nan"))
    return best


def solve(config: RepeaterConfig, solver: str = "search", **agent_kwargs) -> StrategyResult:
    if solver == "baseline":
        if config.num_links == 1:
            return structured_search(config)
        return optimize_working_fidelity(config, strict=False)
    if solver == "search":
        return structured_search(config)
    if solver == "agent":
        if config.num_links == 1:
            return structured_search(config)
        return best_agent_protocol(config, **agent_kwargs)
    raise ValueError(f"unknown solver {solver!r}")


def placement_search(scenario: PlacementScenario, solver: str = "search", **solver_kwargs) -> list[PlacementRow]:
    """Evaluate every choice of ``k`` locations and rank by expected resources.

    Infeasible subsets are ranked last with infinite resources.
    """
    n = len(scenario.candidate_positions_km)
    rows = []
    for subset in itertools.combinations(range(1, n + 1), scenario.k):
        r = solve(scenario.config_for(subset), solver, **solver_kwargs)
        rows.append(PlacementRow(subset, r.expected_resources, r.final_fidelity, r.working_fidelity, r.protocol))
    rows.sort(key=lambda row: (row.resources, row.subset))
    return rows


def write_placement_csv(rows: Iterable[PlacementRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["subset", "resources", "final_fidelity", "working_fidelity"])
    for r in rows:
        w.writerow([" ".join(map(str, r.subset)), repr(r.resources), repr(r.final_fidelity), repr(r.working_fidelity)])
