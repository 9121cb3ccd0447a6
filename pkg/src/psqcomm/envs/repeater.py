"""Quantum-repeater environments on a line of stations ``0 .. L``.

All pair states stay in Werner form (BBPSSW outputs, swaps and depolarizing
noise all preserve it), and failed purifications are accounted for in
expectation, so a protocol is a deterministic sequence of primitive
operations:

* ``("purify", l, r)``: one BBPSSW step on the pair between stations ``l`` and ``r``;
* ``("swap", s)``: entanglement swapping at station ``s``.

Each purification round keeps both qubits of the pair in memory for the
classical signalling time ``span / c``.  With ``idle_decay`` every other
stored pair waits (and decays) for the same time; elementary pairs that have
not been operated on yet are produced on demand and do not decay.
"""
from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

from ..belldiag import (
    TrackedPair, channel_noise, combine_resources, memory_decay, purify_bbpssw, swap, werner,
)
from ..psagent import MetaParams, PSAgent
from .base import EnvStep

Op = tuple  # ("purify", l, r) or ("swap", s)


@dataclass(frozen=True)
class RepeaterConfig:
    """Static description of a repeater line.

    Parameters
    ----------
    num_links : int
        Number of elementary links ``L``.
    initial_fidelities : tuple of float, optional
        Werner fidelity of every elementary pair.  Derived from
        ``segment_lengths_km`` and ``attenuation_km`` when omitted.
    segment_lengths_km : tuple of float, optional
        Link lengths; they also set the memory waiting times.
    initial_resources : tuple of float, optional
        Expected cost already sunk into each starting pair (default 1).
    tau_s : float
        Memory decoherence time; ``inf`` disables memory noise.
    """

    num_links: int
    initial_fidelities: tuple | None = None
    segment_lengths_km: tuple | None = None
    attenuation_km: float = 22.0
    gate_reliability: float = 0.99
    threshold: float = 0.9
    tau_s: float = math.inf
    speed_m_per_s: float = 2e8
    symmetric_mode: bool = False
    idle_decay: bool = True
    percept_decimals: int = 3
    max_actions: int = 60
    initial_resources: tuple | None = None

    def __post_init__(self):
        if self.num_links < 1:
            raise ValueError("num_links must be at least 1")
        L = self.num_links
        if self.segment_lengths_km is not None:
            lengths = tuple(float(x) for x in self.segment_lengths_km)
            if len(lengths) != L or min(lengths) < 0:
                raise ValueError("segment_lengths_km needs num_links non-negative entries")
            object.__setattr__(self, "segment_lengths_km", lengths)
        if self.initial_fidelities is None:
            if self.segment_lengths_km is None:
                raise ValueError("give initial_fidelities or segment_lengths_km")
            fids = tuple(channel_noise(werner(1.0), x, self.attenuation_km).fidelity
                         for x in self.segment_lengths_km)
        else:
            fids = tuple(float(f) for f in self.initial_fidelities)
        if len(fids) != L:
            raise ValueError(f"expected {L} initial fidelities, got {len(fids)}")
        if any(not 0.25 <= f <= 1.0 for f in fids):
            raise ValueError("initial fidelities must lie in [0.25, 1]")
        object.__setattr__(self, "initial_fidelities", fids)
        if self.initial_resources is not None:
            res = tuple(float(r) for r in self.initial_resources)
            if len(res) != L or min(res) < 1.0 - 1e-12:
                raise ValueError("initial_resources needs num_links entries >= 1")
            object.__setattr__(self, "initial_resources", res)
        if not 0.25 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0.25, 1]")
        if not 0.0 <= self.gate_reliability <= 1.0:
            raise ValueError("gate_reliability must lie in [0, 1]")
        if not self.tau_s > 0:
            raise ValueError("tau_s must be positive (or inf)")
        if not self.speed_m_per_s > 0:
            raise ValueError("speed_m_per_s must be positive")
        if self.max_actions < 1:
            raise ValueError("max_actions must be positive")

    @property
    def lengths(self) -> tuple:
        return self.segment_lengths_km or (0.0,) * self.num_links

    @property
    def resources(self) -> tuple:
        return self.initial_resources or (1.0,) * self.num_links

    def initial_pairs(self) -> list[TrackedPair]:
        return [TrackedPair(i, i + 1, werner(f), r, x)
                for i, (f, r, x) in enumerate(zip(self.initial_fidelities, self.resources, self.lengths))]


class RepeaterState:
    """Pairs currently held along the line, ordered left to right."""

    def __init__(self, config: RepeaterConfig, pairs: Sequence[TrackedPair] | None = None):
        self.config = config
        self.pairs: list[TrackedPair] = list(pairs) if pairs is not None else config.initial_pairs()
        self.fresh = [True] * len(self.pairs)  # not operated on yet
        self.elapsed_s = 0.0

    def copy(self) -> "RepeaterState":
        s = RepeaterState(self.config, self.pairs)
        s.fresh = list(self.fresh)
        s.elapsed_s = self.elapsed_s
        return s

    @property
    def stations(self) -> list[int]:
        return [p.left_station for p in self.pairs] + [self.pairs[-1].right_station]

    def inner_stations(self) -> list[int]:
        return [p.left_station for p in self.pairs[1:]]

    def find(self, left: int, right: int) -> int:
        for i, p in enumerate(self.pairs):
            if p.left_station == left and p.right_station == right:
                return i
        raise ValueError(f"no pair between stations {left} and {right}")

    def _wait(self, seconds: float, skip: int) -> None:
        cfg = self.config
        self.elapsed_s += seconds
        if math.isinf(cfg.tau_s) or seconds == 0.0:
            return
        for i, p in enumerate(self.pairs):
            if i == skip or (cfg.idle_decay and not self.fresh[i]):
                self.pairs[i] = replace(p, state=memory_decay(p.state, seconds, cfg.tau_s))

    def purify_index(self, i: int) -> None:
        p = self.pairs[i]
        out = purify_bbpssw(p.state, p.state, self.config.gate_reliability)
        res = combine_resources("purify", p, p, out.success_probability)
        self.pairs[i] = replace(p, state=out.state, expected_resources=res)
        self.fresh[i] = False
        self._wait(p.span_km * 1e3 / self.config.speed_m_per_s, i)

    def swap_at(self, station: int) -> None:
        for i in range(len(self.pairs) - 1):
            a, b = self.pairs[i], self.pairs[i + 1]
            if a.right_station == station:
                new = TrackedPair(a.left_station, b.right_station, swap(a.state, b.state),
                                  combine_resources("swap", a, b), a.span_km + b.span_km)
                self.pairs[i:i + 2] = [new]
                self.fresh[i:i + 2] = [False]
                return
        raise ValueError(f"station {station} is not an active inner station")

    def apply(self, op: Op) -> None:
        if op[0] == "purify":
            self.purify_index(self.find(op[1], op[2]))
        elif op[0] == "swap":
            self.swap_at(op[1])
        else:
            raise ValueError(f"unknown operation {op!r}")

    def run(self, ops: Sequence[Op]) -> "RepeaterState":
        for op in ops:
            self.apply(op)
        return self

    def final_pair(self) -> TrackedPair | None:
        return self.pairs[0] if len(self.pairs) == 1 else None

    def solved(self) -> bool:
        p = self.final_pair()
        return p is not None and p.fidelity >= self.config.threshold

    def percept(self, decimals: int | None = None) -> bytes:
        d = self.config.percept_decimals if decimals is None else decimals
        return ";".join(f"{p.left_station},{p.right_station},{p.fidelity:.{d}f}" for p in self.pairs).encode()


def replay_protocol(config: RepeaterConfig, ops: Sequence[Op]) -> RepeaterState:
    return RepeaterState(config).run(ops)


def sub_config(config: RepeaterConfig, pairs: Sequence[TrackedPair]) -> RepeaterConfig:
    """Stand-alone problem made of consecutive ``pairs``, re-indexed from station 0."""
    return replace(
        config,
        num_links=len(pairs),
        initial_fidelities=tuple(p.fidelity for p in pairs),
        segment_lengths_km=tuple(p.span_km for p in pairs),
        initial_resources=tuple(p.expected_resources for p in pairs),
    )


# delegation -----------------------------------------------------------------

class DelegationBudget(NamedTuple):
    """Training budget for one uncached sub-problem.

    ``max_depth`` is the number of delegation levels still allowed below the
    environment that holds the budget; sub-agents receive ``max_depth - 1``.
    ``max_block`` caps the length of offered block actions (``None``: any
    length shorter than the line).
    """

    num_sub_agents: int = 16
    trials_each: int = 2000
    max_depth: int = 1
    max_block: int | None = None

    def child(self) -> "DelegationBudget":
        return self._replace(max_depth=self.max_depth - 1)


class BlockSolution(NamedTuple):
    ops: tuple  # primitive operations in sub-problem station numbering
    pair: TrackedPair


class BlockActionCache:
    """Solved sub-problems, shared by every agent of a run.

    Keys hold the block length, the rounded fidelities, relative resources
    and spans of its pairs, and the noise parameters.  ``None`` marks a
    sub-problem on which delegation failed.
    """

    def __init__(self, decimals: int = 3):
        self.decimals = decimals
        self._table: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def key(self, cfg: RepeaterConfig) -> tuple:
        d = self.decimals
        total = sum(cfg.resources)
        return (
            cfg.num_links,
            tuple(round(f, d) for f in cfg.initial_fidelities),
            tuple(round(r / total, 2) for r in cfg.resources),
            tuple(round(x, 3) for x in cfg.lengths),
            cfg.gate_reliability, cfg.threshold, cfg.tau_s, cfg.speed_m_per_s,
            cfg.idle_decay, cfg.symmetric_mode,
        )

    def get_or_compute(self, cfg: RepeaterConfig, compute: Callable[[], BlockSolution | None]):
        k = self.key(cfg)
        with self._lock:
            if k in self._table:
                self.hits += 1
                return self._table[k]
            self.misses += 1
        value = compute()  # computed outside the lock; a racing duplicate is harmless
        with self._lock:
            self._table[k] = value
        return value

    def __len__(self):
        return len(self._table)

    def __contains__(self, cfg: RepeaterConfig):
        return self.key(cfg) in self._table


def delegate_block(cache: BlockActionCache, cfg: RepeaterConfig,
                   budget: DelegationBudget = DelegationBudget(),
                   params: MetaParams = MetaParams(eta=0.0), seed=0) -> BlockSolution | None:
    """Best protocol found by fresh sub-agents on ``cfg``; ``None`` if none succeeded."""

    def compute():
        rng = random.Random(seed)
        best: BlockSolution | None = None
        for _ in range(budget.num_sub_agents):
            env = ScalingEnv(cfg, delegation=True, cache=cache, budget=budget.child(),
                             const_from_baseline=False, seed=rng.getrandbits(32), params=params)
            agent = PSAgent(env.num_actions, params, seed=rng.getrandbits(32))
            for _ in range(budget.trials_each):
                step = env.reset()
                agent.begin_trial()
                while not step.done:
                    step = env.step(agent.act(step.percept, step.available_actions))
                    agent.learn(step.reward)
                if env.succeeded:
                    pair = env.state.final_pair()
                    if best is None or pair.expected_resources < best.pair.expected_resources:
                        best = BlockSolution(tuple(env.protocol), pair)
        return best

    if budget.num_sub_agents < 1 or budget.trials_each < 1:
        return cache.get_or_compute(cfg, lambda: None)
    return cache.get_or_compute(cfg, compute)


# environments ---------------------------------------------------------------

class ScalingEnv:
    """Repeater environment with primitive and (optionally) block actions.

    Action ids for ``L`` links, general mode:

    * ``0 .. L-1``: purify the ``j``-th pair from the left;
    * ``L .. 2L-2``: swap at the ``j``-th active inner station;
    * then one block action per ``(j, m)``, ``2 <= m <= L-1``, covering
      segments ``j .. j+m-1``; it is available while each of these segments
      still holds its own (possibly purified) pair.

    Symmetric mode has ``purify all``, ``swap at every second active
    station`` and one symmetric block action per length ``m``.
    """

    def __init__(self, config: RepeaterConfig, delegation: bool = True,
                 cache: BlockActionCache | None = None,
                 budget: DelegationBudget = DelegationBudget(),
                 reward_const: float | None = None, const_from_baseline: bool = True,
                 seed=None, params: MetaParams = MetaParams(eta=0.0)):
        if config.num_links < 2:
            raise ValueError("repeater environments need at least two links")
        self.config = config
        self.delegation = delegation and config.num_links > 2 and budget.max_depth > 0
        self.cache = cache if cache is not None else BlockActionCache(config.percept_decimals)
        self.budget = budget
        self.params = params
        self.rng = random.Random(seed)
        L = config.num_links
        if config.symmetric_mode:
            self._table = [("purify_all",), ("swap_alternate",)]
            if self.delegation:
                self._table += [("sym_block", m) for m in range(2, self._max_block() + 1)]
        else:
            self._table = [("purify", j) for j in range(L)] + [("swap", j) for j in range(L - 1)]
            if self.delegation:
                self._table += [("block", j, m) for m in range(2, self._max_block() + 1)
                                for j in range(L - m + 1)]
        self.num_actions = len(self._table)
        if reward_const is None and const_from_baseline:
            from ..baselines import optimize_working_fidelity
            base = optimize_working_fidelity(config, strict=False)
            reward_const = base.expected_resources if base.success else None
        self.reward_const = reward_const
        self.reset()

    def _max_block(self) -> int:
        L = self.config.num_links
        cap = self.budget.max_block
        return L - 1 if cap is None else min(cap, L - 1)

    def action_name(self, action: int) -> str:
        return " ".join(map(str, self._table[action]))

    def reset(self) -> EnvStep:
        self.state = RepeaterState(self.config)
        self.protocol: list[Op] = []
        self.actions_taken: list[int] = []
        self.succeeded = False
        self.resources = None
        return EnvStep(self.state.percept(), 0.0, False, self._available())

    def _available(self) -> tuple:
        n = len(self.state.pairs)
        L = self.config.num_links
        out = []
        for i, a in enumerate(self._table):
            kind = a[0]
            if kind == "purify":
                ok = a[1] < n
            elif kind == "swap":
                ok = a[1] < n - 1
            elif kind == "block":
                ok = a[2] < L and self._segment_pairs(a[1], a[2]) is not None
            elif kind == "purify_all":
                ok = True
            elif kind == "swap_alternate":
                ok = n > 1
            else:  # sym_block
                ok = a[1] <= n and a[1] < L
            if ok:
                out.append(i)
        return tuple(out)

    def _do(self, op: Op) -> None:
        self.state.apply(op)
        self.protocol.append(op)

    def _segment_pairs(self, first: int, m: int) -> list | None:
        """Pairs on segments ``first .. first+m-1`` if none of them is consumed yet."""
        out = []
        for s in range(first, first + m):
            try:
                out.append(self.state.pairs[self.state.find(s, s + 1)])
            except ValueError:
                return None
        return out

    def _block(self, start: int, m: int, pairs: list | None = None) -> bool:
        if pairs is None:
            pairs = self.state.pairs[start:start + m]
        cfg = sub_config(self.config, pairs)
        sol = delegate_block(self.cache, cfg, self.budget, self.params, seed=self.rng.getrandbits(32))
        if sol is None:
            return False
        # sub-problem stations are re-indexed; map them back onto this line
        stations = [p.left_station for p in pairs] + [pairs[-1].right_station]
        for op in sol.ops:
            self._do((op[0],) + tuple(stations[s] for s in op[1:]))
        return True

    def _alternate_swaps(self) -> list[int]:
        inner = self.state.inner_stations()
        return inner[0::2]

    def step(self, action: int) -> EnvStep:
        avail = self._available()
        if action not in avail:
            raise ValueError(f"action {self.action_name(action)} is not available")
        a = self._table[action]
        kind = a[0]
        if kind == "purify":
            p = self.state.pairs[a[1]]
            self._do(("purify", p.left_station, p.right_station))
        elif kind == "swap":
            self._do(("swap", self.state.inner_stations()[a[1]]))
        elif kind == "block":
            self._block(a[1], a[2], self._segment_pairs(a[1], a[2]))
        elif kind == "purify_all":
            for p in list(self.state.pairs):
                self._do(("purify", p.left_station, p.right_station))
        elif kind == "swap_alternate":
            for s in self._alternate_swaps():
                self._do(("swap", s))
        else:
            m = a[1]
            # apply to every full group of m pairs, right to left so indices stay valid
            starts = list(range(0, len(self.state.pairs) - m + 1, m))
            for start in reversed(starts):
                self._block(start, m)
        self.actions_taken.append(action)
        if self.state.solved():
            R = self.state.final_pair().expected_resources
            if self.reward_const is None or R < self.reward_const:
                self.reward_const = R
            self.succeeded = True
            self.resources = R
            return EnvStep(self.state.percept(), (self.reward_const / R) ** 2, True, ())
        if len(self.actions_taken) >= self.config.max_actions:
            return EnvStep(self.state.percept(), 0.0, True, ())
        return EnvStep(self.state.percept(), 0.0, False, self._available())


def scaling_env(config: RepeaterConfig, delegation: bool = True,
                cache: BlockActionCache | None = None, **kwargs) -> ScalingEnv:
    return ScalingEnv(config, delegation=delegation, cache=cache, **kwargs)


def repeater2_env(config: RepeaterConfig, **kwargs) -> ScalingEnv:
    """Two-link repeater: purify left, purify right, swap, then purify the long pair."""
    if config.num_links != 2:
        raise ValueError("repeater2_env needs num_links == 2")
    return ScalingEnv(config, delegation=False, **kwargs)


# exhaustive oracle ----------------------------------------------------------

class SearchResult(NamedTuple):
    ops: tuple
    resources: float
    fidelity: float


def exhaustive_search(config: RepeaterConfig, max_depth: int = 30) -> SearchResult | None:
    """Minimum-resource primitive protocol of at most ``max_depth`` operations.

    Depth-first over all purify/swap sequences with branch and bound on the
    (monotonically growing) resources of the partial protocol.  A
    transposition table skips states already reached with fewer operations,
    which collapses reorderings that commute exactly.
    """
    best: list = [None]
    seen: dict = {}

    def key(state: RepeaterState) -> tuple:
        return tuple((p.left_station, p.right_station, p.fidelity, p.expected_resources, f)
                     for p, f in zip(state.pairs, state.fresh))

    def dfs(state: RepeaterState, ops: list) -> None:
        if state.solved():
            p = state.final_pair()
            if best[0] is None or p.expected_resources < best[0].resources - 1e-12:
                best[0] = SearchResult(tuple(ops), p.expected_resources, p.fidelity)
            return
        if len(ops) >= max_depth:
            return
        if best[0] is not None and sum(p.expected_resources for p in state.pairs) >= best[0].resources:
            return
        k = key(state)
        if seen.get(k, max_depth + 1) <= len(ops):
            return
        seen[k] = len(ops)
        moves = [("purify", p.left_station, p.right_station) for p in state.pairs]
        moves += [("swap", s) for s in state.inner_stations()]
        for op in moves:
            nxt = state.copy()
            nxt.apply(op)
            ops.append(op)
            dfs(nxt, ops)
            ops.pop()

    dfs(RepeaterState(config), [])
    return best[0]
