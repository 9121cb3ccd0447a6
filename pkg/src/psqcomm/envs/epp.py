"""Entanglement-purification environment and recurrent protocol evaluation.

A trial builds a whole protocol tree.  Every measurement splits the current
branch in two; the environment then asks for actions on each branch in
depth-first order (outcome ``+1`` first) until every branch has been closed
with ``accept`` or ``reject``.  A branch can only be closed once exactly one
qubit remains on each side; measuring the last qubit of a side is masked.
Each branch carries the linear operator ``K`` it applies to the four input
qubits ``(A1, B1, A2, B2)``, so a finished tree maps two input pairs to ``sum_accepted K (rho x rho) K^dagger``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .. import qsim
from ..belldiag import werner
from ..qsim import DensityMatrix, Qubit
from .base import EnvStep

QUBITS = ("A1", "A2", "B1", "B2")
INPUT_ORDER = ("A1", "B1", "A2", "B2")
MAX_BRANCH_ACTIONS = 30
ROUNDS = 10
ZERO_PROB = 1e-12

ACTIONS: tuple[tuple[str, tuple], ...] = (
    *(("Px", (q,)) for q in QUBITS),
    *(("H", (q,)) for q in QUBITS),
    ("CNOT", ("A1", "A2")),
    ("CNOT", ("B1", "B2")),
    *(("measure", (q,)) for q in QUBITS),
    ("accept", ()),
    ("reject", ()),
)
ACCEPT = 14
REJECT = 15
NUM_ACTIONS = len(ACTIONS)


def action_name(action: int) -> str:
    kind, targets = ACTIONS[action]
    return f"{kind}({','.join(targets)})" if targets else kind


def _side(name: str) -> str:
    return name[0]


def _werner_matrix(F: float) -> np.ndarray:
    return DensityMatrix.from_bell(werner(F), Qubit("A", "a"), Qubit("B", "b")).matrix


@functools.lru_cache(maxsize=64)
def _two_copies(F: float) -> np.ndarray:
    rho = _werner_matrix(F)
    out = np.kron(rho, rho)
    out.flags.writeable = False
    return out


class Leaf(NamedTuple):
    path: tuple  # ((action, outcome or None), ...)
    decision: str  # "accept" or "reject"
    kraus: np.ndarray  # (k, 4, 16) operators onto the kept (A, B) pair; empty when rejected
    probability: float  # branch probability for the initial input state


@dataclass
class _Branch:
    path: list
    labels: list  # names of the unmeasured qubits in tensor order
    op: np.ndarray  # (2^len(labels), 16)

    def percept(self) -> bytes:
        out = bytearray()
        for action, outcome in self.path:
            out.append(action)
            if outcome is not None:
                out.append(0 if outcome == 1 else 1)
        return bytes(out)

    def available(self) -> tuple[int, ...]:
        return _available(tuple(self.labels))


@functools.lru_cache(maxsize=None)
def _available(labels: tuple) -> tuple[int, ...]:
    alive = set(labels)
    count = {"A": 0, "B": 0}
    for q in labels:
        count[_side(q)] += 1
    out = []
    for i, (kind, targets) in enumerate(ACTIONS):
        if any(t not in alive for t in targets):
            continue
        if kind == "measure" and count[_side(targets[0])] < 2:
            continue
        if kind in ("accept", "reject") and (count["A"], count["B"]) != (1, 1):
            continue
        out.append(i)
    return tuple(out)


@dataclass
class ProtocolTree:
    """Complete set of leaves produced by one protocol.

    Leaves are stored in depth-first order.  A tree is evaluable once every
    branch ends with an accept or reject decision.
    """

    leaves: list = field(default_factory=list)

    def key(self) -> tuple:
        return tuple((leaf.path, leaf.decision) for leaf in self.leaves)

    @property
    def total_probability(self) -> float:
        return math.fsum(leaf.probability for leaf in self.leaves)

    def accepted(self) -> list:
        return [leaf for leaf in self.leaves if leaf.decision == "accept"]

    def gate_skeleton(self) -> dict:
        """Non-local-unitary content of the accepted branches.

        Returns the CNOTs and measured qubits shared by all accepted leaves and
        whether every accepted leaf has coinciding outcomes on the A and B
        measurements it made.
        """
        acc = self.accepted()
        if not acc:
            return {"cnots": (), "measured": (), "coinciding": False}
        skel = []
        coinciding = True
        for leaf in acc:
            cnots = tuple(sorted({ACTIONS[a][1] for a, _ in leaf.path if ACTIONS[a][0] == "CNOT"}))
            meas = {ACTIONS[a][1][0]: o for a, o in leaf.path if o is not None}
            skel.append((cnots, tuple(sorted(meas))))
            sides = {}
            for q, o in meas.items():
                sides.setdefault(q[1], {})[q[0]] = o
            for pair in sides.values():
                if len(pair) == 2 and pair["A"] != pair["B"]:
                    coinciding = False
        cnots, measured = skel[0]
        if any(s != skel[0] for s in skel):
            cnots, measured = (), ()
        return {"cnots": cnots, "measured": measured, "coinciding": coinciding}


class _TreeBuilder:
    def __init__(self, initial_fidelity: float):
        self.sigma0 = _two_copies(initial_fidelity)
        root = _Branch([], list(INPUT_ORDER), np.eye(16, dtype=complex))
        self.stack: list[_Branch] = [root]
        self.leaves: list[Leaf] = []

    @property
    def current(self) -> _Branch:
        return self.stack[-1]

    @property
    def complete(self) -> bool:
        return not self.stack

    def _prob(self, op: np.ndarray) -> float:
        return float(np.real(np.einsum("ij,jk,ik->", op, self.sigma0, op.conj())))

    def _close(self, branch: _Branch, decision: str) -> None:
        prob = self._prob(branch.op)
        if decision == "reject":
            kraus = np.zeros((0, 4, 16), dtype=complex)
        else:
            kraus = _kept_pair_kraus(branch.labels, branch.op)
        self.leaves.append(Leaf(tuple(branch.path), decision, kraus, prob))

    def _push_reachable(self, branches: Sequence[_Branch]) -> None:
        # push so that the first element is explored first
        for b in reversed(branches):
            if self._prob(b.op) <= ZERO_PROB:
                self._close(b, "reject")
            else:
                self.stack.append(b)

    def apply(self, action: int) -> None:
        branch = self.stack.pop()
        if action not in branch.available():
            self.stack.append(branch)
            raise ValueError(f"action {action_name(action)} is not available on this branch")
        kind, targets = ACTIONS[action]
        if kind in ("accept", "reject"):
            branch.path.append((action, None))
            self._close(branch, kind)
            return
        n = len(branch.labels)
        if kind == "measure":
            k = branch.labels.index(targets[0])
            t = branch.op.reshape(2 ** k, 2, -1, 16)
            labels = branch.labels[:k] + branch.labels[k + 1:]
            children = []
            for bit, outcome in ((0, 1), (1, -1)):
                op = t[:, bit, :, :].reshape(-1, 16)
                children.append(_Branch(branch.path + [(action, outcome)], list(labels), op))
            self._push_reachable(children)
            return
        pos = tuple(branch.labels.index(q) for q in targets)
        branch.op = qsim.embed(kind, pos, n) @ branch.op
        branch.path.append((action, None))
        self.stack.append(branch)

    def tree(self) -> ProtocolTree:
        if not self.complete:
            raise ValueError("protocol tree is incomplete")
        return ProtocolTree(list(self.leaves))


def _kept_pair_kraus(labels: Sequence[str], op: np.ndarray) -> np.ndarray:
    """Operator onto the surviving (A, B) pair as a single-element Kraus stack."""
    if labels[0][0] != "A":
        op = op.reshape(2, 2, 16).transpose(1, 0, 2).reshape(4, 16)
    return op[None, :, :].copy()


def build_tree(policy: Callable[[tuple], int], initial_fidelity: float = 0.73,
               max_branch_actions: int = MAX_BRANCH_ACTIONS) -> ProtocolTree:
    """Build a tree from a deterministic policy mapping a branch path to an action."""
    builder = _TreeBuilder(initial_fidelity)
    while not builder.complete:
        branch = builder.current
        if len(branch.path) >= max_branch_actions:
            raise ValueError("branch exceeds the action cap")
        builder.apply(policy(tuple(branch.path)))
    return builder.tree()


def recurrence_tree(local_gates: Sequence[int] = (), initial_fidelity: float = 0.73,
                    accept_outcomes: Sequence[tuple[int, int]] = ((1, 1), (-1, -1))) -> ProtocolTree:
    """Local gates, bilateral CNOT, measure A2 and B2, accept the listed outcome pairs."""
    script = list(local_gates) + [8, 9, 11]

    def policy(path):
        if len(path) < len(script):
            return script[len(path)]
        if len(path) == len(script):
            return 13
        outcomes = (path[-2][1], path[-1][1])
        return ACCEPT if outcomes in set(map(tuple, accept_outcomes)) else REJECT

    return build_tree(policy, initial_fidelity)


# Px on A1, A2 and Px^3 (= sqrt(iX) up to phase) on B1, B2
DEJMPS_GATES = (0, 1, 2, 2, 2, 3, 3, 3)
AGENT_VARIANT_GATES = (0, 1, 2, 3)


def dejmps_tree(initial_fidelity: float = 0.73) -> ProtocolTree:
    return recurrence_tree(DEJMPS_GATES, initial_fidelity)


def bbpssw_tree(initial_fidelity: float = 0.73) -> ProtocolTree:
    return recurrence_tree((), initial_fidelity)


class EppEvaluation(NamedTuple):
    reward: float
    final_fidelity: float
    probabilities: tuple
    delta_fidelity: float


def _evaluate(tree: ProtocolTree, initial_fidelity: float, rounds: int,
              depolarize_each_round: bool, const: float) -> EppEvaluation:
    acc = tree.accepted()
    if not acc:
        return EppEvaluation(0.0, float("nan"), (), float("nan"))
    ks = np.concatenate([leaf.kraus for leaf in acc])
    left = ks.transpose(1, 0, 2)  # (4, k, 16)
    right = ks.conj().transpose(0, 2, 1).reshape(-1, 4)  # (k * 16, 4)
    rho = _werner_matrix(initial_fidelity)
    phi = qsim.PHI_PLUS
    probs = []
    for _ in range(rounds):
        sigma = (rho[:, None, :, None] * rho[None, :, None, :]).reshape(16, 16)
        out = (left @ sigma).reshape(4, -1) @ right
        p = float(np.real(np.trace(out)))
        probs.append(p)
        if p <= ZERO_PROB:
            return EppEvaluation(0.0, float("nan"), tuple(probs), float("nan"))
        rho = out / p
        if depolarize_each_round:
            F = min(1.0, max(0.0, float(np.real(phi.conj() @ rho @ phi))))
            rho = _werner_matrix(F)
    F = float(np.real(phi.conj() @ rho @ phi))
    dF = F - initial_fidelity
    if dF < ZERO_PROB:
        dF = min(dF, 0.0)  # rounding noise is not an improvement
    geo = math.exp(math.fsum(math.log(p) for p in probs) / rounds)
    return EppEvaluation(max(0.0, const * geo * dF), F, tuple(probs), dF)


_CONST_CACHE: dict = {}


def normalization_constant(initial_fidelity: float, rounds: int = ROUNDS,
                           depolarize_each_round: bool = False) -> float:
    """Constant giving the reference recurrence protocol a reward of exactly 1.

    The reference is the DEJMPS tree, or the BBPSSW tree when the state is
    twirled after every round.
    """
    key = (initial_fidelity, rounds, depolarize_each_round)
    if key not in _CONST_CACHE:
        ref = bbpssw_tree(initial_fidelity) if depolarize_each_round else dejmps_tree(initial_fidelity)
        ev = _evaluate(ref, initial_fidelity, rounds, depolarize_each_round, 1.0)
        _CONST_CACHE[key] = 1.0 / ev.reward
    return _CONST_CACHE[key]


def evaluate_epp_details(tree: ProtocolTree, initial_fidelity: float = 0.73, rounds: int = ROUNDS,
                         depolarize_each_round: bool = False) -> EppEvaluation:
    if not tree.leaves:
        raise ValueError("cannot evaluate an empty protocol tree")
    const = normalization_constant(initial_fidelity, rounds, depolarize_each_round)
    return _evaluate(tree, initial_fidelity, rounds, depolarize_each_round, const)


def evaluate_epp_protocol(tree: ProtocolTree, initial_fidelity: float = 0.73, rounds: int = ROUNDS,
                          depolarize_each_round: bool = False) -> float:
    """Reward ``max(0, const * (prod p_i)^(1/rounds) * dF)`` of a recurrent protocol.

    Examples
    --------
    >>> round(evaluate_epp_protocol(dejmps_tree()), 12)
    1.0
    """
    return evaluate_epp_details(tree, initial_fidelity, rounds, depolarize_each_round).reward


class EppEnv:
    """Purification environment; one trial constructs one complete protocol tree.

    The percept is the action history of the branch being played, including
    measurement outcomes.  The reward of the finished tree is given on the
    step that closes its last branch.
    """

    num_actions = NUM_ACTIONS

    def __init__(self, initial_fidelity: float = 0.73, depolarize_each_round: bool = False,
                 rounds: int = ROUNDS, max_branch_actions: int = MAX_BRANCH_ACTIONS, cache_size: int = 200_000):
        if not 0.25 < initial_fidelity <= 1.0:
            raise ValueError("initial_fidelity must lie in (0.25, 1]")
        self.initial_fidelity = initial_fidelity
        self.depolarize_each_round = depolarize_each_round
        self.rounds = rounds
        self.max_branch_actions = max_branch_actions
        self.cache_size = cache_size
        self._cache: dict = {}
        self.const = normalization_constant(initial_fidelity, rounds, depolarize_each_round)
        self.reset()

    @staticmethod
    def action_name(action: int) -> str:
        return action_name(action)

    def reset(self) -> EnvStep:
        self.builder = _TreeBuilder(self.initial_fidelity)
        self.succeeded = False
        self.last_tree: ProtocolTree | None = None
        self.last_reward = 0.0
        self.n_steps = 0
        b = self.builder.current
        return EnvStep(b.percept(), 0.0, False, b.available())

    def evaluate(self, tree: ProtocolTree) -> float:
        key = tree.key()
        r = self._cache.get(key)
        if r is None:
            r = _evaluate(tree, self.initial_fidelity, self.rounds, self.depolarize_each_round, self.const).reward
            if len(self._cache) >= self.cache_size:
                self._cache.clear()
            self._cache[key] = r
        return r

    def step(self, action: int) -> EnvStep:
        self.builder.apply(action)
        self.n_steps += 1
        if self.builder.complete:
            tree = self.builder.tree()
            self.last_tree = tree
            r = self.evaluate(tree)
            self.last_reward = r
            self.succeeded = r > 0.0
            return EnvStep(b"", r, True, ())
        b = self.builder.current
        if len(b.path) >= self.max_branch_actions:
            return EnvStep(b.percept(), 0.0, True, ())
        return EnvStep(b.percept(), 0.0, False, b.available())


def epp_env(initial_fidelity: float = 0.73, depolarize_each_round: bool = False, **kwargs) -> EppEnv:
    return EppEnv(initial_fidelity, depolarize_each_round, **kwargs)
