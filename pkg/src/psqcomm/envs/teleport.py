"""Teleportation environments.

Qubit ``Ar`` is the reference partner of the input qubit ``A'``; it lives at
station ``R`` and is never acted upon.  Training runs on state vectors (all
states in these tasks are pure), while :func:`verify_teleport_sequence`
replays a transcript through the density-matrix simulator.
"""
from __future__ import annotations

import math
import random
from typing import NamedTuple, Sequence

import numpy as np

from .. import qsim
from ..qsim import DensityMatrix, GateSpec, Qubit
from .base import EnvStep

SUCCESS_TOL = 1e-9
MAX_ACTIONS = 50
REF = Qubit("R", "Ar")


class TeleportAction(NamedTuple):
    kind: str  # gate name, "CNOT", "measure" or "send"
    targets: tuple

    def __str__(self):
        return f"{self.kind}({','.join(self.targets)})"


def _action_table(variant: str, gate_set: str) -> list[TeleportAction]:
    phase = {"clifford": "P", "universal": "T"}[gate_set]
    if variant == "base":
        qubits = ("A'", "A", "B")
        cnots = [("A'", "A")]
        sends: list[str] = []
    else:
        qubits = ("A'", "A1", "A2")
        cnots = [("A'", "A1"), ("A'", "A2"), ("A1", "A2")]
        sends = ["A1", "A2"]
    table = [TeleportAction(phase, (q,)) for q in qubits]
    table += [TeleportAction("H", (q,)) for q in qubits]
    table += [TeleportAction("CNOT", c) for c in cnots]
    table += [TeleportAction("measure", (q,)) for q in qubits]
    table += [TeleportAction("send", (q,)) for q in sends]
    return table


def _initial_labels(variant: str) -> tuple[Qubit, ...]:
    if variant == "base":
        return (REF, Qubit("A", "A'"), Qubit("A", "A"), Qubit("B", "B"))
    return (REF, Qubit("A", "A'"), Qubit("A", "A1"), Qubit("A", "A2"))


def _initial_ket(variant: str) -> np.ndarray:
    bell = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / math.sqrt(2.0)
    if variant == "base":
        return np.kron(bell, bell)
    return np.kron(bell, np.array([1.0, 0, 0, 0], dtype=complex))


def initial_density_matrix(variant: str = "base") -> DensityMatrix:
    return DensityMatrix.from_ket(_initial_ket(variant), _initial_labels(variant))


class _Layout:
    """Where every qubit sits and which ones are still alive; shared by both simulators."""

    def __init__(self, variant: str):
        self.variant = variant
        self.labels = list(_initial_labels(variant))
        self.sent = 0

    def station(self, name: str) -> str | None:
        for q in self.labels:
            if q.name == name:
                return q.station
        return None

    def available(self, table: Sequence[TeleportAction]) -> tuple[int, ...]:
        stations = {q.name: q.station for q in self.labels}
        locked = self.variant == "v2" and self.sent == 0
        out = []
        for i, a in enumerate(table):
            if any(t not in stations for t in a.targets):
                continue
            if locked and "A'" in a.targets:
                continue
            if a.kind == "CNOT":
                if stations[a.targets[0]] != stations[a.targets[1]]:
                    continue
            elif a.kind == "send":
                if stations[a.targets[0]] != "A":
                    continue
                if self.variant == "v2" and self.sent >= 1:
                    continue
            out.append(i)
        return tuple(out)


class TeleportEnv:
    """Teleport the state of ``A'`` to a qubit at station ``B``.

    Parameters
    ----------
    variant : {"base", "v1", "v2"}
        ``base`` starts with a shared Bell pair between ``A`` and ``B``;
        ``v1`` and ``v2`` start without one and allow sending qubits.
    gate_set : {"clifford", "universal"}
        Selects the phase gate ``P`` or ``T``.
    seed : int, optional
        Seed of the RNG used to sample measurement outcomes.
    """

    def __init__(self, variant: str = "base", gate_set: str = "clifford",
                 seed=None, max_actions: int = MAX_ACTIONS):
        if variant not in ("base", "v1", "v2"):
            raise ValueError(f"unknown teleport variant {variant!r}")
        if gate_set not in ("clifford", "universal"):
            raise ValueError(f"unknown gate set {gate_set!r}")
        self.variant = variant
        self.gate_set = gate_set
        self.max_actions = max_actions
        self.actions = _action_table(variant, gate_set)
        self.num_actions = len(self.actions)
        self.rng = random.Random(seed)
        self.reset()

    def action_name(self, action: int) -> str:
        return str(self.actions[action])

    def reset(self) -> EnvStep:
        self.layout = _Layout(self.variant)
        self.psi = _initial_ket(self.variant)
        self.history = bytearray()
        self.transcript: list[tuple[int, int | None]] = []
        self.succeeded = False
        self.fidelity = self._fidelity()
        self._available = self.layout.available(self.actions)
        return EnvStep(bytes(self.history), 0.0, False, self._available)

    def _pos(self, name: str) -> int:
        for i, q in enumerate(self.layout.labels):
            if q.name == name:
                return i
        raise qsim.UnknownQubitError(name)

    def _fidelity(self) -> float:
        n = len(self.layout.labels)
        t = self.psi.reshape((2,) * n)
        best = 0.0
        for i, q in enumerate(self.layout.labels):
            if q.station != "B":
                continue
            m = np.moveaxis(t, (0, i), (0, 1)).reshape(4, -1)
            f = 0.5 * float(np.sum(np.abs(m[0] + m[3]) ** 2))
            best = max(best, f)
        return best

    def step(self, action: int) -> EnvStep:
        if action not in self._available:
            raise ValueError(f"action {action} ({self.action_name(action)}) is not available")
        a = self.actions[action]
        n = len(self.layout.labels)
        outcome = None
        if a.kind == "measure":
            k = self._pos(a.targets[0])
            t = self.psi.reshape(2 ** k, 2, -1)
            p0 = float(np.sum(np.abs(t[:, 0, :]) ** 2))
            bit = 0 if self.rng.random() < p0 else 1
            p = p0 if bit == 0 else 1.0 - p0
            self.psi = (t[:, bit, :] / math.sqrt(p)).reshape(-1)
            del self.layout.labels[k]
            outcome = 1 if bit == 0 else -1
        elif a.kind == "send":
            k = self._pos(a.targets[0])
            self.layout.labels[k] = Qubit("B", a.targets[0])
            self.layout.sent += 1
        else:
            pos = tuple(self._pos(t) for t in a.targets)
            self.psi = qsim.embed(a.kind, pos, n) @ self.psi
        self.transcript.append((action, outcome))
        self.history.append(action)
        if outcome is not None:
            self.history.append(0 if outcome == 1 else 1)
        self.fidelity = self._fidelity()
        self._available = self.layout.available(self.actions)
        if self.fidelity >= 1.0 - SUCCESS_TOL:
            self.succeeded = True
            return EnvStep(bytes(self.history), 1.0, True, ())
        done = len(self.transcript) >= self.max_actions or not self._available
        return EnvStep(bytes(self.history), 0.0, done, () if done else self._available)


class VerifyResult(NamedTuple):
    success: bool
    fidelity: float


def verify_teleport_sequence(actions: Sequence, variant: str = "base",
                             gate_set: str = "clifford") -> VerifyResult:
    """Replay a transcript with the density-matrix simulator.

    Each entry is an action id or an ``(action id, outcome)`` pair; measurement
    entries must carry their recorded outcome (``+1`` or ``-1``).

    Examples
    --------
    >>> verify_teleport_sequence([]).fidelity
    0.25
    """
    table = _action_table(variant, gate_set)
    layout = _Layout(variant)
    rho = initial_density_matrix(variant)
    for entry in actions:
        action, outcome = (entry, None) if isinstance(entry, (int, np.integer)) else entry
        if action not in layout.available(table):
            raise ValueError(f"action {action} ({table[action]}) is not available here")
        a = table[action]
        if a.kind == "measure":
            if outcome not in (1, -1):
                raise ValueError("measurement entries need a recorded outcome of +1 or -1")
            branch = next(b for b in qsim.measure_z(rho, a.targets[0]) if b.outcome == outcome)
            if not branch.reachable:
                raise ValueError(f"outcome {outcome} of {a} has zero probability")
            rho = branch.post_state
            layout.labels = [q for q in layout.labels if q.name != a.targets[0]]
        elif a.kind == "send":
            rho = rho.relocate(a.targets[0], "B")
            layout.labels = [Qubit("B", q.name) if q.name == a.targets[0] else q for q in layout.labels]
            layout.sent += 1
        else:
            rho = qsim.apply_gate(rho, GateSpec.make(a.kind, *a.targets))
    fids = [qsim.jamiolkowski_fidelity(rho, REF, q) for q in rho.labels if q.station == "B"]
    fid = round(max(fids), 15) if fids else 0.0
    return VerifyResult(fid >= 1.0 - SUCCESS_TOL, fid)


def teleport_env(variant: str = "base", gate_set: str = "clifford", seed=None,
                 max_actions: int = MAX_ACTIONS) -> TeleportEnv:
    return TeleportEnv(variant, gate_set, seed=seed, max_actions=max_actions)
