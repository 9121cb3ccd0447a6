"""Two-layer projective-simulation agent.

The percept-action network stores one row of weights ``h`` per percept.  A
percept that has never been rewarded behaves exactly like a registered row
with ``h = 1`` on all its available actions (``h = 1`` is a fixed point of the
damping rule), so such rows are only materialized once their weights change.
Damping and glow decay are applied lazily from step counters, which gives the
same numbers as updating every edge at every interaction step.
"""
from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class MetaParams:
    """Glow rate ``eta``, damping ``gamma`` and softmax inverse temperature ``beta``.

    The policy is ``p(a|s) ~ exp(beta * h(s, a))``; ``beta = 1`` is the plain
    softmax over ``h``.
    """

    eta: float = 0.1
    gamma: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("eta", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v!r} outside [0, 1]")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta={self.beta!r} must be positive and finite")


class _Row:
    __slots__ = ("h", "mask", "stamp")

    def __init__(self, n_actions: int, mask: tuple, stamp: int):
        self.h = np.ones(n_actions)
        self.mask = mask
        self.stamp = stamp


class EcmNetwork:
    """Percept rows x global action columns with weights ``h`` and glow ``g``.

    ``select_action`` marks the traversed edge; ``update`` then decays the glow
    of every other edge by ``(1 - eta)``, sets the traversed edge to 1 and
    applies ``h <- h - gamma (h - 1) + g r`` to all edges.
    """

    def __init__(self, n_actions: int):
        if n_actions < 1:
            raise ValueError("need at least one action")
        self.n_actions = n_actions
        self.percept_index: dict[bytes, int] = {}
        self._rows: list[_Row] = []
        self._keys: list[bytes] = []
        self._clock = 0  # number of completed update() calls
        self._gamma = 0.0
        # glow: edge -> glow-clock value at its last traversal
        self._glow_clock = 0
        self._glow: dict[tuple[bytes, int], int] = {}
        self._glow_masks: dict[bytes, tuple] = {}
        self._pending: tuple[bytes, int] | None = None

    # registration -----------------------------------------------------------
    def register_percept(self, percept: bytes, available_actions: Iterable[int]) -> int:
        row = self.percept_index.get(percept)
        if row is not None:
            return row
        mask = tuple(sorted(set(int(a) for a in available_actions)))
        if not mask:
            raise ValueError("a percept needs at least one available action")
        if mask[0] < 0 or mask[-1] >= self.n_actions:
            raise ValueError("action id out of range")
        row = len(self._rows)
        self._rows.append(_Row(self.n_actions, mask, self._clock))
        self._keys.append(percept)
        self.percept_index[percept] = row
        return row

    def _fresh(self, row: _Row) -> np.ndarray:
        lag = self._clock - row.stamp
        if lag and self._gamma > 0.0:
            row.h = 1.0 + (row.h - 1.0) * (1.0 - self._gamma) ** lag
        row.stamp = self._clock
        return row.h

    def _set_gamma(self, gamma: float) -> None:
        if gamma != self._gamma:
            for r in self._rows:
                self._fresh(r)
            self._gamma = gamma

    # policy -----------------------------------------------------------------
    def probabilities(self, percept: bytes, available: Sequence[int] | None = None,
                      beta: float = 1.0) -> dict[int, float]:
        idx = self.percept_index.get(percept)
        if idx is None:
            if not available:
                raise ValueError("unregistered percept and no available actions")
            mask = tuple(sorted(set(available)))
            return {a: 1.0 / len(mask) for a in mask}
        row = self._rows[idx]
        h = self._fresh(row)
        hs = [h[a] for a in row.mask]
        m = max(hs)
        w = [math.exp(beta * (x - m)) for x in hs]
        z = math.fsum(w)
        return {a: wi / z for a, wi in zip(row.mask, w)}

    def select_action(self, percept: bytes, rng: random.Random,
                      available: Sequence[int] | None = None, beta: float = 1.0) -> int:
        idx = self.percept_index.get(percept)
        if idx is None:
            if not available:
                raise ValueError("no available actions")
            action = available[int(rng.random() * len(available))]
            mask = available
        else:
            row = self._rows[idx]
            mask = row.mask
            h = self._fresh(row)
            hs = [h[a] for a in mask]
            m = max(hs)
            w = [math.exp(beta * (x - m)) for x in hs]
            action = rng.choices(mask, weights=w)[0]
        self._pending = (percept, action)
        if percept not in self._glow_masks:
            self._glow_masks[percept] = tuple(mask)
        return action

    # learning ---------------------------------------------------------------
    def decay_glow(self, params: MetaParams) -> None:
        """One glow step: every edge decays by ``(1 - eta)`` except the one just traversed."""
        self._glow_clock += 1
        if self._pending is not None:
            self._glow[self._pending] = self._glow_clock
            self._pending = None

    def glow_value(self, percept: bytes, action: int, params: MetaParams) -> float:
        t = self._glow.get((percept, action))
        if t is None:
            return 0.0
        return (1.0 - params.eta) ** (self._glow_clock - t)

    def update(self, reward: float, params: MetaParams) -> None:
        if reward < 0:
            raise ValueError("rewards must be non-negative")
        self._set_gamma(params.gamma)
        self.decay_glow(params)
        if reward > 0.0:
            eta, gamma = params.eta, params.gamma
            for (percept, action), t in self._glow.items():
                g = (1.0 - eta) ** (self._glow_clock - t)
                if g == 0.0:
                    continue
                idx = self.percept_index.get(percept)
                if idx is None:
                    idx = self.register_percept(percept, self._glow_masks[percept])
                row = self._rows[idx]
                h = self._fresh(row)
                # damping for this step, then the reward term
                row.h = h - gamma * (h - 1.0)
                row.h[action] += g * reward
                row.stamp = self._clock + 1
        self._clock += 1

    def reset_glow(self) -> None:
        self._glow.clear()
        self._glow_masks.clear()
        self._pending = None

    # dense views ------------------------------------------------------------
    def h_matrix(self) -> np.ndarray:
        if not self._rows:
            return np.ones((0, self.n_actions))
        return np.array([self._fresh(r).copy() for r in self._rows])

    def g_matrix(self, params: MetaParams) -> np.ndarray:
        g = np.zeros((len(self._rows), self.n_actions))
        for (percept, action), t in self._glow.items():
            idx = self.percept_index.get(percept)
            if idx is not None:
                g[idx, action] = (1.0 - params.eta) ** (self._glow_clock - t)
        return g

    def mask(self, percept: bytes) -> tuple:
        return self._rows[self.percept_index[percept]].mask

    def __len__(self):
        return len(self._rows)

    # snapshot ---------------------------------------------------------------
    def save(self, fh, params: MetaParams | None = None) -> None:
        """Write a versioned ``.npz`` snapshot: keys (hex), masks, dense ``h`` and ``g``."""
        params = params or MetaParams()
        masks = np.zeros((len(self._rows), self.n_actions), dtype=bool)
        for i, r in enumerate(self._rows):
            masks[i, list(r.mask)] = True
        np.savez(
            fh,
            version=np.array(SNAPSHOT_VERSION),
            n_actions=np.array(self.n_actions),
            keys=np.array([k.hex() for k in self._keys], dtype=str),
            masks=masks,
            h=self.h_matrix(),
            g=self.g_matrix(params),
        )

    @classmethod
    def load(cls, fh) -> "EcmNetwork":
        data = np.load(fh, allow_pickle=False)
        version = int(data["version"])
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        net = cls(int(data["n_actions"]))
        for key, mask, h in zip(data["keys"], data["masks"], data["h"]):
            row = net.register_percept(bytes.fromhex(str(key)), np.flatnonzero(mask))
            net._rows[row].h = np.array(h, dtype=float)
        # glow is a within-trial quantity; snapshots are taken between trials
        return net


class PSAgent:
    """An :class:`EcmNetwork` bundled with meta-parameters and a seeded RNG."""

    def __init__(self, n_actions: int, params: MetaParams | None = None, seed=None):
        self.net = EcmNetwork(n_actions)
        self.params = params or MetaParams()
        self.rng = random.Random(seed)

    def begin_trial(self) -> None:
        self.net.reset_glow()

    def act(self, percept: bytes, available: Sequence[int]) -> int:
        return self.net.select_action(percept, self.rng, available, self.params.beta)

    def learn(self, reward: float) -> None:
        self.net.update(reward, self.params)

    def snapshot(self) -> bytes:
        buf = io.BytesIO()
        self.net.save(buf, self.params)
        return buf.getvalue()
