"""Closed-form algebra on Bell-diagonal two-qubit states.

Coefficients are indexed by two bits ``(i, j)``: ``i`` is the phase bit and
``j`` the amplitude bit, so ``00 -> Phi+``, ``10 -> Phi-``, ``01 -> Psi+`` and
``11 -> Psi-``.  Arrays returned by :meth:`BellDiag.as_array` use the order
``(lambda00, lambda10, lambda01, lambda11)``, i.e. position ``i + 2 j``, which
makes the Pauli action a bitwise XOR on positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

CLAMP_TOL = 1e-12
SUM_TOL = 1e-10


class NegativeCoefficientError(ValueError):
    """A Bell coefficient fell below ``-CLAMP_TOL``; indicates a broken map."""


@dataclass(frozen=True)
class BellDiag:
    lambda00: float
    lambda10: float
    lambda01: float
    lambda11: float

    def __post_init__(self):
        vals = []
        for name in ("lambda00", "lambda10", "lambda01", "lambda11"):
            v = float(getattr(self, name))
            if v < -CLAMP_TOL:
                raise NegativeCoefficientError(f"{name}={v!r} is negative")
            if v < 0.0:
                v = 0.0
            object.__setattr__(self, name, v)
            vals.append(v)
        total = math.fsum(vals)
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"Bell coefficients sum to {total!r}, expected 1")

    @classmethod
    def from_array(cls, arr) -> "BellDiag":
        a = np.asarray(arr, dtype=float)
        return cls(a[0], a[1], a[2], a[3])

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda00, self.lambda10, self.lambda01, self.lambda11])

    @property
    def fidelity(self) -> float:
        return self.lambda00

    def __iter__(self):
        return iter((self.lambda00, self.lambda10, self.lambda01, self.lambda11))


class PurifyOutcome(NamedTuple):
    state: BellDiag
    success_probability: float


@dataclass(frozen=True)
class TrackedPair:
    """A pair held between two repeater stations, with its expected cost."""

    left_station: int
    right_station: int
    state: BellDiag
    expected_resources: float = 1.0
    span_km: float = 0.0

    def __post_init__(self):
        if not self.left_station < self.right_station:
            raise ValueError("left_station must be smaller than right_station")
        if self.expected_resources < 1.0 - 1e-12:
            raise ValueError("expected_resources must be at least 1")
        if self.span_km < 0:
            raise ValueError("span_km must be non-negative")

    @property
    def fidelity(self) -> float:
        return self.state.lambda00

    @property
    def links(self) -> int:
        return self.right_station - self.left_station


def werner(F: float) -> BellDiag:
    if not 0.0 <= F <= 1.0:
        raise ValueError(f"fidelity {F!r} outside [0, 1]")
    r = (1.0 - F) / 3.0
    return BellDiag(F, r, r, r)


def twirl(state: BellDiag) -> BellDiag:
    """Depolarize to Werner form; the fidelity is unchanged."""
    return werner(state.lambda00)


def _check_reliability(p: float, what: str = "gate_reliability") -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{what}={p!r} outside [0, 1]")


def _depolarize(lam: np.ndarray, q: float) -> np.ndarray:
    # local depolarizing on one qubit: every Pauli permutes the Bell basis
    return q * lam + (1.0 - q) / 4.0


def _mcnot(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    a00, a10, a01, a11 = a
    b00, b10, b01, b11 = b
    out = np.array([
        a00 * b00 + a10 * b10,
        a00 * b10 + a10 * b00,
        a01 * b01 + a11 * b11,
        a01 * b11 + a11 * b01,
    ])
    N = (a00 + a10) * (b00 + b10) + (a01 + a11) * (b01 + b11)
    if N <= 0.0:
        raise ZeroDivisionError("purification has zero success probability")
    return out / N, float(N)


def mcnot_map(a: BellDiag, b: BellDiag) -> PurifyOutcome:
    """Bilateral CNOT, Z-measurement of the target pair, keep coinciding outcomes."""
    lam, N = _mcnot(a.as_array(), b.as_array())
    return PurifyOutcome(BellDiag.from_array(lam), N)


_DEJMPS_PERM = [0, 3, 2, 1]  # exchange lambda10 <-> lambda11
_AGENT_PERM = [2, 1, 0, 3]  # exchange lambda00 <-> lambda01


def _noisy_inputs(a: BellDiag, b: BellDiag, p: float) -> tuple[np.ndarray, np.ndarray]:
    _check_reliability(p)
    # each CNOT depolarizes one qubit of each pair, so both qubits of a pair are hit
    q = p * p
    return _depolarize(a.as_array(), q), _depolarize(b.as_array(), q)


def purify_dejmps(a: BellDiag, b: BellDiag, gate_reliability: float = 1.0) -> PurifyOutcome:
    x, y = _noisy_inputs(a, b, gate_reliability)
    lam, N = _mcnot(x[_DEJMPS_PERM], y[_DEJMPS_PERM])
    return PurifyOutcome(BellDiag.from_array(lam), N)


def purify_agent_variant(a: BellDiag, b: BellDiag, gate_reliability: float = 1.0) -> PurifyOutcome:
    """Recurrence step with a sqrt(-iX) rotation on both sides of each input."""
    x, y = _noisy_inputs(a, b, gate_reliability)
    lam, N = _mcnot(x[_AGENT_PERM], y[_AGENT_PERM])
    return PurifyOutcome(BellDiag.from_array(lam), N)


def purify_bbpssw(a: BellDiag, b: BellDiag, gate_reliability: float = 1.0) -> PurifyOutcome:
    """Bare bilateral-CNOT step followed by a twirl of the kept pair."""
    x, y = _noisy_inputs(a, b, gate_reliability)
    lam, N = _mcnot(x, y)
    return PurifyOutcome(werner(min(1.0, max(0.0, lam[0]))), N)


def swap(a: BellDiag, b: BellDiag, reliability: float = 1.0) -> BellDiag:
    """Entanglement swapping of ``a`` (left) and ``b`` (right) with corrected by-products.

    ``reliability`` < 1 depolarizes the two inner qubits before the Bell
    measurement; repeater environments keep it at 1.
    """
    _check_reliability(reliability, "reliability")
    x = _depolarize(a.as_array(), reliability)
    y = _depolarize(b.as_array(), reliability)
    out = np.zeros(4)
    for i in range(4):
        for j in range(4):
            out[i ^ j] += x[i] * y[j]
    return BellDiag.from_array(out)


def channel_noise(state: BellDiag, length_km: float, attenuation_km: float) -> BellDiag:
    if attenuation_km <= 0:
        raise ValueError("attenuation_km must be positive")
    if length_km < 0:
        raise ValueError("length_km must be non-negative")
    q = math.exp(-length_km / attenuation_km)
    return BellDiag.from_array(_depolarize(state.as_array(), q))


def memory_decay(state: BellDiag, store_time_s: float, tau_s: float, both_ends: bool = True) -> BellDiag:
    if tau_s <= 0:
        raise ValueError("tau_s must be positive (or infinite)")
    if store_time_s < 0:
        raise ValueError("store_time_s must be non-negative")
    if math.isinf(tau_s) or store_time_s == 0:
        return state
    q = math.exp(-store_time_s / tau_s)
    lam = _depolarize(state.as_array(), q)
    if both_ends:
        lam = _depolarize(lam, q)
    return BellDiag.from_array(lam)


def combine_resources(kind: str, left: TrackedPair, right: TrackedPair,
                      success_probability: float = 1.0) -> float:
    """Expected number of elementary pairs consumed by a purify or swap step."""
    total = left.expected_resources + right.expected_resources
    if kind == "swap":
        return total
    if kind == "purify":
        if not 0.0 < success_probability <= 1.0:
            raise ValueError("purification needs a success probability in (0, 1]")
        return total / success_probability
    raise ValueError(f"unknown kind {kind!r}")
