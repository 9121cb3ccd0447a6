"""Dense density-matrix simulator for a handful of station-tagged qubits.

States are immutable; every operation returns a new :class:`DensityMatrix`.
Qubit ``k`` in ``labels`` is tensor factor ``k`` (most significant first).
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .belldiag import BellDiag

TOL = 1e-10


class UnknownQubitError(KeyError):
    pass


class LocalityError(ValueError):
    """Two-qubit gate requested across different stations."""


class Qubit(NamedTuple):
    station: str
    name: str

    def __str__(self):
        return f"{self.name}@{self.station}"


_S2 = 1 / math.sqrt(2)
_H = np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex)
_P = np.diag([1, 1j]).astype(complex)
_T = np.diag([1, np.exp(1j * np.pi / 4)]).astype(complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.diag([1, -1]).astype(complex)
_I2 = np.eye(2, dtype=complex)

GATES: dict[str, np.ndarray] = {
    "H": _H,
    "P": _P,
    "T": _T,
    "Px": _H @ _P @ _H,
    "X": _X,
    "Y": _Y,
    "Z": _Z,
    "SqrtMinusIX": (_I2 - 1j * _X) * _S2,
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
}
for _m in GATES.values():
    _m.setflags(write=False)

PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) * _S2
# columns: Phi+, Phi-, Psi+, Psi-  (lambda00, lambda10, lambda01, lambda11)
BELL_BASIS = np.array([
    [1, 1, 0, 0],
    [0, 0, 1, 1],
    [0, 0, 1, -1],
    [1, -1, 0, 0],
], dtype=complex) * _S2


class GateSpec(NamedTuple):
    kind: str
    targets: tuple

    @classmethod
    def make(cls, kind: str, *targets) -> "GateSpec":
        if kind not in GATES:
            raise ValueError(f"unknown gate kind {kind!r}")
        want = 2 if kind == "CNOT" else 1
        if len(targets) != want:
            raise ValueError(f"{kind} takes {want} target(s), got {len(targets)}")
        if want == 2 and targets[0] == targets[1]:
            raise ValueError("CNOT needs two distinct qubits")
        return cls(kind, tuple(targets))


def _apply_left(mat: np.ndarray, op: np.ndarray, positions: Sequence[int], n: int) -> np.ndarray:
    """Apply ``op`` (acting on ``positions``) from the left to the rows of ``mat``."""
    k = len(positions)
    cols = mat.shape[1]
    t = mat.reshape((2,) * n + (cols,))
    opt = op.reshape((2,) * (2 * k))
    t = np.tensordot(opt, t, axes=(list(range(k, 2 * k)), list(positions)))
    # tensordot puts the op's output axes first; move them back
    t = np.moveaxis(t, list(range(k)), list(positions))
    return t.reshape(2 ** n, cols)


@lru_cache(maxsize=4096)
def _embedded(kind: str, positions: tuple, n: int) -> np.ndarray:
    full = _apply_left(np.eye(2 ** n, dtype=complex), GATES[kind], positions, n)
    full.setflags(write=False)
    return full


def embed(kind: str, positions: Sequence[int], n_qubits: int) -> np.ndarray:
    """Full ``2^n x 2^n`` operator of gate ``kind`` on the given tensor positions."""
    return _embedded(kind, tuple(positions), n_qubits)


class DensityMatrix:
    __slots__ = ("matrix", "labels", "_index")

    def __init__(self, matrix, labels: Iterable[Qubit]):
        labels = tuple(labels)
        m = np.array(matrix, dtype=complex)
        d = 2 ** len(labels)
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match {len(labels)} qubits")
        if len(set(labels)) != len(labels):
            raise ValueError("qubit labels must be distinct")
        names = [q.name for q in labels]
        if len(set(names)) != len(names):
            raise ValueError("qubit names must be distinct")
        m.setflags(write=False)
        self.matrix = m
        self.labels = labels
        self._index = {q: i for i, q in enumerate(labels)}
        self._index.update({q.name: i for i, q in enumerate(labels)})

    @classmethod
    def _raw(cls, matrix: np.ndarray, labels: tuple) -> "DensityMatrix":
        # trusted constructor for internal results
        obj = cls.__new__(cls)
        matrix.setflags(write=False)
        obj.matrix = matrix
        obj.labels = labels
        idx = {q: i for i, q in enumerate(labels)}
        idx.update({q.name: i for i, q in enumerate(labels)})
        obj._index = idx
        return obj

    @classmethod
    def from_ket(cls, ket, labels: Iterable[Qubit]) -> "DensityMatrix":
        v = np.asarray(ket, dtype=complex).reshape(-1)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), labels)

    @classmethod
    def basis(cls, bits: str, labels: Iterable[Qubit]) -> "DensityMatrix":
        labels = tuple(labels)
        v = np.zeros(2 ** len(labels), dtype=complex)
        v[int(bits, 2) if bits else 0] = 1
        return cls.from_ket(v, labels)

    @classmethod
    def bell_pair(cls, a: Qubit, b: Qubit) -> "DensityMatrix":
        return cls.from_ket(PHI_PLUS, (a, b))

    @classmethod
    def from_bell(cls, coeffs: BellDiag, a: Qubit, b: Qubit) -> "DensityMatrix":
        lam = coeffs.as_array()
        m = (BELL_BASIS * lam) @ BELL_BASIS.conj().T
        return cls(m, (a, b))

    @classmethod
    def empty(cls) -> "DensityMatrix":
        return cls(np.ones((1, 1)), ())

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    def index(self, qubit) -> int:
        try:
            return self._index[qubit]
        except (KeyError, TypeError):
            raise UnknownQubitError(qubit) from None

    def label(self, qubit) -> Qubit:
        return self.labels[self.index(qubit)]

    def tensor(self, other: "DensityMatrix") -> "DensityMatrix":
        return DensityMatrix(np.kron(self.matrix, other.matrix), self.labels + other.labels)

    def relocate(self, qubit, station: str) -> "DensityMatrix":
        """Move a qubit to another station (sending it through a perfect channel)."""
        i = self.index(qubit)
        labels = list(self.labels)
        labels[i] = Qubit(station, labels[i].name)
        return DensityMatrix._raw(self.matrix, tuple(labels))

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def check(self, tol: float = TOL) -> None:
        """Raise ``AssertionError`` if the density-matrix invariants are violated."""
        m = self.matrix
        assert np.allclose(m, m.conj().T, atol=tol), "not Hermitian"
        assert abs(np.trace(m) - 1) <= tol, f"trace {np.trace(m)} != 1"
        ev = np.linalg.eigvalsh((m + m.conj().T) / 2)
        assert ev.min() >= -tol, f"negative eigenvalue {ev.min()}"

    def __repr__(self):
        return f"DensityMatrix({', '.join(map(str, self.labels))})"


class MeasurementBranch(NamedTuple):
    outcome: int
    probability: float
    post_state: DensityMatrix
    reachable: bool = True


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"reliability {p!r} outside [0, 1]")


def _unitary(state: DensityMatrix, U: np.ndarray) -> DensityMatrix:
    return DensityMatrix._raw(U @ state.matrix @ U.conj().T, state.labels)


def apply_gate(state: DensityMatrix, gate: GateSpec) -> DensityMatrix:
    pos = tuple(state.index(t) for t in gate.targets)
    if gate.kind == "CNOT":
        a, b = (state.labels[i] for i in pos)
        if a.station != b.station:
            raise LocalityError(f"CNOT between {a} and {b} crosses stations")
    return _unitary(state, embed(gate.kind, pos, state.n_qubits))


def measure_z(state: DensityMatrix, qubit) -> list[MeasurementBranch]:
    """Destructive Z measurement; returns the ``+1`` (|0>) and ``-1`` (|1>) branches."""
    k = state.index(qubit)
    n = state.n_qubits
    a, b = 2 ** k, 2 ** (n - k - 1)
    t = state.matrix.reshape(a, 2, b, a, 2, b)
    labels = state.labels[:k] + state.labels[k + 1:]
    branches = []
    for bit, outcome in ((0, 1), (1, -1)):
        block = t[:, bit, :, :, bit, :].reshape(a * b, a * b)
        p = float(np.real(np.trace(block)))
        if p > 1e-14:
            branches.append(MeasurementBranch(outcome, p, DensityMatrix._raw(block / p, labels)))
        else:
            mixed = np.eye(a * b, dtype=complex) / (a * b)
            branches.append(MeasurementBranch(outcome, 0.0, DensityMatrix._raw(mixed, labels), False))
    return branches


def depolarize(state: DensityMatrix, qubit, reliability: float) -> DensityMatrix:
    _check_p(reliability)
    if reliability == 1.0:
        return state
    k = state.index(qubit)
    n = state.n_qubits
    m = state.matrix
    acc = m.copy()
    for kind in ("X", "Y", "Z"):
        U = embed(kind, (k,), n)
        acc = acc + U @ m @ U.conj().T
    out = reliability * m + (1 - reliability) / 4 * acc
    return DensityMatrix._raw(out, state.labels)


def noisy_cnot(state: DensityMatrix, control, target, reliability: float) -> DensityMatrix:
    _check_p(reliability)
    gate = GateSpec.make("CNOT", control, target)
    a, b = state.label(control), state.label(target)
    if a.station != b.station:
        raise LocalityError(f"CNOT between {a} and {b} crosses stations")
    state = depolarize(state, control, reliability)
    state = depolarize(state, target, reliability)
    return apply_gate(state, gate)


def partial_trace(state: DensityMatrix, keep) -> DensityMatrix:
    """Reduced state on ``keep``; a list/tuple fixes the output qubit order."""
    unordered = isinstance(keep, (set, frozenset))
    keep = list(keep)
    if not keep:
        raise ValueError("keep must be nonempty")
    kpos = [state.index(q) for q in keep]
    if len(set(kpos)) != len(kpos):
        raise ValueError("duplicate qubits in keep")
    if unordered:
        kpos.sort()
    n = state.n_qubits
    if kpos == list(range(n)):
        return state
    t = state.matrix.reshape((2,) * (2 * n))
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in kpos:
            col[i] = row[i]
    out = "".join(row[i] for i in kpos) + "".join(col[i] for i in kpos)
    red = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = 2 ** len(kpos)
    labels = tuple(state.labels[i] for i in kpos)
    return DensityMatrix._raw(np.ascontiguousarray(red.reshape(d, d)), labels)


def jamiolkowski_fidelity(state: DensityMatrix, ancilla, output) -> float:
    red = partial_trace(state, [ancilla, output]).matrix
    return float(np.real(PHI_PLUS.conj() @ red @ PHI_PLUS))


class BellProjection(NamedTuple):
    coefficients: BellDiag
    max_offdiagonal: float


def bell_coefficients(state: DensityMatrix) -> BellProjection:
    if state.n_qubits != 2:
        raise ValueError(f"need a two-qubit state, got {state.n_qubits} qubits")
    m = BELL_BASIS.conj().T @ state.matrix @ BELL_BASIS
    diag = np.real(np.diag(m))
    off = m - np.diag(np.diag(m))
    return BellProjection(BellDiag.from_array(diag / diag.sum()), float(np.abs(off).max()))
