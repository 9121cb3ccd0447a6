import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psqcomm import qsim
from psqcomm.belldiag import BellDiag
from psqcomm.qsim import DensityMatrix, GateSpec, LocalityError, Qubit, UnknownQubitError

A, B, C = Qubit("A", "a"), Qubit("B", "b"), Qubit("A", "c")


def random_ket(seed, n):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
    return v / np.linalg.norm(v)


@pytest.mark.parametrize("name", sorted(qsim.GATES))
def test_gates_are_unitary(name):
    U = qsim.GATES[name]
    assert np.allclose(U @ U.conj().T, np.eye(len(U)), atol=1e-14)


def test_px_is_sqrt_minus_ix_up_to_phase():
    px, s = qsim.GATES["Px"], qsim.GATES["SqrtMinusIX"]
    phase = px[0, 0] / s[0, 0]
    assert abs(abs(phase) - 1) < 1e-14
    assert np.allclose(px, phase * s, atol=1e-14)


def test_bell_pair_and_partial_trace():
    rho = DensityMatrix.bell_pair(A, B)
    rho.check()
    assert qsim.jamiolkowski_fidelity(rho, A, B) == pytest.approx(1.0, abs=1e-14)
    red = qsim.partial_trace(rho, [A])
    assert np.allclose(red.matrix, np.eye(2) / 2, atol=1e-14)


def test_bell_coefficients_roundtrip():
    coeffs = BellDiag(0.4, 0.3, 0.2, 0.1)
    proj = qsim.bell_coefficients(DensityMatrix.from_bell(coeffs, A, B))
    assert np.allclose(proj.coefficients.as_array(), coeffs.as_array(), atol=1e-14)
    assert proj.max_offdiagonal < 1e-14


def test_depolarize_one_qubit_of_phi_plus():
    rho = qsim.depolarize(DensityMatrix.bell_pair(A, B), B, 0.5)
    lam = qsim.bell_coefficients(rho).coefficients
    assert lam.lambda00 == pytest.approx(0.625, abs=1e-14)
    assert lam.lambda10 == pytest.approx(0.125, abs=1e-14)


def test_measurement_branches_of_bell_pair():
    branches = qsim.measure_z(DensityMatrix.bell_pair(A, B), A)
    assert [b.outcome for b in branches] == [1, -1]
    assert [b.probability for b in branches] == pytest.approx([0.5, 0.5])
    assert np.allclose(branches[0].post_state.matrix, np.diag([1, 0]))
    assert np.allclose(branches[1].post_state.matrix, np.diag([0, 1]))


def test_zero_probability_branch_is_unreachable():
    rho = DensityMatrix.basis("00", [A, B])
    plus, minus = qsim.measure_z(rho, A)
    assert plus.probability == 1.0 and plus.reachable
    assert minus.probability == 0.0 and not minus.reachable
    minus.post_state.check()


def test_cnot_locality_and_unknown_qubits():
    rho = DensityMatrix.bell_pair(A, B)
    with pytest.raises(LocalityError):
        qsim.apply_gate(rho, GateSpec.make("CNOT", "a", "b"))
    with pytest.raises(UnknownQubitError):
        qsim.apply_gate(rho, GateSpec.make("H", "zz"))
    with pytest.raises(ValueError):
        GateSpec.make("CNOT", "a")


def test_relocate_enables_cnot():
    rho = DensityMatrix.bell_pair(A, B).relocate("b", "A")
    out = qsim.apply_gate(rho, GateSpec.make("CNOT", "a", "b"))
    assert np.allclose(np.diag(out.matrix).real, [0.5, 0, 0.5, 0])


def test_partial_trace_keeps_requested_order():
    ket = np.kron(np.array([1, 0]), np.array([0, 1]))
    rho = DensityMatrix.from_ket(ket, [A, B])
    swapped = qsim.partial_trace(rho, [B, A])
    assert np.allclose(np.diag(swapped.matrix).real, [0, 0, 1, 0])
    assert swapped.labels == (B, A)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["H", "P", "T", "Px"]), st.integers(0, 2))
def test_gates_preserve_density_matrix_invariants(seed, gate, target):
    rho = DensityMatrix.from_ket(random_ket(seed, 3), [A, B, C])
    q = rho.labels[target]
    out = qsim.apply_gate(rho, GateSpec.make(gate, q))
    out.check()
    assert out.trace() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.0, 1.0))
def test_measurement_and_noise_preserve_trace(seed, p):
    rho = DensityMatrix.from_ket(random_ket(seed, 3), [A, B, C])
    rho = qsim.noisy_cnot(rho, A, C, p)
    rho.check(1e-10)
    branches = qsim.measure_z(rho, C)
    assert sum(b.probability for b in branches) == pytest.approx(1.0, abs=1e-12)
    for b in branches:
        b.post_state.check(1e-10)


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.eye(2), [A, B])
    with pytest.raises(ValueError):
        DensityMatrix(np.eye(4) / 4, [A, A])
