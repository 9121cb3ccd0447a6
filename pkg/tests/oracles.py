"""Density-matrix reference constructions for the closed-form Bell-diagonal maps."""
import math

import numpy as np

from psqcomm import qsim
from psqcomm.belldiag import BellDiag, werner
from psqcomm.qsim import DensityMatrix, GateSpec, Qubit

A1, B1, A2, B2 = Qubit("A", "A1"), Qubit("B", "B1"), Qubit("A", "A2"), Qubit("B", "B2")


def random_belldiag(rng):
    return BellDiag.from_array(rng.dirichlet(np.ones(4)))


def _two_pairs(a, b):
    return DensityMatrix.from_bell(a, A1, B1).tensor(DensityMatrix.from_bell(b, A2, B2))


def _rotate(rho, kind, qubits):
    for q in qubits:
        rho = qsim.apply_gate(rho, GateSpec.make(kind, q))
    return rho


def _bilateral_cnot_postselect(rho, p):
    rho = qsim.noisy_cnot(rho, "A1", "A2", p)
    rho = qsim.noisy_cnot(rho, "B1", "B2", p)
    acc = None
    total = 0.0
    for ba in qsim.measure_z(rho, "A2"):
        for bb in qsim.measure_z(ba.post_state, "B2"):
            if ba.outcome != bb.outcome:
                continue
            w = ba.probability * bb.probability
            total += w
            m = w * bb.post_state.matrix
            acc = m if acc is None else acc + m
    out = DensityMatrix(acc / total, (A1, B1))
    return qsim.bell_coefficients(out), total


def oracle_mcnot(a, b):
    return _bilateral_cnot_postselect(_two_pairs(a, b), 1.0)


def oracle_dejmps(a, b, p=1.0):
    rho = _two_pairs(a, b)
    rho = _rotate(rho, "SqrtMinusIX", ["A1", "A2"])
    # sqrt(iX) is the adjoint of sqrt(-iX) = three applications of it
    rho = _rotate(rho, "SqrtMinusIX", ["B1", "B2"] * 3)
    return _bilateral_cnot_postselect(rho, p)


def oracle_agent_variant(a, b, p=1.0):
    rho = _rotate(_two_pairs(a, b), "SqrtMinusIX", ["A1", "A2", "B1", "B2"])
    return _bilateral_cnot_postselect(rho, p)


def oracle_bbpssw(a, b, p=1.0):
    proj, N = _bilateral_cnot_postselect(_two_pairs(a, b), p)
    return werner(proj.coefficients.lambda00), N, proj


def oracle_swap(a, b, reliability=1.0):
    left, m1, m2, right = Qubit("L", "a"), Qubit("M", "m1"), Qubit("M", "m2"), Qubit("R", "b")
    rho = DensityMatrix.from_bell(a, left, m1).tensor(DensityMatrix.from_bell(b, m2, right))
    rho = qsim.depolarize(rho, "m1", reliability)
    rho = qsim.depolarize(rho, "m2", reliability)
    rho = qsim.apply_gate(rho, GateSpec.make("CNOT", "m1", "m2"))
    rho = qsim.apply_gate(rho, GateSpec.make("H", "m1"))
    acc = np.zeros((4, 4), dtype=complex)
    for b1 in qsim.measure_z(rho, "m1"):
        for b2 in qsim.measure_z(b1.post_state, "m2"):
            st = b2.post_state
            if b2.outcome == -1:
                st = qsim.apply_gate(st, GateSpec.make("X", "b"))
            if b1.outcome == -1:
                st = qsim.apply_gate(st, GateSpec.make("Z", "b"))
            acc += b1.probability * b2.probability * st.matrix
    return qsim.bell_coefficients(DensityMatrix(acc, (left, right)))


def oracle_channel(a, length_km, attenuation_km):
    rho = DensityMatrix.from_bell(a, A1, B1)
    rho = qsim.depolarize(rho, "B1", math.exp(-length_km / attenuation_km))
    return qsim.bell_coefficients(rho)


def oracle_memory(a, t, tau):
    q = math.exp(-t / tau)
    rho = DensityMatrix.from_bell(a, A1, B1)
    rho = qsim.depolarize(qsim.depolarize(rho, "A1", q), "B1", q)
    return qsim.bell_coefficients(rho)
