import io
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psqcomm.psagent import EcmNetwork, MetaParams, PSAgent


def test_meta_params_validation():
    with pytest.raises(ValueError):
        MetaParams(eta=1.5)
    with pytest.raises(ValueError):
        MetaParams(gamma=-0.1)
    with pytest.raises(ValueError):
        MetaParams(beta=0.0)


def test_registration_is_idempotent_and_masked():
    net = EcmNetwork(4)
    assert net.register_percept(b"s", [2, 0]) == 0
    assert net.register_percept(b"s", [1]) == 0
    assert net.mask(b"s") == (0, 2)
    assert set(net.probabilities(b"s")) == {0, 2}
    with pytest.raises(ValueError):
        net.register_percept(b"t", [4])


def test_softmax_probabilities():
    net = EcmNetwork(2)
    net.register_percept(b"s", [0, 1])
    net._rows[0].h = np.array([2.0, 1.0])
    probs = net.probabilities(b"s")
    assert probs[0] == pytest.approx(math.e / (math.e + 1), abs=1e-15)
    assert math.fsum(probs.values()) == pytest.approx(1.0, abs=1e-15)
    sharp = net.probabilities(b"s", beta=3.0)
    assert sharp[0] == pytest.approx(math.exp(3) / (math.exp(3) + 1), abs=1e-15)


def test_unregistered_percept_is_uniform():
    net = EcmNetwork(5)
    probs = net.probabilities(b"new", [1, 3])
    assert probs == {1: 0.5, 3: 0.5}
    assert len(net) == 0


def test_reward_adds_glow_times_reward():
    net = EcmNetwork(3)
    params = MetaParams(eta=0.1, gamma=0.0)
    rng = random.Random(0)
    a = net.select_action(b"s", rng, (0, 1, 2))
    net.update(0.0, params)
    assert len(net) == 0  # nothing materialized without reward
    b = net.select_action(b"t", rng, (0, 1))
    net.update(1.0, params)
    h = net.h_matrix()
    rows = {k: net.percept_index[k] for k in (b"s", b"t")}
    assert h[rows[b"s"], a] == pytest.approx(1.0 + 0.9, abs=1e-15)
    assert h[rows[b"t"], b] == pytest.approx(2.0, abs=1e-15)
    # masked entries stay at their initial weight of one
    assert h.sum() == pytest.approx(6 + 0.9 + 1.0, abs=1e-12)


def test_glow_decays_geometrically():
    net = EcmNetwork(2)
    params = MetaParams(eta=0.1)
    rng = random.Random(1)
    a = net.select_action(b"s", rng, (0, 1))
    net.update(0.0, params)
    for n in range(1, 6):
        net.select_action(b"x%d" % n, rng, (0, 1))
        net.update(0.0, params)
        assert net.glow_value(b"s", a, params) == pytest.approx(0.9 ** n, abs=1e-12)


def test_damping_relaxes_towards_one():
    net = EcmNetwork(2)
    net.register_percept(b"s", [0, 1])
    net._rows[0].h = np.array([3.0, 1.0])
    params = MetaParams(eta=1.0, gamma=0.25)
    rng = random.Random(0)
    for _ in range(3):
        net.select_action(b"other", rng, (0,))
        net.update(0.0, params)
    assert net.h_matrix()[0, 0] == pytest.approx(1.0 + 2.0 * 0.75 ** 3, abs=1e-12)


def test_snapshot_roundtrip():
    agent = PSAgent(3, MetaParams(0.2), seed=4)
    for _ in range(20):
        agent.begin_trial()
        agent.act(b"p", (0, 1, 2))
        agent.learn(1.0)
    blob = agent.snapshot()
    net = EcmNetwork.load(io.BytesIO(blob))
    assert np.allclose(net.h_matrix(), agent.net.h_matrix())
    assert net.mask(b"p") == (0, 1, 2)


def test_agent_is_deterministic_given_seed():
    def run(seed):
        agent = PSAgent(4, seed=seed)
        out = []
        for t in range(50):
            agent.begin_trial()
            a = agent.act(b"%d" % (t % 3), (0, 1, 2, 3))
            agent.learn(1.0 if a == 2 else 0.0)
            out.append(a)
        return out

    assert run(3) == run(3)


def test_negative_reward_rejected():
    net = EcmNetwork(2)
    net.select_action(b"s", random.Random(0), (0, 1))
    with pytest.raises(ValueError):
        net.update(-1.0, MetaParams())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=6), st.floats(-50, 50))
def test_argmax_and_probabilities_invariant_under_row_shift(hs, shift):
    n = len(hs)
    net = EcmNetwork(n)
    net.register_percept(b"a", range(n))
    net.register_percept(b"b", range(n))
    net._rows[0].h = np.array(hs)
    net._rows[1].h = np.array(hs) + shift
    pa, pb = net.probabilities(b"a"), net.probabilities(b"b")
    assert max(pa, key=pa.get) == max(pb, key=pb.get)
    for k in pa:
        assert pa[k] == pytest.approx(pb[k], abs=1e-12)
    assert math.fsum(pa.values()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_zero_reward_keeps_unit_weights(seed, eta, gamma):
    net = EcmNetwork(3)
    params = MetaParams(eta, gamma)
    net.register_percept(b"s", [0, 1, 2])
    rng = random.Random(seed)
    for _ in range(20):
        net.select_action(b"s", rng)
        net.update(0.0, params)
    assert np.array_equal(net.h_matrix(), np.ones((1, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.01, 1.0), st.floats(0.0, 0.5))
def test_lazy_updates_match_dense_reference(seed, eta, gamma):
    """The lazy network equals a dense implementation of the learning rule."""
    rng = random.Random(seed)
    percepts = [b"a", b"b", b"c"]
    n_actions = 3
    net = EcmNetwork(n_actions)
    params = MetaParams(eta, gamma)
    for p in percepts:
        net.register_percept(p, range(n_actions))
    h = np.ones((3, n_actions))
    g = np.zeros((3, n_actions))
    for step in range(30):
        if step % 10 == 0:
            net.reset_glow()
            g[:] = 0.0
        p = rng.randrange(3)
        a = net.select_action(percepts[p], random.Random(step), range(n_actions))
        r = float(rng.random() < 0.3)
        g *= 1.0 - eta
        g[p, a] = 1.0
        h = h - gamma * (h - 1.0) + g * r
        net.update(r, params)
    assert np.allclose(net.h_matrix(), h, atol=1e-10)
