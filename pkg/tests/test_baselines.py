import io
import math

import pytest

from psqcomm.baselines import (
    PlacementScenario, best_agent_protocol, optimize_working_fidelity, placement_search,
    structured_search, working_fidelity_strategy, write_placement_csv,
)
from psqcomm.envs.repeater import DelegationBudget, RepeaterConfig, exhaustive_search, replay_protocol

LOCATIONS = (1.73, 5.98, 7.71, 9.44, 12.29, 14.02, 15.75)


def test_working_fidelity_protocol_replays():
    cfg = RepeaterConfig(4, (0.75,) * 4)
    r = working_fidelity_strategy(cfg, 0.9)
    assert r.success
    final = replay_protocol(cfg, r.protocol).final_pair()
    assert final.fidelity == pytest.approx(r.final_fidelity, abs=1e-12)
    assert final.expected_resources == pytest.approx(r.expected_resources, rel=1e-12)
    assert final.fidelity >= 0.9


def test_unreachable_working_fidelity_fails():
    cfg = RepeaterConfig(2, (0.75, 0.75))
    r = working_fidelity_strategy(cfg, 0.999)
    assert not r.success and math.isinf(r.expected_resources)


def test_nested_and_general_orderings_cost_the_same():
    cfg = RepeaterConfig(8, (0.75,) * 8)
    a = working_fidelity_strategy(cfg, 0.93, nested=True)
    b = working_fidelity_strategy(cfg, 0.93, nested=False)
    assert a.expected_resources == pytest.approx(b.expected_resources, rel=1e-12)
    assert sorted(a.protocol) == sorted(b.protocol)


def test_symmetric_baseline_at_eight_links():
    r = optimize_working_fidelity(RepeaterConfig(8, (0.75,) * 8))
    assert r.expected_resources == pytest.approx(51757030.04, rel=1e-6)
    assert r.working_fidelity == pytest.approx(0.93, abs=2e-3)


def test_strict_mode_raises_when_infeasible():
    cfg = RepeaterConfig(2, (0.52, 0.52), gate_reliability=0.9)
    with pytest.raises(ValueError):
        optimize_working_fidelity(cfg)
    assert not optimize_working_fidelity(cfg, strict=False).success


def test_structured_search_matches_exhaustive_on_two_links():
    cfg = RepeaterConfig(2, (0.75, 0.75))
    s = structured_search(cfg)
    e = exhaustive_search(cfg)
    assert s.expected_resources == pytest.approx(e.resources, rel=1e-9)
    assert s.expected_resources <= optimize_working_fidelity(cfg).expected_resources * (1 + 1e-12)


def test_agent_reaches_a_protocol_on_three_links():
    cfg = RepeaterConfig(3, (0.8, 0.7, 0.8))
    r = best_agent_protocol(cfg, agents=2, trials=200, seed=1, budget=DelegationBudget(2, 100))
    assert r.success
    assert replay_protocol(cfg, r.protocol).final_pair().expected_resources == pytest.approx(r.expected_resources)


def test_placement_scenario_geometry():
    sc = PlacementScenario(20.0, LOCATIONS, 1)
    cfg = sc.config_for((4,))
    assert cfg.lengths == pytest.approx((9.44, 10.56))
    with pytest.raises(ValueError):
        PlacementScenario(20.0, (5.0, 3.0), 1)
    with pytest.raises(ValueError):
        PlacementScenario(20.0, LOCATIONS, 8)


def test_placement_ranks_central_station_first():
    rows = placement_search(PlacementScenario(20.0, LOCATIONS, 1))
    assert [r.subset[0] for r in rows][:1] == [4]
    assert all(a.resources <= b.resources for a, b in zip(rows, rows[1:]))
    buf = io.StringIO()
    write_placement_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "subset,resources,final_fidelity,working_fidelity"
    assert len(lines) == 8 and lines[1].startswith("4,")
