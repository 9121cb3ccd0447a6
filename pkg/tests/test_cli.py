import csv
import json
import math

import numpy as np
import pytest

from psqcomm import cli
from psqcomm.experiment import (
    UNDEFINED, ExperimentSpec, aggregate, compare_to_baseline, run_ensemble, run_experiment,
)


def write(path, text):
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_spec_validation_names_fields():
    with pytest.raises(ValueError, match="agents"):
        ExperimentSpec("teleport", agents=0)
    with pytest.raises(ValueError, match="env"):
        ExperimentSpec("chess")
    with pytest.raises(ValueError, match="eta"):
        ExperimentSpec("epp", eta=2.0)


def test_single_agent_single_trial_curve(tmp_path):
    spec = ExperimentSpec("teleport", agents=1, trials=1, out=str(tmp_path / "one"))
    res = run_experiment(spec)
    rows = read_rows(res.paths["curve"])
    assert rows[0] == ["trial", "mean_actions", "band", "success_fraction", "best"]
    assert len(rows) == 2
    summary = json.loads(open(res.paths["summary"]).read())
    assert summary["metric"] == "actions"


def test_runs_are_reproducible(tmp_path):
    def body(name):
        spec = ExperimentSpec("teleport", agents=2, trials=30, seed=7, out=str(tmp_path / name))
        res = run_experiment(spec)
        return open(res.paths["curve"]).read(), open(res.paths["transcripts"]).read()

    assert body("a") == body("b")


def test_worker_count_does_not_change_results():
    spec = ExperimentSpec("teleport", agents=3, trials=20, seed=2)
    a = run_ensemble(spec)
    b = run_ensemble(ExperimentSpec("teleport", agents=3, trials=20, seed=2, workers=2))
    for x, y in zip(a, b):
        assert np.array_equal(x.metric, y.metric)


def test_aggregation_on_three_agents():
    spec = ExperimentSpec("teleport", agents=3, trials=40, seed=11)
    runs = run_ensemble(spec)
    rows = aggregate(runs, spec.metric)
    values = np.vstack([r.metric for r in runs])
    for t in (0, 17, 39):
        assert rows[t].mean == pytest.approx(values[:, t].mean(), abs=1e-12)
        assert rows[t].band == pytest.approx(values[:, t].std() / 3, abs=1e-12)
        assert 0.0 <= rows[t].success_fraction <= 1.0
    # failed teleportation trials count as fifty actions
    failed = ~np.vstack([r.success for r in runs])
    assert np.all(values[failed] == 50)


def test_resource_curves_skip_failed_agents():
    spec = ExperimentSpec("repeater2", {"initial_fidelities": [0.75, 0.75]}, eta=0.0,
                          agents=3, trials=30, seed=0)
    runs = run_ensemble(spec)
    rows = aggregate(runs, spec.metric)
    values = np.vstack([r.metric for r in runs])
    for t, row in enumerate(rows):
        col = values[:, t][~np.isnan(values[:, t])]
        if col.size:
            assert row.mean == pytest.approx(col.mean(), rel=1e-12)
        else:
            assert math.isnan(row.mean)


def test_epp_run_writes_histogram(tmp_path):
    spec = ExperimentSpec("epp", agents=2, trials=20, out=str(tmp_path / "epp"))
    res = run_experiment(spec)
    rows = read_rows(res.paths["histogram"])
    assert rows[0] == ["bin_low", "bin_high", "agents"]
    assert sum(int(r[2]) for r in rows[1:]) == 2


def test_compare_with_zero_trials_is_undefined():
    spec = ExperimentSpec("repeater2", {"initial_fidelities": [0.75, 0.75]}, trials=0, agents=1)
    (row,) = compare_to_baseline(spec)
    assert row.ratio == UNDEFINED
    assert row.baseline_resources > 0


def test_compare_infeasible_baseline_is_undefined():
    spec = ExperimentSpec("repeater2", {"initial_fidelities": [0.52, 0.52], "gate_reliability": 0.9},
                          trials=5, agents=1)
    (row,) = compare_to_baseline(spec)
    assert row.ratio == UNDEFINED


def test_cli_run(tmp_path, capsys):
    cfg = write(tmp_path / "t.toml", """
[experiment]
env = "teleport"
agents = 2
trials = 10

[env]
variant = "v1"
""")
    out = str(tmp_path / "res" / "tele")
    assert cli.main(["run", cfg, "--out", out, "--seed", "3"]) == 0
    assert read_rows(out + "_curve.csv")[0][1] == "mean_actions"
    assert "wrote" in capsys.readouterr().out


def test_cli_compare_sweep(tmp_path):
    cfg = write(tmp_path / "c.toml", """
[experiment]
env = "repeater2"
agents = 1
trials = 20
eta = 0.0

[env]
initial_fidelities = [0.75, 0.75]

[sweep]
param = "gate_reliability"
values = [0.99, 1.0]
""")
    out = str(tmp_path / "cmp")
    assert cli.main(["compare", cfg, "--out", out]) == 0
    rows = read_rows(out + "_compare.csv")
    assert rows[0] == ["gate_reliability", "agent_resources", "baseline_resources", "ratio"]
    assert [r[0] for r in rows[1:]] == ["0.99", "1.0"]


def test_cli_placement(tmp_path):
    cfg = write(tmp_path / "p.toml", """
[placement]
total_km = 20.0
candidate_positions_km = [1.73, 5.98, 7.71, 9.44, 12.29, 14.02, 15.75]
k = 1
solver = "baseline"
""")
    out = str(tmp_path / "pl")
    assert cli.main(["placement", cfg, "--out", out]) == 0
    assert len(read_rows(out + "_placement.csv")) == 8


@pytest.mark.parametrize("text, message", [
    ("[experiment]\nagents = 2\n", "env is required"),
    ("[experiment]\nenv = 'teleport'\nbogus = 1\n", "unknown"),
    ("[experiment]\nenv = 'teleport'\nagents = -1\n", "agents"),
    ("[experiment\n", "malformed"),
])
def test_cli_config_errors(tmp_path, capsys, text, message):
    cfg = write(tmp_path / "bad.toml", text)
    assert cli.main(["run", cfg]) == 2
    assert message in capsys.readouterr().err


def test_cli_missing_file(capsys):
    assert cli.main(["run", "/nonexistent/config.toml"]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_failed_run_removes_partial_outputs(tmp_path):
    spec = ExperimentSpec("scaling", {"initial_fidelities": [0.75, 0.75], "threshold": 2.0},
                          agents=1, trials=1, out=str(tmp_path / "bad"))
    with pytest.raises(ValueError):
        run_experiment(spec)
    assert list(tmp_path.iterdir()) == []
