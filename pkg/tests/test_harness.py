import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxentstate import harness
from maxentstate.agents import AGENT_COLUMNS
from maxentstate.exact_pg import EXACT_COLUMNS
from maxentstate.records import TrainRecord


def write_config(tmp_path, **cfg):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


def exact_cfg(tmp_path, **kw):
    base = {"kind": "exact_frozenlake", "env": {"name": "frozen_lake", "size": 4},
            "exact": {"iterations": 10}, "weights": [{"lambda_s": 0.5, "lambda_pi": 0.1}],
            "seeds": [0], "output_dir": "out", "figures": False}
    base.update(kw)
    return harness.load_config(write_config(tmp_path, **base))


def agent_cfg(tmp_path, **kw):
    base = {"kind": "fourrooms_ac", "env": {"name": "four_rooms", "max_episode_steps": 40},
            "agent": {"learning_rate": 0.01, "rollout_batch": 2, "max_updates": 4, "hidden": [8], "z_dim": 4},
            "weights": {"lambda_s": [0.0, 0.1]}, "seeds": [0, 1], "output_dir": "out"}
    base.update(kw)
    return harness.load_config(write_config(tmp_path, **base))


def synthetic_run_set(root, name, seed_values, columns=AGENT_COLUMNS, n=8):
    rs = Path(root) / name
    for seed, fn in seed_values.items():
        d = rs / f"seed{seed}"
        d.mkdir(parents=True)
        rows = []
        for i in range(n):
            vals = [i] + [fn(i)] * (len(columns) - 1)
            rows.append(vals)
        TrainRecord(columns, rows).to_csv(d / "record.csv")
        (d / "meta.json").write_text(json.dumps({"seed": seed, "status": "ok"}))
    return rs


# -- config -----------------------------------------------------------------

def test_default_weights_policy_entropy():
    cfg = harness.ExperimentConfig(kind="exact_frozenlake", env={"name": "frozen_lake"}, output_dir="x")
    assert cfg.weight_objects()[0].lambda_pi == 0.1
    grid = harness.ExperimentConfig(kind="sweep", runner="exact", env={"name": "frozen_lake"}, output_dir="x",
                                    weights={"lambda_s": [0.001, 0.01]})
    assert [w.lambda_pi for w in grid.weight_objects()] == [0.1, 0.1]


def test_config_errors_have_line_numbers(tmp_path):
    text = '{\n  "kind": "exact_frozenlake",\n  "env": {"name": "frozen_lake"},\n  "exact": {"iterations": 0},\n  "output_dir": "o"\n}'
    with pytest.raises(harness.ConfigError) as exc:
        harness.parse_config(text)
    assert exc.value.line == 4
    with pytest.raises(harness.ConfigError) as exc:
        harness.parse_config('{\n "kind": "sweep",\n "env": {"name": "x"}\n "output_dir": "o"}')
    assert exc.value.line == 4
    with pytest.raises(harness.ConfigError) as exc:
        harness.parse_config('{\n "kind": "exact_frozenlake",\n "colour": 1,\n "env": {"name": "frozen_lake"}, "output_dir": "o"}')
    assert exc.value.line == 3


@pytest.mark.parametrize("raw", [
    {"kind": "bogus", "env": {"name": "frozen_lake"}, "output_dir": "o"},
    {"kind": "sweep", "env": {"name": "frozen_lake"}, "output_dir": "o"},
    {"kind": "exact_frozenlake", "env": {"name": "four_rooms"}, "output_dir": "o"},
    {"kind": "exact_frozenlake", "env": {"name": "frozen_lake"}, "output_dir": "o", "seeds": [1, 1]},
    {"kind": "exact_frozenlake", "env": {"name": "frozen_lake"}, "output_dir": "o",
     "weights": [{"lambda_s": 0.1}, {"lambda_s": 0.1, "lambda_pi": 0.1}]},
    {"kind": "coverage_grid", "env": {"name": "pachinko", "wall_period": 1}, "output_dir": "o"},
    {"kind": "exact_frozenlake", "env": {"name": "frozen_lake"}},
])
def test_invalid_configs(raw):
    with pytest.raises(harness.ConfigError):
        harness.parse_config(json.dumps(raw))


def test_materialized_defaults_and_hash(tmp_path):
    cfg = exact_cfg(tmp_path)
    m = cfg.materialized()
    assert m["exact"]["learning_rate"] == 1.0 and m["exact"]["damping"] == 0.05
    assert m["env"]["max_episode_steps"] == 100
    assert cfg.config_hash() == exact_cfg(tmp_path).config_hash()
    assert cfg.config_hash() != exact_cfg(tmp_path, discount=0.9).config_hash()


def test_run_keys_unique(tmp_path):
    cfg = exact_cfg(tmp_path, kind="sweep", runner="exact", weights={"lambda_s": [0.001, 0.01, 0.1]},
                    seeds=[0, 1, 2, 3, 4])
    keys = [r.key for r in cfg.runs()]
    assert len(keys) == len(set(keys)) == 15


# -- running -----------------------------------------------------------------------

def test_minimal_exact_run(tmp_path):
    cfg = exact_cfg(tmp_path)
    manifest = harness.run_experiment(cfg)
    root = Path(cfg.output_dir)
    records = list(root.glob("runs/*/*/record.csv"))
    assert len(records) == 1
    assert TrainRecord.from_csv(records[0]).columns == EXACT_COLUMNS
    assert (root / "manifest.json").exists()
    assert manifest["status"] == "ok" and manifest["seeds"] == [0]
    assert set(manifest["versions"]) == {"package", "python", "numpy"}


def test_sweep_writes_fifteen_runs(tmp_path):
    cfg = exact_cfg(tmp_path, kind="sweep", runner="exact", weights={"lambda_s": [0.001, 0.01, 0.1]},
                    seeds=[0, 1, 2, 3, 4], exact={"iterations": 3})
    harness.run_experiment(cfg)
    dirs = list(Path(cfg.output_dir).glob("runs/*/seed*"))
    assert len(dirs) == 15
    assert len(list(Path(cfg.output_dir).glob("aggregate/*.csv"))) == 3


def test_rerun_reproduces_csvs(tmp_path):
    cfg = agent_cfg(tmp_path, figures=False)
    harness.run_experiment(cfg)
    root = Path(cfg.output_dir)
    first = {p: p.read_bytes() for p in root.glob("runs/**/*.csv")}
    harness.run_experiment(cfg)
    assert first and all(p.read_bytes() == b for p, b in first.items())


def test_manifest_complete_and_reaggregation_identical(tmp_path):
    cfg = agent_cfg(tmp_path)
    manifest = harness.run_experiment(cfg)
    root = Path(cfg.output_dir)
    files = {p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert set(manifest["artifacts"]) == files
    for rel, digest in manifest["artifacts"].items():
        assert harness.sha256_file(root / rel) == digest
    assert any(f.endswith(".png") for f in files)
    before = {p.name: p.read_bytes() for p in (root / "aggregate").glob("*.csv")}
    harness.aggregate(root)
    after = {p.name: p.read_bytes() for p in (root / "aggregate").glob("*.csv")}
    assert before == after


def test_parallel_workers_match_serial(tmp_path):
    serial = agent_cfg(tmp_path / "a", figures=False) if (tmp_path / "a").mkdir() is None else None
    parallel = agent_cfg(tmp_path / "b", figures=False, workers=2) if (tmp_path / "b").mkdir() is None else None
    harness.run_experiment(serial)
    harness.run_experiment(parallel)
    for p in Path(serial.output_dir).glob("runs/**/record.csv"):
        q = Path(parallel.output_dir) / p.relative_to(serial.output_dir)
        assert p.read_bytes() == q.read_bytes()


def test_run_failure_marked_and_partial_artifacts_kept(tmp_path):
    cfg = exact_cfg(tmp_path, exact={"iterations": 5, "learning_rate": float("inf"), "init": "gaussian", "init_scale": 1.0})
    with np.errstate(all="ignore"):
        manifest = harness.run_experiment(cfg)
    assert manifest["status"] == "failed"
    run = manifest["runs"][0]
    assert run["status"] == "failed" and "TrainingAborted" in run["error"]
    run_dir = Path(cfg.output_dir) / run["dir"]
    assert json.loads((run_dir / "meta.json").read_text())["status"] == "failed"
    assert (run_dir / "record.csv").exists()


# -- aggregation ------------------------------------------------------------------------

def test_aggregate_constant_curves_zero_stderr():
    recs = [TrainRecord(("x", "v"), [(i, 2.5) for i in range(5)]) for _ in range(3)]
    curve = harness.aggregate_records(recs)
    assert np.all(curve.stderr["v"] == 0.0)
    assert np.all(curve.mean["v"] == 2.5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=8))
def test_aggregate_stderr_formula(vals):
    recs = [TrainRecord(("x", "v"), [(0, v)]) for v in vals]
    curve = harness.aggregate_records(recs)
    expected = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert curve.stderr["v"][0] == pytest.approx(expected, abs=1e-9)


def test_aggregate_single_seed():
    curve = harness.aggregate_records([TrainRecord(("x", "v"), [(0, 1.0), (1, 3.0)])])
    assert np.all(curve.stderr["v"] == 0.0)


# -- heatmap ----------------------------------------------------------------------------

def test_heatmap_examples():
    g = np.array([[0, 0, -1], [0, 0, 0]])
    out = harness.heatmap(g)
    assert out[0, 2] == -1 and np.all(out[g >= 0] == 0.0)
    g = np.array([[0, 7, -1], [0, 0, 0]])
    out = harness.heatmap(g)
    assert out[0, 1] == 1.0 and out.sum() == 1.0 - 1.0


def test_heatmap_of_trained_run(tmp_path):
    cfg = agent_cfg(tmp_path, figures=False, seeds=[0], weights=[{"lambda_s": 0.1}])
    harness.run_experiment(cfg)
    run_dir = next(Path(cfg.output_dir).glob("runs/*/seed0"))
    out = harness.heatmap_run(run_dir, render=True)
    hm = harness.read_grid_csv(out)
    counts = harness.read_grid_csv(run_dir / "visits.csv")
    assert hm.shape == counts.shape == (11, 11)
    floor = counts >= 0
    np.testing.assert_array_equal(hm[~floor], -1.0)
    np.testing.assert_allclose(hm[floor], counts[floor] / counts[floor].max(), atol=1e-15)
    assert (run_dir / "heatmap.png").stat().st_size > 0


# -- compare ------------------------------------------------------------------------------

def test_compare_identical(tmp_path):
    a = synthetic_run_set(tmp_path, "a", {0: lambda i: i, 1: lambda i: 2 * i})
    rep = harness.compare(a, a, "auc")
    assert rep.median_gap == 0.0 and rep.mean_gap == 0.0
    assert rep.ties == 2 and rep.wins == rep.losses == 0


@pytest.mark.parametrize("metric", ["auc", "final", "coverage"])
def test_compare_known_offset(tmp_path, metric):
    a = synthetic_run_set(tmp_path, "a", {0: lambda i: i + 0.25, 1: lambda i: 3 * i + 0.25})
    b = synthetic_run_set(tmp_path, "b", {0: lambda i: i, 1: lambda i: 3 * i})
    rep = harness.compare(a, b, metric)
    assert rep.median_gap == pytest.approx(0.25) and rep.mean_gap == pytest.approx(0.25)
    assert rep.wins == 2
    assert "wins(A>B): 2" in rep.to_text()


def test_compare_seed_mismatch(tmp_path):
    a = synthetic_run_set(tmp_path, "a", {0: float, 1: float})
    b = synthetic_run_set(tmp_path, "b", {0: float, 2: float})
    with pytest.raises(ValueError, match="seed mismatch"):
        harness.compare(a, b)


def test_run_metric_definitions():
    rec = TrainRecord(AGENT_COLUMNS, [(i, float(i), 0.0, 0.0, 0.0, i / 10) for i in range(8)])
    assert harness.run_metric(rec, "auc") == 3.5
    assert harness.run_metric(rec, "final") == 6.5
    assert harness.run_metric(rec, "coverage") == 0.7
    exact = TrainRecord(EXACT_COLUMNS, [(i, float(i), 0, 0, 0, 0, 0) for i in range(4)])
    assert harness.run_metric(exact, "final") == 3.0
    with pytest.raises(ValueError):
        harness.run_metric(exact, "coverage")


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.json")))
def test_shipped_configs_parse(path):
    cfg = harness.load_config(path)
    assert cfg.runs()
    assert Path(cfg.output_dir).is_absolute()
