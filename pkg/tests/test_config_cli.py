import csv
import json

import numpy as np
import pytest
import yaml

from confreach import cli
from confreach.config import PRESETS, ConfigError, build, load
from confreach.conformal import TrajectoryDataset, augmented_quantile

SMALL = {
    "model": {"name": "mountain-car", "horizon": 20},
    "splits": {"n_reg": 200, "n_conf": 1000, "n_test": 300},
    "ga": {"budgets": [2, 0], "population": 10, "generations": 4},
    "reach": {"max_branches": 5, "init_splits": 5},
}


def write_config(tmp_path, **over) -> str:
    raw = json.loads(json.dumps(SMALL))
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(raw.get(k), dict):
            raw[k].update(v)
        else:
            raw[k] = v
    raw.setdefault("output", str(tmp_path / "out"))
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def run(*args) -> int:
    return cli.main([str(a) for a in args])


class TestConfig:
    def test_presets_build(self):
        for name in PRESETS:
            cfg = load(name)
            assert cfg.n_conf > 0 and 0 < cfg.alpha < 1

    def test_car_preset_discount(self):
        assert load("car").ga_config().gamma == 0.925
        assert load("mc").ga_config().gamma == 0.9

    def test_overrides(self, tmp_path):
        cfg = load(write_config(tmp_path), seed=5, output=tmp_path / "x")
        assert cfg.seed == 5 and cfg.output == tmp_path / "x" and cfg.horizon == 20

    @pytest.mark.parametrize("bad", [
        {"splits": {"n_reg": 0}},
        {"alpha": 1.5},
        {"ga": {"budgets": [1]}},
        {"model": {"name": "boat"}},
        {"noise": {"unknown": 1}},
        {"model": {"name": "mountain-car", "x0": [[2.0, 3.0], [0.0, 0.0]]}},
    ])
    def test_invalid(self, tmp_path, bad):
        with pytest.raises(ConfigError):
            load(write_config(tmp_path, **bad))

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load("/nonexistent/cfg.yaml")

    def test_noise_section_replaces_preset(self):
        cfg = build({"model": {"name": "mountain-car"}, "noise": {"sigma": 0.0}})
        assert len(cfg.noise.bands) == 1 and cfg.noise.bands[0].sigma == 0.0


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg = write_config(tmp)
    out = tmp / "out"
    codes = [run("gen-data", "--config", cfg), run("optimize", "--config", cfg, "--confidence", "dynamic"),
             run("calibrate", "--config", cfg), run("verify", "--config", cfg, "--bounds", "state"),
             run("verify", "--config", cfg, "--bounds", "time"), run("report", "--config", cfg)]
    return tmp, cfg, out, codes


class TestPipeline:
    def test_all_stages_succeed(self, pipeline_run):
        assert pipeline_run[3] == [0] * 6

    def test_split_sizes_and_disjoint_ids(self, pipeline_run):
        _, _, out, _ = pipeline_run
        man = json.loads((out / "data" / "manifest.json").read_text())
        ids = []
        for split, n in (("reg", 200), ("conf", 1000), ("test", 300)):
            ds = TrajectoryDataset.from_jsonl(out / "data" / f"d_{split}.jsonl")
            assert ds.n == n == man["splits"][split]["n"]
            ids.append(set(ds.ids.tolist()))
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])

    def test_trace_non_increasing(self, pipeline_run):
        rows = list(csv.DictReader(open(pipeline_run[2] / "ga_trace.csv")))
        best = [float(r["best_loss"]) for r in rows]
        assert len(best) == 5 and all(b <= a for a, b in zip(best, best[1:]))

    def test_dynamic_alphas_sum(self, pipeline_run):
        art = json.loads((pipeline_run[2] / "partition.json").read_text())
        assert art["confidence"] == "dynamic"
        assert abs(sum(art["alphas"]) - 0.05) <= 1e-9

    def test_bounds_and_coverage(self, pipeline_run):
        cal = json.loads((pipeline_run[2] / "calibration.json").read_text())
        assert all(e >= 0 for e in cal["state"]["etas"])
        sigma = (0.05 * 0.95 / cal["n_test"]) ** 0.5
        assert cal["coverage"]["state"] >= 0.95 - 3 * sigma

    def test_metrics_keys(self, pipeline_run):
        for name in ("state", "time"):
            m = json.loads((pipeline_run[2] / f"metrics_{name}.json").read_text())
            assert {"rss", "max_rss", "safe_distance", "per_step_branch_counts"} <= set(m)
            assert m["method"] == name
            assert (pipeline_run[2] / f"timing_{name}.json").exists()

    def test_time_mode_uses_step_bounds(self, pipeline_run):
        tb = json.loads((pipeline_run[2] / "bounds_time.json").read_text())
        assert tb["method"] == "time" and len(tb["steps"]) == 21

    def test_report(self, pipeline_run):
        out = pipeline_run[2]
        rows = list(csv.reader(open(out / "report.csv")))
        assert rows[0] == ["Solution Type", "RSS", "Max RSS", "Verification Time [s]", "Test Coverage"]
        assert len(rows) == 3
        assert (out / "report.md").exists() and (out / "intervals_state.csv").exists()

    def test_rerun_is_byte_identical(self, pipeline_run, tmp_path):
        _, cfg, out, _ = pipeline_run
        other = tmp_path / "again"
        for stage in (["gen-data"], ["optimize", "--confidence", "dynamic"], ["calibrate"], ["verify"]):
            assert run(stage[0], "--config", cfg, "--out", other, *stage[1:]) == 0
        for rel in ("data/d_reg.jsonl", "data/d_conf.jsonl", "data/d_test.jsonl", "data/manifest.json",
                    "partition.json", "ga_trace.csv", "bounds_state.json", "bounds_time.json",
                    "calibration.json", "flowpipe_state.csv", "metrics_state.json"):
            assert (out / rel).read_bytes() == (other / rel).read_bytes(), rel


class TestModes:
    def test_fixed_confidence(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run("gen-data", "--config", cfg) == 0
        assert run("optimize", "--config", cfg, "--confidence", "fixed") == 0
        art = json.loads((tmp_path / "out" / "partition.json").read_text())
        assert art["confidence"] == "fixed"
        assert np.allclose(art["alphas"], 0.05 / len(art["alphas"]))

    def test_single_region_reproduces_plain_quantile(self, tmp_path):
        cfg = write_config(tmp_path, ga={"budgets": [0, 0]})
        for stage in ("gen-data", "optimize", "calibrate"):
            assert run(stage, "--config", cfg) == 0
        out = tmp_path / "out"
        ds = TrajectoryDataset.from_jsonl(out / "data" / "d_conf.jsonl")
        scores = np.abs(ds.states[..., :1] - ds.outputs).max(axis=(1, 2))
        cal = json.loads((out / "calibration.json").read_text())
        assert cal["state"]["etas"] == [augmented_quantile(scores, 0.05)]

    def test_zero_noise_smoke(self, tmp_path):
        cfg = write_config(tmp_path, noise={"sigma": 0.0})
        for stage in ("gen-data", "optimize", "calibrate", "verify"):
            assert run(stage, "--config", cfg) == 0
        ds = TrajectoryDataset.from_jsonl(tmp_path / "out" / "data" / "d_reg.jsonl")
        np.testing.assert_array_equal(ds.outputs[..., 0], ds.states[..., 0])


class TestExitCodes:
    def test_invalid_config(self, tmp_path, capsys):
        assert run("gen-data", "--config", write_config(tmp_path, alpha=2.0)) == 1
        assert "alpha" in capsys.readouterr().err

    def test_missing_inputs(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run("optimize", "--config", cfg) == 1
        assert run("calibrate", "--config", cfg) == 1
        assert run("verify", "--config", cfg) == 1

    def test_empty_report(self, tmp_path, capsys):
        assert run("report", "--config", write_config(tmp_path)) == 1
        assert "no metrics" in capsys.readouterr().err

    def test_bad_branch_budget(self, tmp_path):
        assert run("verify", "--config", write_config(tmp_path), "--max-branches", "0") == 1

    def test_ga_failure(self, tmp_path, capsys):
        cfg = write_config(tmp_path, splits={"n_reg": 20}, ga={"min_alpha": 0.001})
        assert run("gen-data", "--config", cfg) == 0
        assert run("optimize", "--config", cfg) == 1
        assert "infinite loss" in capsys.readouterr().err

    def test_verification_failure(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        for stage in ("gen-data", "optimize", "calibrate"):
            assert run(stage, "--config", cfg) == 0
        bounds = tmp_path / "out" / "bounds_state.json"
        data = json.loads(bounds.read_text())
        for r in data["regions"]:
            r["eta"] = "inf"
        bounds.write_text(json.dumps(data))
        assert run("verify", "--config", cfg) == 2
        assert "verification failed" in capsys.readouterr().err

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            run("serve", "--config", "mc")
