"""The pipeline stages behind the command-line tool.

Each stage reads its inputs from the output directory, writes its artifacts
there and returns a small summary dict.  Artifacts carry no timestamps so a
rerun with the same config and seed reproduces them byte for byte; verification
wall-clock goes to a separate timing file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from pathlib import Path

import numpy as np
import yaml

from .config import PipelineConfig, dump
from .conformal import (GlobalBound, TimewiseBound, TrajectoryDataset, empirical_coverage, load_bound,
                        regional_bounds, save_bound, timewise_baseline)
from .geometry import Partition, complete_tiling
from .models import generate_dataset
from .partition_opt import LossContext, run_ga
from .reach import Flowpipe, StateNoise, TimeNoise, reach

log = logging.getLogger(__name__)

SPLITS = ("reg", "conf", "test")


class PipelineError(RuntimeError):
    """Missing or inconsistent inputs; reported with exit code 1."""


def stage_seed(master: int, stage: str) -> int:
    """A 32-bit seed for one randomized stage, derived from the master seed."""
    key = [int(b) for b in stage.encode()]
    return int(np.random.SeedSequence([int(master)] + key).generate_state(1)[0])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise PipelineError(f"missing input {path}")
    return json.loads(path.read_text())


def _config_hash(cfg: PipelineConfig) -> str:
    # the output location does not change any artifact, so it is not hashed
    raw = {k: v for k, v in cfg.raw.items() if k != "output"}
    return hashlib.sha256(yaml.safe_dump(raw, sort_keys=True).encode()).hexdigest()


def _out(cfg: PipelineConfig) -> Path:
    try:
        cfg.output.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PipelineError(f"cannot create output directory {cfg.output}: {exc}") from exc
    return cfg.output


def data_path(cfg: PipelineConfig, split: str) -> Path:
    return cfg.output / "data" / f"d_{split}.jsonl"


def load_split(cfg: PipelineConfig, split: str) -> TrajectoryDataset:
    path = data_path(cfg, split)
    if not path.exists():
        raise PipelineError(f"missing dataset {path}; run gen-data first")
    return TrajectoryDataset.from_jsonl(path, cfg.model.domain)


# ---------------------------------------------------------------- gen-data


def gen_data(cfg: PipelineConfig) -> dict:
    out = _out(cfg) / "data"
    out.mkdir(exist_ok=True)
    sizes = {"reg": cfg.n_reg, "conf": cfg.n_conf, "test": cfg.n_test}
    manifest = {"stage": "gen-data", "seed": cfg.seed, "config_sha256": _config_hash(cfg),
                "model": cfg.model.name, "horizon": cfg.horizon, "splits": {}}
    offset = 0
    for split in SPLITS:
        seed = stage_seed(cfg.seed, f"data-{split}")
        ds = generate_dataset(cfg.model, cfg.noise, sizes[split], cfg.horizon, seed=seed, id_offset=offset)
        path = data_path(cfg, split)
        ds.to_jsonl(path)
        manifest["splits"][split] = {"file": path.name, "n": sizes[split], "seed": seed,
                                     "ids": [offset, offset + sizes[split] - 1], "sha256": _sha256(path)}
        offset += sizes[split]
    (out / "config.yaml").write_text(dump(cfg))
    _write_json(out / "manifest.json", manifest)
    return manifest


def check_disjoint(manifest: dict) -> None:
    spans = sorted(tuple(s["ids"]) for s in manifest["splits"].values())
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        if b0 <= a1:
            raise PipelineError("dataset id ranges overlap")


# ---------------------------------------------------------------- optimize


def optimize(cfg: PipelineConfig, dynamic: bool | None = None) -> dict:
    out = _out(cfg)
    d_reg = load_split(cfg, "reg")
    seed = stage_seed(cfg.seed, "optimize")
    ga_cfg = cfg.ga_config(dynamic=dynamic, seed=seed)
    res = run_ga(d_reg, ga_cfg, cfg.model.task, cfg.model.domain)
    best = res.best
    # empty cells are absorbed using bounds measured on the optimization split only
    etas_reg = LossContext(d_reg, cfg.model.task, ga_cfg.gamma, cfg.model.domain).etas(best.partition, best.alphas)
    tiled = complete_tiling(best.partition, etas_reg)
    artifact = {
        "confidence": "dynamic" if ga_cfg.dynamic else "fixed",
        "alpha": cfg.alpha,
        "alphas": [float(a) for a in best.alphas],
        "loss": float(best.fitness),
        "min_alpha": res.min_alpha,
        "seed": seed,
        "partition": tiled.to_dict(etas=etas_reg, alphas=best.alphas),
    }
    _write_json(out / "partition.json", artifact)
    with open(out / "ga_trace.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["generation", "best_loss", "mean_loss", "M_best"])
        w.writeheader()
        for row in res.trace:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    manifest = {"stage": "optimize", "seed": seed, "config_sha256": _config_hash(cfg),
                "confidence": artifact["confidence"], "n_regions": tiled.n_regions,
                "inputs": {"d_reg": _sha256(data_path(cfg, "reg"))}}
    _write_json(out / "optimize_manifest.json", manifest)
    return {"n_regions": tiled.n_regions, "loss": artifact["loss"], "alphas": artifact["alphas"]}


def load_partition(cfg: PipelineConfig) -> tuple[Partition, np.ndarray, dict]:
    data = _read_json(cfg.output / "partition.json")
    return Partition.from_dict(data["partition"]), np.asarray(data["alphas"], dtype=float), data


# ---------------------------------------------------------------- calibrate


def calibrate(cfg: PipelineConfig) -> dict:
    out = _out(cfg)
    part, alphas, meta = load_partition(cfg)
    d_conf = load_split(cfg, "conf")
    d_test = load_split(cfg, "test")
    task = cfg.model.task
    gb = regional_bounds(d_conf, part, alphas, task, alpha=float(meta["alpha"]))
    tb = timewise_baseline(d_conf, cfg.alpha, task)
    summary = {
        "alpha": cfg.alpha,
        "state": {"etas": [_num(e) for e in gb.etas], "alphas": [float(a) for a in gb.alphas],
                  "n_scores": [int(c) for c in gb.counts], "infinite_regions": gb.infinite_regions},
        "time": {"max_bound": _num(float(np.max(tb.steps))), "infinite_steps": tb.infinite_steps},
        "coverage": {"state": empirical_coverage(d_test, gb, task), "time": empirical_coverage(d_test, tb, task)},
        "n_test": d_test.n,
    }
    if gb.infinite_regions:
        lines = [f"region {i}: {gb.counts[i]} scores, alpha_i={gb.alphas[i]:.4g}" for i in gb.infinite_regions]
        raise PipelineError("infeasible confidence allocation (unbounded eta):\n  " + "\n  ".join(lines))
    if tb.infinite_steps:
        log.warning("timewise baseline is unbounded at %d steps; N_conf is too small for alpha/(T+1)",
                    len(tb.infinite_steps))
    save_bound(gb, out / "bounds_state.json")
    save_bound(tb, out / "bounds_time.json")
    _write_json(out / "calibration.json", summary)
    return summary


def _num(x: float):
    return "inf" if math.isinf(x) else float(x)


# ---------------------------------------------------------------- verify


def run_name(method: str, max_branches: int | None) -> str:
    return method if max_branches is None else f"{method}_b{max_branches}"


def verify(cfg: PipelineConfig, method: str = "state", max_branches: int | None = None) -> dict:
    out = _out(cfg)
    path = out / f"bounds_{method}.json"
    if not path.exists():
        raise PipelineError(f"missing {path}; run calibrate first")
    bound = load_bound(path)
    if method == "state":
        if not isinstance(bound, GlobalBound):
            raise PipelineError(f"{path} does not hold state-based bounds")
        noise = StateNoise.from_bound(bound, cfg.region_split)
    else:
        if not isinstance(bound, TimewiseBound):
            raise PipelineError(f"{path} does not hold timewise bounds")
        if len(bound.steps) != cfg.horizon + 1:
            raise PipelineError("timewise bounds do not match the horizon")
        noise = TimeNoise.from_bound(bound)
    rcfg = cfg.reach_config(max_branches, seed=stage_seed(cfg.seed, "verify"))
    t0 = time.perf_counter()
    fp = reach(cfg.model, noise, rcfg)
    wall = time.perf_counter() - t0
    name = run_name(method, max_branches)
    fp.to_csv(out / f"flowpipe_{name}.csv")
    metrics = fp.metrics(cfg.model.rss_dims, cfg.walls or None)
    cal = out / "calibration.json"
    metrics.update({
        "method": method,
        "max_branches": rcfg.max_branches,
        "rss_dims": list(cfg.model.rss_dims),
        "test_coverage": json.loads(cal.read_text())["coverage"][method] if cal.exists() else None,
        "n_regions": bound.partition.n_regions if method == "state" else None,
        "confidence": _read_json(out / "partition.json")["confidence"] if method == "state" else None,
    })
    _write_json(out / f"metrics_{name}.json", metrics)
    _write_json(out / f"timing_{name}.json", {"wall_clock": wall})
    return metrics


# ---------------------------------------------------------------- report

def report_columns(rows: list[dict]) -> list[str]:
    """Table headers; the third column is the safe distance when walls were given."""
    third = "Safe Distance" if any(r.get("Safe Distance") is not None for r in rows) else "Max RSS"
    return ["Solution Type", "RSS", third, "Verification Time [s]", "Test Coverage"]


def report(cfg: PipelineConfig, metrics_files=None) -> list[dict]:
    out = _out(cfg)
    files = [Path(f) for f in metrics_files] if metrics_files else sorted(out.glob("metrics_*.json"))
    if not files:
        raise PipelineError(f"no metrics files given or found in {out}")
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        raise PipelineError("missing metrics files: " + ", ".join(missing))
    rows = []
    for f in files:
        m = json.loads(f.read_text())
        name = f.stem[len("metrics_"):] if f.stem.startswith("metrics_") else f.stem
        timing = f.with_name(f"timing_{name}.json")
        wall = json.loads(timing.read_text())["wall_clock"] if timing.exists() else None
        rows.append({
            "Solution Type": _label(m),
            "RSS": m["rss"],
            "Max RSS": m["max_rss"],
            "Safe Distance": m.get("safe_distance"),
            "Verification Time [s]": wall,
            "Test Coverage": m.get("test_coverage"),
        })
        fp_path = f.with_name(f"flowpipe_{name}.csv")
        if fp_path.exists():
            write_intervals(Flowpipe.from_csv(fp_path), f.with_name(f"intervals_{name}.csv"))
    cols = report_columns(rows)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else r[c] for c in cols])
    (out / "report.md").write_text(markdown_table(rows, cols))
    return rows


def _label(m: dict) -> str:
    if m["method"] == "time":
        base = "Time-based baseline"
    else:
        conf = (m.get("confidence") or "fixed").capitalize()
        base = f"{conf} Confidence; M={m.get('n_regions')}"
    return f"{base}; B={m['max_branches']}"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def markdown_table(rows: list[dict], cols: list[str]) -> str:
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            cells.append(f"{100 * v:.1f}%" if c == "Test Coverage" and v is not None else _fmt(v))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_intervals(fp: Flowpipe, path: Path) -> None:
    """Per-step hull of the flowpipe, one lo/hi column pair per state."""
    names = list(fp.state_names) or [f"x{i}" for i in range(fp.boxes[0][0].ndim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "n_boxes"] + [f"{n}_{s}" for n in names for s in ("lo", "hi")])
        for k in range(len(fp.boxes)):
            h = fp.hull(k)
            w.writerow([k, len(fp.boxes[k])] + [repr(float(v)) for d in range(h.ndim) for v in (h.lo[d], h.hi[d])])
