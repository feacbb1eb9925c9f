"""Pipeline configuration: loading, validation and the shipped presets.

A config is a YAML (or JSON) mapping with the sections ``model``, ``noise``,
``splits``, ``ga``, ``reach`` plus ``alpha``, ``seed`` and ``output``.  Every
section is optional except ``model``; missing keys take the preset defaults of
the chosen model.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .geometry import Box
from .models import KinematicCar, LTrack, MountainCar, NoiseBand, NoiseProfile, two_regime_profile
from .partition_opt import GAConfig
from .reach import ReachConfig


class ConfigError(ValueError):
    pass


MC_PRESET: dict[str, Any] = {
    "model": {"name": "mountain-car", "horizon": 90, "params": {"kv": 70.0, "kp": -1.5, "offset": 1.1}},
    "noise": {"two_regime": {"dim": 0, "band": [-0.2, 0.2], "sigma_low": 0.005, "ratio": 10.0,
                             "dist": "truncated-gaussian"}},
    "splits": {"n_reg": 2000, "n_conf": 4000, "n_test": 2000},
    "alpha": 0.05,
    "seed": 0,
    "ga": {"budgets": [2, 0], "population": 100, "generations": 30, "gamma": 0.9, "dynamic": True},
    "reach": {"max_branches": 25, "order": 3, "init_splits": 20, "region_split": False},
    "output": "out",
}

CAR_PRESET: dict[str, Any] = {
    "model": {"name": "car", "horizon": 50, "params": {"kp": 1.0, "substeps": 5},
              "track": {"start": [0.0, 0.0], "corner": [0.0, 6.0], "end": [20.0, 6.0], "half_width": 1.0,
                        "lookahead": 1.5}},
    "noise": {"bands": [
        {"region": [[-2.0, 2.0], [4.0, 8.0], [0.0, 5.0], [-2 * math.pi, 2 * math.pi]], "sigma": 0.02},
        {"region": "domain", "sigma": 0.002},
    ]},
    "splits": {"n_reg": 2000, "n_conf": 4000, "n_test": 2000},
    "alpha": 0.05,
    "seed": 0,
    "ga": {"budgets": [1, 2, 0, 0], "population": 100, "generations": 30, "gamma": 0.925, "dynamic": True},
    "reach": {"max_branches": 100, "order": 3, "init_splits": [2, 5, 1, 1], "region_split": False},
    "output": "out",
}

PRESETS = {"mc": MC_PRESET, "mountain-car": MC_PRESET, "car": CAR_PRESET}

_GA_KEYS = {"budgets", "population", "generations", "p_cross_cuts", "p_cross_alpha", "p_mut_cuts", "p_mut_alpha",
            "gamma", "min_alpha", "dynamic"}
_REACH_KEYS = {"max_branches", "order", "eps", "frac", "init_splits", "rebase_every", "max_vars", "branch_cap",
               "sweep_tol", "split_dim", "region_split"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    raw: dict
    model: Any
    noise: NoiseProfile
    n_reg: int
    n_conf: int
    n_test: int
    alpha: float
    seed: int
    ga: dict
    reach: dict
    output: Path
    walls: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.model.horizon

    def ga_config(self, dynamic: bool | None = None, seed: int | None = None) -> GAConfig:
        kw = {k: v for k, v in self.ga.items() if k in _GA_KEYS}
        if dynamic is not None:
            kw["dynamic"] = dynamic
        return GAConfig(alpha=self.alpha, seed=self.seed if seed is None else seed, **kw)

    def reach_config(self, max_branches: int | None = None, seed: int | None = None) -> ReachConfig:
        kw = {k: v for k, v in self.reach.items() if k in _REACH_KEYS and k != "region_split"}
        if max_branches is not None:
            kw["max_branches"] = max_branches
        return ReachConfig(horizon=self.horizon, seed=self.seed if seed is None else seed, **kw)

    @property
    def region_split(self) -> bool:
        return bool(self.reach.get("region_split", True))


def load_raw(source: str | Path | None) -> dict:
    """Read a config file, or a preset when ``source`` names one and no such file exists."""
    if source is None:
        raise ConfigError("no config given (a file path or one of: " + ", ".join(sorted(PRESETS)) + ")")
    path = Path(source)
    if not path.exists():
        if str(source) in PRESETS:
            return copy.deepcopy(PRESETS[str(source)])
        raise ConfigError(f"config file {source} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data


def build(raw: dict, seed: int | None = None, output: str | Path | None = None) -> PipelineConfig:
    if "model" not in raw or "name" not in raw["model"]:
        raise ConfigError("config needs model.name")
    name = raw["model"]["name"]
    if name not in PRESETS:
        raise ConfigError(f"unknown model {name!r}")
    merged = _merge(PRESETS[name], raw)
    # an explicit noise section replaces the preset's instead of merging into it
    if "noise" in raw:
        merged["noise"] = copy.deepcopy(raw["noise"])
    if seed is not None:
        merged["seed"] = int(seed)
    if output is not None:
        merged["output"] = str(output)
    try:
        model = _model(merged["model"])
        noise = _noise(merged["noise"], model)
        splits = merged["splits"]
        n_reg, n_conf, n_test = (int(splits[k]) for k in ("n_reg", "n_conf", "n_test"))
        alpha = float(merged["alpha"])
        cfg = PipelineConfig(merged, model, noise, n_reg, n_conf, n_test, alpha, int(merged["seed"]),
                             dict(merged.get("ga", {})), dict(merged.get("reach", {})), Path(merged["output"]),
                             _walls(merged, model))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc
    _validate(cfg)
    return cfg


def load(source, seed: int | None = None, output=None) -> PipelineConfig:
    return build(load_raw(source), seed, output)


def _box(value, default: Box) -> Box:
    if value is None or value == "domain":
        return default
    return Box.from_intervals(value)


def _model(sec: dict):
    params = dict(sec.get("params", {}))
    name = sec["name"]
    if name == "mountain-car":
        m = MountainCar(**params)
    else:
        track = LTrack(**{k: tuple(v) if isinstance(v, list) else v for k, v in sec.get("track", {}).items()})
        m = KinematicCar(track=track, **params)
    if "domain" in sec:
        m.domain = _box(sec["domain"], m.domain)
    if "x0" in sec:
        m.x0 = _box(sec["x0"], m.x0)
    if "horizon" in sec:
        m.horizon = int(sec["horizon"])
    return m


def _noise(sec: dict, model) -> NoiseProfile:
    if "two_regime" in sec:
        t = sec["two_regime"]
        return two_regime_profile(model.domain, int(t.get("dim", 0)), tuple(t["band"]), float(t["sigma_low"]),
                                  float(t.get("ratio", 10.0)), t.get("dist", "truncated-gaussian"))
    if "bands" in sec:
        bands = [NoiseBand(_box(b.get("region"), model.domain), float(b["sigma"]), b.get("dist", "truncated-gaussian"))
                 for b in sec["bands"]]
        return NoiseProfile(bands, model.out_dim)
    if "sigma" in sec:
        return NoiseProfile([NoiseBand(model.domain, float(sec["sigma"]), sec.get("dist", "truncated-gaussian"))],
                            model.out_dim)
    raise ConfigError("noise section needs one of: two_regime, bands, sigma")


def _walls(merged: dict, model) -> list:
    if merged.get("walls") is not None:
        return [tuple(tuple(map(float, p)) for p in seg) for seg in merged["walls"]]
    track = getattr(model, "track", None)
    return list(track.walls) if track is not None else []


def _validate(cfg: PipelineConfig):
    for name in ("n_reg", "n_conf", "n_test"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"split size {name} must be positive")
    if not 0.0 < cfg.alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if not cfg.model.domain.contains_box(cfg.model.x0):
        raise ConfigError("model.x0 must lie inside the model domain")
    if cfg.model.horizon < 1:
        raise ConfigError("horizon must be >= 1")
    budgets = cfg.ga.get("budgets")
    if budgets is None or len(budgets) != cfg.model.domain.ndim:
        raise ConfigError("ga.budgets needs one entry per state dimension")
    try:
        cfg.ga_config()
        cfg.reach_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for b in cfg.noise.bands:
        if b.region.ndim != cfg.model.domain.ndim:
            raise ConfigError("noise band regions must match the state dimension")
    # every domain corner and centre must be covered by some band
    probe = np.vstack([cfg.model.domain.lo, cfg.model.domain.hi, cfg.model.domain.mid])
    try:
        cfg.noise.band_index(probe)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def dump(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=True)
