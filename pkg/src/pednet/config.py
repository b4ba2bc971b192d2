"""Pipeline configuration: nested dataclasses loaded from TOML."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigError, PednetError
from .pedestrianfer import CrossingCostWeights, HypothesisConfig
from .raster import RasterStyle
from .refine import RefineParams


@dataclass
class HypothesisSection:
    default_offset: float = 4.0
    regime: str = "auto"
    outer_sidewalks: bool = True
    candidate_step: float = 1.0
    search_radius: float = 25.0
    w_dist: float = 1.0
    w_len: float = 1.0
    w_ang: float = 1.0
    curb_fracs: list = field(default_factory=lambda: [0.25, 0.75])
    corner_radius: float = 15.0
    highway_include: list | None = None
    planarize: bool = False

    def build(self) -> HypothesisConfig:
        return HypothesisConfig(
            default_offset=self.default_offset,
            regime=self.regime,
            outer_sidewalks=self.outer_sidewalks,
            candidate_step=self.candidate_step,
            search_radius=self.search_radius,
            weights=CrossingCostWeights(self.w_dist, self.w_len, self.w_ang),
            curb_fracs=tuple(self.curb_fracs),
            corner_radius=self.corner_radius,
        )


@dataclass
class RasterSection:
    resolution: float = 0.5
    point_radius: float = 2.0
    sidewalk_halfwidth: float = 1.5
    crossing_halfwidth: float = 1.5
    corner_bulb_halfwidth: float = 2.0
    class_precedence: list = field(default_factory=lambda: ["background", "sidewalk", "corner_bulb", "crossing"])
    blur_sigma: float = 4.0  # pixels, synthetic masks only
    margin: float = 30.0  # meters added around the street extent

    def build(self) -> RasterStyle:
        return RasterStyle(
            point_radius=self.point_radius,
            line_halfwidth={
                "sidewalk": self.sidewalk_halfwidth,
                "crossing": self.crossing_halfwidth,
                "corner_bulb": self.corner_bulb_halfwidth,
            },
            class_precedence=tuple(self.class_precedence),
        )


@dataclass
class RefineSection:
    iterations: int = 300
    a: float | None = None
    c: float = 1.0
    A_stab: float | None = None
    alpha: float = 0.602
    gamma: float = 0.101
    prune_threshold: float = 0.5
    det_min: float = 0.25
    det_max: float = 4.0
    first_step: float = 2.0
    confidence_halfwidth: float = 1.5

    def build(self, seed: int) -> RefineParams:
        return RefineParams(
            iterations=self.iterations,
            a=self.a,
            c=self.c,
            A_stab=self.A_stab,
            alpha=self.alpha,
            gamma=self.gamma,
            prune_threshold=self.prune_threshold,
            det_bounds=(self.det_min, self.det_max),
            first_step=self.first_step,
            seed=seed,
        )


@dataclass
class EvalSection:
    tol: float = 3.0
    coverage: float = 0.7
    step: float = 0.5
    iou_thresh: float = 0.5
    d_road: float = 1.0


@dataclass
class TilesSection:
    template: str = ""
    cache_dir: str | None = None
    zoom: int = 20
    max_workers: int = 4


@dataclass
class SyntheticSection:
    delete_frac: float = 0.1
    jitter: float = 5.0


@dataclass
class PipelineConfig:
    origin: list | None = None
    seed: int = 0
    jobs: int = 1
    hypothesis: HypothesisSection = field(default_factory=HypothesisSection)
    raster: RasterSection = field(default_factory=RasterSection)
    refine: RefineSection = field(default_factory=RefineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    tiles: TilesSection = field(default_factory=TilesSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)

    def validate(self) -> "PipelineConfig":
        try:
            self.hypothesis.build()
            self.raster.build()
            self.refine.build(self.seed)
        except (ValueError, TypeError, PednetError) as exc:
            raise ConfigError(str(exc)) from None
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.raster.resolution <= 0 or self.raster.blur_sigma < 0:
            raise ConfigError("raster resolution must be positive and blur_sigma non-negative")
        if not self.eval.tol > 0 or not 0 < self.eval.coverage <= 1 or not 0 < self.eval.iou_thresh <= 1:
            raise ConfigError("invalid eval tolerances")
        if self.origin is not None and len(self.origin) != 2:
            raise ConfigError("origin must be [lon, lat]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path + key!r}")
        f = known[key]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{path}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _parse_value(text: str) -> Any:
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key.sub=value`` strings; values are parsed as TOML when possible."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-table")
        node[parts[-1]] = _parse_value(text.strip())
    return data


def load_config(path=None, overrides: list[str] = ()) -> PipelineConfig:
    data: dict = {}
    if path is not None:
        try:
            data = tomli.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"bad TOML in {path}: {exc}") from None
    apply_overrides(data, list(overrides))
    try:
        cfg = _build(PipelineConfig, data, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()
