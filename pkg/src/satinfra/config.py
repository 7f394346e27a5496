"""Pipeline configuration.

The config file is YAML. Every section maps onto a dataclass below and
unknown keys are rejected. Relative paths resolve against the directory
holding the config file. ``dump_config(load_config(text))`` reproduces
a dumped config byte for byte.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .nn.unet import UnetConfig


@dataclass
class Paths:
    vectors: str = "vectors.geojson"
    truth_vectors: str = ""  # empty: evaluate against ``vectors``
    images: str = "images"
    nightlight: str = "nightlight.png"
    clusters: str = "clusters.csv"
    outputs: str = "out"


@dataclass
class Region:
    country: str = ""
    bbox: list = field(default_factory=lambda: [0.0, 0.0, 0.01, 0.01])  # min_lon, min_lat, max_lon, max_lat


@dataclass
class GridSection:
    regions: list = field(default_factory=list)  # of Region
    cell_km: float = 1.0
    tile_px: int = 400


@dataclass
class RasterizeSection:
    building_class: str = "building"
    road_class: str = "road"
    centroid_radius: int = 3
    road_width_px: float = 5.0


@dataclass
class PreprocessSection:
    pad: int = 8
    rescale_colors: bool = True
    augment: bool = True


@dataclass
class TrainSection:
    targets: list = field(default_factory=lambda: ["buildings", "roads"])
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 8
    momentum: float = 0.0
    dice_weight: float = 1.0
    ensemble_size: int = 3


@dataclass
class JudgeSection:
    targets: list = field(default_factory=lambda: ["roads"])
    alpha_max: float = 1.5
    rounds: int = 1
    keep_undefined: bool = False


@dataclass
class CountSection:
    thresholds: list = field(default_factory=lambda: [5, 10, 15, 25])
    threshold: float = 15.0
    road_threshold: float = 127.0
    min_blob_area: int = 4
    strict_matching: bool = True


@dataclass
class FeaturesSection:
    radius_km: float = 5.0
    quantiles: list = field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 0.9])
    min_cells: int = 1


@dataclass
class BenchmarkSection:
    labels: list = field(default_factory=lambda: ["wealth", "wealthpooled"])
    feature_sets: list = field(default_factory=lambda: ["buildings", "roads", "buildings_roads", "nightlight", "all"])
    models: list = field(default_factory=lambda: ["ridge", "rtree", "rtree_boosted", "rtree_bagged"])


@dataclass
class PipelineConfig:
    seed: int = 0
    jobs: int = 1
    paths: Paths = field(default_factory=Paths)
    grid: GridSection = field(default_factory=GridSection)
    rasterize: RasterizeSection = field(default_factory=RasterizeSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    unet: UnetConfig = field(default_factory=UnetConfig)
    train: TrainSection = field(default_factory=TrainSection)
    judge: JudgeSection = field(default_factory=JudgeSection)
    count: CountSection = field(default_factory=CountSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def validate(self):
        self.unet.validate()
        expected = self.grid.tile_px + 2 * self.preprocess.pad
        if self.unet.input_size != expected:
            raise ValueError(f"unet.input_size {self.unet.input_size} != tile_px + 2*pad = {expected}")
        if self.judge.rounds < 1:
            raise ValueError("judge.rounds must be >= 1")
        if self.train.ensemble_size < 1:
            raise ValueError("train.ensemble_size must be >= 1")
        if list(self.count.thresholds) != sorted(self.count.thresholds):
            raise ValueError("count.thresholds must be ascending")
        return self

    def path(self, name) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out(self) -> Path:
        return self.path("outputs")

    def regions(self):
        return [r if isinstance(r, Region) else Region(**r) for r in self.grid.regions]


_SECTIONS = {
    "paths": Paths,
    "grid": GridSection,
    "rasterize": RasterizeSection,
    "preprocess": PreprocessSection,
    "unet": UnetConfig,
    "train": TrainSection,
    "judge": JudgeSection,
    "count": CountSection,
    "features": FeaturesSection,
    "benchmark": BenchmarkSection,
}


def _build(cls, data, where):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data, base_dir=Path(".")) -> PipelineConfig:
    data = dict(data or {})
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key), key)
    if "grid" in kwargs:
        kwargs["grid"].regions = [_build(Region, r, "grid.regions") for r in kwargs["grid"].regions]
    for key in ("seed", "jobs"):
        if key in data:
            kwargs[key] = int(data.pop(key))
    if data:
        raise ValueError(f"unknown top-level config key(s): {sorted(data)}")
    return PipelineConfig(base_dir=Path(base_dir), **kwargs).validate()


def config_to_dict(cfg: PipelineConfig):
    out = {"seed": cfg.seed, "jobs": cfg.jobs}
    for key in _SECTIONS:
        out[key] = dataclasses.asdict(getattr(cfg, key))
    return out


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    return config_from_dict(yaml.safe_load(path.read_text()), base_dir=path.parent)


def parse_config(text, base_dir=Path(".")) -> PipelineConfig:
    return config_from_dict(yaml.safe_load(text), base_dir)


def config_hash(cfg: PipelineConfig) -> str:
    """Digest of every setting that can change results; ``jobs`` is left out."""
    data = config_to_dict(cfg)
    del data["jobs"]
    return hashlib.sha256(yaml.safe_dump(data, sort_keys=False).encode()).hexdigest()


def stage_seed(global_seed: int, stage: str) -> int:
    """Stable per-stage seed derived from the global seed and the stage name."""
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
