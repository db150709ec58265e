import json
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, computed_field, model_validator

from app.config import Settings, settings
from app.errors import InvalidInputError

ParallelMode = Literal["serial", "shared", "partitioned"]


def parse_parallel(text: str) -> Tuple[str, int]:
    """'serial', 'shared:P' or 'partitioned:P' -> (mode, P)."""
    mode, _, count = text.partition(":")
    if mode == "serial" and not count:
        return "serial", 1
    if mode in ("shared", "partitioned") and count.isdigit() and int(count) >= 1:
        return mode, int(count)
    raise InvalidInputError(f"parallel must be serial, shared:P or partitioned:P, got {text!r}")


class SynthesisConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    nbhd_size: Literal[3, 5] = settings.nbhd_size
    radius: int = Field(settings.radius, ge=0)
    fallback: Literal["random", "keep_coarse", "majority"] = settings.fallback
    neighbor_match: Literal["first", "closest"] = settings.neighbor_match
    levels: int = Field(settings.levels, ge=1)
    parallel: ParallelMode = settings.parallel
    workers: int = Field(settings.threads, ge=1)
    seed: int = Field(settings.seed, ge=0, lt=2**64)
    backend: Literal["hash", "kdtree", "interp"] = settings.backend
    pca_dims: int = Field(settings.pca_dims, ge=1)
    downsample_mode: Literal["gaussian", "mean"] = settings.downsample_mode
    gaussian_sigma: float = Field(settings.gaussian_sigma, gt=0)
    gaussian_radius: int = Field(settings.gaussian_radius, ge=1)
    upsample_order: Literal["nearest", "trilinear", "cubic-spline"] = settings.upsample_order

    @property
    def width(self) -> int:
        return self.nbhd_size**3

    @model_validator(mode="after")
    def check_ranges(self):
        if self.radius > self.width:
            raise ValueError(f"radius {self.radius} exceeds key width {self.width}")
        if self.pca_dims > self.width:
            raise ValueError(f"pca_dims {self.pca_dims} exceeds key width {self.width}")
        if self.parallel == "partitioned" and self.workers not in (1, 2, 4, 8):
            raise ValueError(f"partitioned mode needs 1, 2, 4 or 8 workers, got {self.workers}")
        return self

    @classmethod
    def build(cls, **overrides) -> "SynthesisConfig":
        try:
            return cls(**overrides)
        except ValidationError as e:
            raise InvalidInputError(f"Invalid synthesis config: {e}") from e

    @classmethod
    def from_settings(cls, source: Settings, **overrides) -> "SynthesisConfig":
        values = {
            "nbhd_size": source.nbhd_size,
            "radius": source.radius,
            "fallback": source.fallback,
            "neighbor_match": source.neighbor_match,
            "levels": source.levels,
            "parallel": source.parallel,
            "workers": source.threads,
            "seed": source.seed,
            "backend": source.backend,
            "pca_dims": source.pca_dims,
            "downsample_mode": source.downsample_mode,
            "gaussian_sigma": source.gaussian_sigma,
            "gaussian_radius": source.gaussian_radius,
            "upsample_order": source.upsample_order,
        }
        values.update(overrides)
        return cls.build(**values)


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    synthesis: SynthesisConfig = SynthesisConfig()
    # Downsample a full-resolution input `levels` times before synthesis.
    simulate_coarse: bool = True
    defective_path: Optional[str] = None
    ground_truth_path: Optional[str] = None
    implant_gt_path: Optional[str] = None
    denoise_keep: Union[Literal["largest_component"], int] = "largest_component"
    morph_radius: int = Field(settings.morph_radius, ge=0)
    mesh_format: Literal["stl_binary", "obj"] = "stl_binary"


class IndexStats(BaseModel):
    keys_actual: int = 0
    keys_neighbor: int = 0
    queries: int = 0
    hits_actual: int = 0
    hits_neighbor: int = 0
    fallbacks: int = 0
    bytes_index: int = 0
    bytes_neighbor_keys: int = 0
    bytes_features: int = 0
    d: int = 0

    @computed_field
    @property
    def hit_rate(self) -> float:
        if not self.queries:
            return 1.0
        return (self.hits_actual + self.hits_neighbor) / self.queries


class LevelStats(IndexStats):
    level: int
    dims: Tuple[int, int, int]
    backend: Literal["hash", "kdtree"] = "hash"
    mismatches_vs_template: int = 0


class MetricReport(BaseModel):
    dsc: float = Field(ge=0.0, le=1.0)
    hd_mm: Optional[float] = Field(default=None, ge=0.0)
    hd95_mm: Optional[float] = Field(default=None, ge=0.0)
    implant_dsc: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    implant_hd_mm: Optional[float] = Field(default=None, ge=0.0)
    hit_rate: List[float] = []
    bytes_index: int = 0
    bytes_features: int = 0
    levels: List[LevelStats] = []
    runtime_s: Dict[str, float] = {}

    @model_validator(mode="after")
    def check_hausdorff_order(self):
        if self.hd_mm is not None and self.hd95_mm is not None and self.hd95_mm > self.hd_mm:
            raise ValueError(f"hd95 {self.hd95_mm} exceeds hd {self.hd_mm}")
        return self

    def to_json(self, include_runtime: bool = False) -> str:
        """Sorted-key JSON; runtimes are left out unless asked for so reruns diff cleanly."""
        exclude = None if include_runtime else {"runtime_s"}
        return json.dumps(self.model_dump(mode="json", exclude=exclude), sort_keys=True, indent=2)


class RunRequest(BaseModel):
    input_path: str
    template_path: str
    out_dir: str
    config: PipelineConfig = PipelineConfig()


class RunResponse(BaseModel):
    id: str
    status: str
    result: Optional[Dict] = None  # Allow `None` for the result field
