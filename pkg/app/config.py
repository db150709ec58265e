# app/config.py
import json
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError


class Settings(BaseModel):
    """
    Every numeric default of the synthesis stack lives here so experiments are
    declarative: a JSON file can override any field, and a handful of
    environment variables override the file.
    """

    # pyramid construction
    gaussian_sigma: float = Field(0.8, gt=0)
    gaussian_radius: int = Field(1, ge=1)
    downsample_mode: Literal["gaussian", "mean"] = "gaussian"
    upsample_order: Literal["nearest", "trilinear", "cubic-spline"] = "trilinear"

    # hash synthesis
    nbhd_size: Literal[3, 5] = 3
    radius: int = Field(2, ge=0)
    levels: int = Field(2, ge=1)
    fallback: Literal["random", "keep_coarse", "majority"] = "random"
    # which template coordinate a neighbor-key match copies
    neighbor_match: Literal["first", "closest"] = "first"
    seed: int = Field(0, ge=0, lt=2**64)
    # "interp" skips matching: cubic-spline upsampling only
    backend: Literal["hash", "kdtree", "interp"] = "hash"

    # kd-tree baseline
    pca_dims: int = Field(20, ge=1)

    # parallelism
    parallel: Literal["serial", "shared", "partitioned"] = "serial"
    threads: int = Field(1, ge=1)

    # post-processing
    morph_radius: int = Field(0, ge=0)

    # warnings
    hit_rate_floor: float = Field(0.8, ge=0, le=1)
    ball_size_warning: int = Field(5000, ge=1)

    # job service
    mongo_uri: str = "mongodb://localhost:27017/synthesis"
    mongo_db: str = "synthesis"
    celery_broker_url: str = "redis://localhost:6379/0"

    # logging
    log_level: str = "INFO"
    log_file: Optional[str] = "synth.log"


ENV_OVERRIDES = {
    "SYNTH_THREADS": "threads",
    "MONGO_URI": "mongo_uri",
    "CELERY_BROKER_URL": "celery_broker_url",
    "SYNTH_LOG_LEVEL": "log_level",
    "SYNTH_LOG_FILE": "log_file",
}


def load_settings(path: Optional[str] = None) -> Settings:
    """
    Builds Settings from defaults, then the optional JSON file, then the
    environment. Raises ValueError naming the bad field on invalid input.
    """
    values = {}
    if path:
        try:
            values.update(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"Cannot read config file {path}: {e}") from e

    for env_name, field_name in ENV_OVERRIDES.items():
        env_value = os.getenv(env_name)
        if env_value:
            values[field_name] = env_value

    try:
        return Settings(**values)
    except ValidationError as e:
        raise ValueError(f"Invalid configuration: {e}") from e


settings = load_settings(os.getenv("SYNTH_CONFIG"))
