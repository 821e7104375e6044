"""Run configuration: defaults, flat ``key = value`` files, CLI overrides.

Example file::

    # dyntile run config
    dataset = data/annotations.json
    policy = scaledV1
    tile_size = 640
    stride = 0.8
    adapter = external
    adapter_cmd = python -m my_model.serve --weights best.pt
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from .detect import DetectorAdapter, ExternalDetector, OracleConfig, OracleDetector, StubConfig, StubDetector
from .fusion import FusionConfig
from .pipeline import MODES, PipelineConfig
from .scalelaw import RecognitionSpec, build_ladder, load_policy


class ConfigError(ValueError):
    pass


ADAPTERS = ("oracle", "stub", "external")


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    images_dir: Optional[str] = None
    out: str = "out"
    workdir: Optional[str] = None

    tile_size: int = 640
    stride: float = 0.8
    bin_count: int = 6
    policy: str = "scaledV2"
    rec: float = 80.0
    obj: float = 0.48
    default_fov: float = 65.0

    overlap: float = 0.2
    mode: str = "dynamic"
    match_iou: float = 0.5
    conf_threshold: float = 0.25

    adapter: str = "oracle"
    adapter_cmd: str = ""
    adapter_timeout: float = 30.0
    on_error: str = "abort"
    stub_latency_ms: float = 0.0
    oracle_dropout: float = 0.0
    oracle_jitter: float = 0.0
    oracle_fp_rate: float = 0.0
    oracle_min_visibility: float = 0.9

    workers: int = 1
    seed: int = 0
    setup: str = ""

    min_visibility: float = 0.25
    train_tiles_per_dim: int = 2
    train_object_fraction: float = 0.8

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.adapter not in ADAPTERS:
            raise ConfigError(f"adapter must be one of {ADAPTERS}")
        if self.adapter == "external" and not self.adapter_cmd.strip():
            raise ConfigError("adapter=external needs adapter_cmd")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 < self.train_object_fraction <= 1:
            raise ConfigError("train_object_fraction must be in (0, 1]")
        if self.dataset is not None and not Path(self.dataset).exists():
            raise ConfigError(f"dataset {self.dataset} does not exist")
        if self.images_dir is not None and not Path(self.images_dir).is_dir():
            raise ConfigError(f"images_dir {self.images_dir} is not a directory")
        try:
            self.pipeline_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            ladder=build_ladder(self.tile_size, self.stride, self.bin_count),
            policy=load_policy(self.policy),
            spec=RecognitionSpec(self.rec, self.obj),
            overlap=self.overlap,
            fusion=FusionConfig(self.match_iou, self.conf_threshold),
            mode=self.mode,
            default_fov_deg=self.default_fov,
            on_error=self.on_error,
        )

    def oracle_config(self) -> OracleConfig:
        return OracleConfig(
            dropout_rate=self.oracle_dropout,
            jitter_px=self.oracle_jitter,
            false_positive_rate=self.oracle_fp_rate,
            rng_seed=self.seed,
            min_visibility=self.oracle_min_visibility,
        )

    def adapter_factory(self, ground_truth=None):
        if self.adapter == "oracle":
            if ground_truth is None:
                raise ConfigError("oracle adapter needs ground truth")
            shared = OracleDetector(ground_truth, self.oracle_config())
            return lambda: shared
        if self.adapter == "stub":
            shared = StubDetector(StubConfig(self.stub_latency_ms))
            return lambda: shared
        return lambda: ExternalDetector(self.adapter_cmd, self.adapter_timeout, self.workdir)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: Any) -> Any:
    f = _FIELDS[key]
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("Optional[str]"):
            return None if raw in ("", "none", "None") else str(raw)
        return str(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from e


def parse_config_text(text: str) -> Dict[str, Any]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults, then the file, then non-None overrides."""
    values: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_config_text(p.read_text()))
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = _coerce(k, v) if isinstance(v, str) else v
    return RunConfig(**values)
