"""
Run configuration: one JSON file, validated with pydantic, plus .env settings.

Environment (read through python-dotenv):
    QPMEL_LOG_LEVEL   logging level name, default INFO
    QPMEL_DATA_DIR    base directory for relative dataset paths,
                      default the config file's directory
"""
import hashlib
import json
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from data import CLASS_PRESETS, fetch_idx
from errors import ConfigurationError

SEED_CONSUMERS = ("encoder.init", "episodes.train", "episodes.eval", "shots.eval", "data.synthetic", "data.split")


def derive_seed(master: int, consumer: str) -> int:
    """First 8 bytes (little endian) of SHA-256 over '{master}:{consumer}'."""
    digest = hashlib.sha256(f"{master}:{consumer}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def log_level() -> str:
    load_dotenv()
    return os.getenv("QPMEL_LOG_LEVEL", "INFO").upper()


class SyntheticSpec(BaseModel):
    n_classes: int = Field(4, ge=2)
    dim: int = Field(8, ge=1)
    per_class: int = Field(60, ge=2)
    separation: float = Field(6.0, ge=0)
    noise_sd: float = Field(1.0, ge=0)


class PreprocessStep(BaseModel):
    mode: Literal["flatten", "downsample", "standardize"]
    factor: int = Field(1, ge=1)


IDX_FILES = ("images", "labels", "test_images", "test_labels")


class IdxDownload(BaseModel):
    url: str = Field(..., pattern=r"^https?://")
    sha256: str = Field(..., pattern=r"^[0-9a-f]{64}$")


class DatasetSpec(BaseModel):
    source: Literal["idx", "synthetic"] = "synthetic"
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    preset: Optional[str] = None
    classes: Optional[List[int]] = None
    preprocessing: List[PreprocessStep] = Field(default_factory=list)
    test_fraction: float = Field(0.3, gt=0, lt=1)
    fetch: Dict[Literal["images", "labels", "test_images", "test_labels"], IdxDownload] = Field(default_factory=dict)

    @field_validator("preset")
    def known_preset(cls, v):
        if v is not None and v not in CLASS_PRESETS:
            raise ValueError(f"unknown preset '{v}', expected one of {sorted(CLASS_PRESETS)}")
        return v

    @model_validator(mode="after")
    def check_source(self):
        if self.source == "idx" and (self.images is None or self.labels is None):
            raise ValueError("idx datasets need both 'images' and 'labels'")
        if (self.test_images is None) != (self.test_labels is None):
            raise ValueError("'test_images' and 'test_labels' go together")
        if self.preset is not None and self.classes is not None:
            raise ValueError("give either 'preset' or 'classes', not both")
        unset = [name for name in self.fetch if getattr(self, name) is None]
        if unset:
            raise ValueError(f"fetch entries {unset} have no matching path")
        return self

    def selected_classes(self) -> Optional[List[int]]:
        if self.preset is not None:
            return list(CLASS_PRESETS[self.preset])
        return self.classes

    def input_paths(self) -> List[str]:
        if self.source != "idx":
            return []
        return [getattr(self, name) for name in IDX_FILES if getattr(self, name) is not None]


class EncoderSpec(BaseModel):
    layer_dims: List[int] = Field(..., min_length=1)
    num_qubits: int = Field(..., ge=1)
    activation: Literal["relu", "tanh", "linear"] = "relu"

    @field_validator("layer_dims")
    def positive_dims(cls, v):
        if any(d < 1 for d in v):
            raise ValueError("layer widths must be positive")
        return v


class TrainingSpec(BaseModel):
    n_way: int = Field(4, ge=2)
    k_shot: int = Field(5, ge=1)
    q_queries: int = Field(5, ge=1)
    episodes: int = Field(500, ge=0)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    temperature: float = Field(1.0, gt=0)
    similarity: Literal["pmef_train", "pmef"] = "pmef_train"
    log_every: int = Field(50, ge=1)


class EvaluationSpec(BaseModel):
    episodes: int = Field(150, ge=2)
    n_way: Optional[int] = Field(None, ge=2)
    k_shot: Optional[int] = Field(None, ge=1)
    q_queries: Optional[int] = Field(None, ge=1)
    mode: Literal["classical", "quantum", "both"] = "classical"
    shots: int = Field(100_000, ge=1)


class OutputSpec(BaseModel):
    checkpoint: str = "runs/model.qpmel"
    metrics: str = "runs/metrics.jsonl"
    qasm: Optional[str] = None


class RunConfig(BaseModel):
    seed: int = Field(0, ge=0)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    encoder: EncoderSpec
    training: TrainingSpec = Field(default_factory=TrainingSpec)
    evaluation: EvaluationSpec = Field(default_factory=EvaluationSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def check_consistency(self):
        ds = self.dataset
        if ds.source == "synthetic" and not ds.preprocessing and self.encoder.layer_dims[0] != ds.synthetic.dim:
            raise ValueError(
                f"encoder input width {self.encoder.layer_dims[0]} does not match synthetic dim {ds.synthetic.dim}"
            )
        available = ds.synthetic.n_classes if ds.source == "synthetic" else None
        selected = ds.selected_classes()
        if selected is not None:
            available = len(selected)
        for section, n_way in (("training", self.training.n_way), ("evaluation", self.evaluation.n_way)):
            if available is not None and n_way is not None and n_way > available:
                raise ValueError(f"{section}.n_way = {n_way} exceeds the {available} available classes")
        return self

    def eval_shape(self):
        ev, tr = self.evaluation, self.training
        return ev.n_way or tr.n_way, ev.k_shot or tr.k_shot, ev.q_queries or tr.q_queries


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply 'section.key=value' overrides in place; values are JSON when they parse."""
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"override '{item}' is not of the form section.key=value")
        parts = key.split(".")
        node = raw
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"override '{item}': '{part}' is not a section")
            node = child
        node[parts[-1]] = _parse_value(value)
    return raw


def _format_validation(path: Path, error: ValidationError) -> str:
    lines = [f"{path}: invalid configuration"]
    for err in error.errors():
        field = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"  {field}: {err['msg']}")
    return "\n".join(lines)


def _resolve_inputs(config: RunConfig, config_path: Path) -> None:
    base = Path(os.getenv("QPMEL_DATA_DIR") or config_path.parent)
    ds = config.dataset
    for name in IDX_FILES:
        value = getattr(ds, name)
        if value is None or ds.source != "idx":
            continue
        resolved = Path(value) if Path(value).is_absolute() else base / value
        if not resolved.exists() and name in ds.fetch:
            download = ds.fetch[name]
            fetch_idx(download.url, resolved, download.sha256)
        if not resolved.exists():
            raise FileNotFoundError(f"dataset file not found: {resolved}")
        setattr(ds, name, str(resolved))


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> RunConfig:
    load_dotenv()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")

    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a JSON object")

    apply_overrides(raw, overrides)
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(_format_validation(path, e))

    _resolve_inputs(config, path)
    return config
