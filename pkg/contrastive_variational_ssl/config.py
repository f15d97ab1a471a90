"""
Experiment configuration.

A config file is a flat list of `section.key = value` lines; `#` starts a
comment and blank lines are ignored. Every key has a default, so an empty
file is a valid config. The resolved config (every key, fixed order) is
echoed into each output directory and hashed into a fingerprint.
"""

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

from aws_lambda_powertools import Logger

from .constants import (
    DEFAULT_ADAMW_WEIGHT_DECAY,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA1,
    DEFAULT_BETA2,
    DEFAULT_CV_FOLDS,
    DEFAULT_EPS,
    DEFAULT_HIDDEN_DIMS,
    DEFAULT_LAMBDA1,
    DEFAULT_LAMBDA2,
    DEFAULT_LATENT_DIM,
    DEFAULT_LOG_INTERVAL,
    DEFAULT_LR,
    DEFAULT_MASK_PROB,
    DEFAULT_NOISE_SIGMA,
    DEFAULT_OPTIMIZER,
    DEFAULT_PROBE_LR,
    DEFAULT_PROBE_OPTIMIZER,
    DEFAULT_PROBE_STEPS,
    DEFAULT_PROJECTION_DIM,
    DEFAULT_SMOTE_K,
    DEFAULT_STEPS,
    DEFAULT_TAU,
    DEFAULT_TRAIN_FRACTION,
    DEFAULT_VAL_FRACTION,
    OPTIMIZER_KINDS,
    SERVICE_NAME,
)
from .errors import InvalidValue, ParseError, TableFileNotFound, UnknownKey

logger = Logger(service=SERVICE_NAME, child=True)

TRUE_WORDS = {"true", "yes", "1"}
FALSE_WORDS = {"false", "no", "0"}
DATA_SOURCES = ["csv", "blobs"]


@dataclass
class DataSection:
    source: str = "csv"
    path: Optional[str] = None
    schema_path: Optional[str] = None
    label_column: Optional[str] = None
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    val_fraction: float = DEFAULT_VAL_FRACTION
    stratify: bool = False
    blob_rows: int = 600
    blob_features: int = 16
    blob_classes: int = 3
    blob_std: float = 1.0
    blob_noise_features: int = 0
    blob_seed: int = 0


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class ModelSection:
    hidden_dims: List[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN_DIMS))
    latent_dim: int = DEFAULT_LATENT_DIM
    projection_dim: int = DEFAULT_PROJECTION_DIM


@dataclass
class LossSection:
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2
    tau: float = DEFAULT_TAU


@dataclass
class OptimizerSection:
    kind: str = DEFAULT_OPTIMIZER
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    # None resolves to 0.01 for adamw and 0 otherwise
    weight_decay: Optional[float] = None


@dataclass
class TrainingSection:
    steps: int = DEFAULT_STEPS
    batch_size: int = DEFAULT_BATCH_SIZE
    log_interval: int = DEFAULT_LOG_INTERVAL


@dataclass
class AugmentSection:
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    mask_prob: float = DEFAULT_MASK_PROB
    smote: bool = False
    smote_k: int = DEFAULT_SMOTE_K


@dataclass
class AblationSection:
    disable_contrastive: bool = False
    disable_variational: bool = False
    disable_augmentation: bool = False


@dataclass
class EvaluationSection:
    cv_folds: int = DEFAULT_CV_FOLDS
    probe_steps: int = DEFAULT_PROBE_STEPS
    probe_lr: float = DEFAULT_PROBE_LR
    probe_optimizer: str = DEFAULT_PROBE_OPTIMIZER


SECTION_TYPES = {
    "data": DataSection,
    "run": RunSection,
    "model": ModelSection,
    "loss": LossSection,
    "optimizer": OptimizerSection,
    "training": TrainingSection,
    "augment": AugmentSection,
    "ablation": AblationSection,
    "evaluation": EvaluationSection,
}


@dataclass
class ExperimentConfig:
    """
    Fully resolved experiment settings
    """

    data: DataSection = field(default_factory=DataSection)
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def __post_init__(self):
        # False when weight_decay was left to follow the optimizer kind
        self.weight_decay_explicit = self.optimizer.weight_decay is not None
        if self.optimizer.weight_decay is None:
            self.optimizer.weight_decay = DEFAULT_ADAMW_WEIGHT_DECAY if self.optimizer.kind == "adamw" else 0.0
        validate(self)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        """Render every key in fixed section order as `section.key = value` lines."""
        lines = []
        for section_name in SECTION_TYPES:
            section = getattr(self, section_name)
            for f in fields(section):
                lines.append(f"{section_name}.{f.name} = {_format_value(getattr(section, f.name))}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        """First 16 hex digits of the SHA-256 of the resolved text."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, overrides: Dict[str, Any]) -> "ExperimentConfig":
        """Return a new validated config with `section.key` values replaced.

        Args:
            overrides (Dict[str, Any]): Dotted key to value (typed or string)

        Returns:
            ExperimentConfig: New config; self is unchanged
        """
        values = _flatten(self)
        # weight decay re-resolves from the optimizer kind unless set explicitly
        if not self.weight_decay_explicit and "optimizer.weight_decay" not in overrides:
            values["optimizer.weight_decay"] = None
        for key, value in overrides.items():
            _split_key(key)
            values[key] = value
        return _build(values)


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _split_key(key: str):
    section_name, _, name = key.partition(".")
    section_type = SECTION_TYPES.get(section_name)
    if section_type is None:
        raise UnknownKey(f"unknown config section '{section_name}' in '{key}'")
    known = {f.name: f for f in fields(section_type)}
    if name not in known:
        raise UnknownKey(f"unknown config key '{key}'")
    return section_name, known[name]


def _flatten(config: ExperimentConfig) -> Dict[str, Any]:
    values = {}
    for section_name in SECTION_TYPES:
        section = getattr(config, section_name)
        for f in fields(section):
            value = getattr(section, f.name)
            values[f"{section_name}.{f.name}"] = list(value) if isinstance(value, list) else value
    return values


def _convert(key: str, annotation: Any, value: Any) -> Any:
    optional = annotation in (Optional[str], Optional[float])
    if isinstance(value, str):
        text = value.strip()
        if optional and text == "":
            return None
    else:
        text = None
    try:
        if annotation is bool:
            if isinstance(value, bool):
                return value
            word = str(value).strip().lower()
            if word in TRUE_WORDS:
                return True
            if word in FALSE_WORDS:
                return False
            raise ValueError(f"not a boolean: {value}")
        if annotation is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"not an integer: {value}")
            return int(text) if text is not None else int(value)
        if annotation in (float, Optional[float]):
            if value is None:
                return None
            return float(text) if text is not None else float(value)
        if annotation == List[int]:
            items = text.split(",") if text is not None else list(value)
            return [int(str(item).strip()) for item in items if str(item).strip() != ""]
        if value is None:
            return None
        return text if text is not None else str(value)
    except (TypeError, ValueError) as e:
        raise InvalidValue(f"{key}: {e}") from e


def _build(values: Dict[str, Any]) -> ExperimentConfig:
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTION_TYPES}
    for key, value in values.items():
        section_name, f = _split_key(key)
        sections[section_name][f.name] = _convert(key, f.type, value)
    return ExperimentConfig(**{name: SECTION_TYPES[name](**kwargs) for name, kwargs in sections.items()})


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise InvalidValue(f"{key}: {message}")


def validate(config: ExperimentConfig) -> None:
    """Check every range constraint, raising InvalidValue naming the key."""
    data = config.data
    _require(data.source in DATA_SOURCES, "data.source", f"must be one of {', '.join(DATA_SOURCES)}")
    _require(0.0 < data.train_fraction < 1.0, "data.train_fraction", "must be in (0, 1)")
    _require(0.0 < data.val_fraction < 1.0, "data.val_fraction", "must be in (0, 1)")
    _require(data.blob_rows >= 2, "data.blob_rows", "must be >= 2")
    _require(data.blob_features >= 1, "data.blob_features", "must be >= 1")
    _require(data.blob_classes >= 2, "data.blob_classes", "must be >= 2")
    _require(data.blob_std > 0, "data.blob_std", "must be > 0")
    _require(
        0 <= data.blob_noise_features < data.blob_features,
        "data.blob_noise_features",
        "must be >= 0 and below data.blob_features",
    )

    model = config.model
    _require(len(model.hidden_dims) >= 1, "model.hidden_dims", "needs at least one width")
    _require(all(h >= 1 for h in model.hidden_dims), "model.hidden_dims", "widths must be >= 1")
    _require(model.latent_dim >= 1, "model.latent_dim", "must be >= 1")
    _require(model.projection_dim >= 1, "model.projection_dim", "must be >= 1")

    loss = config.loss
    _require(loss.tau > 0, "loss.tau", "must be > 0")
    _require(loss.lambda1 >= 0, "loss.lambda1", "must be >= 0")
    _require(loss.lambda2 >= 0, "loss.lambda2", "must be >= 0")

    optimizer = config.optimizer
    _require(optimizer.kind in OPTIMIZER_KINDS, "optimizer.kind", f"must be one of {', '.join(OPTIMIZER_KINDS)}")
    _require(0.0 < optimizer.lr < 1.0, "optimizer.lr", "must be in (0, 1)")
    _require(0.0 <= optimizer.beta1 < 1.0, "optimizer.beta1", "must be in [0, 1)")
    _require(0.0 <= optimizer.beta2 < 1.0, "optimizer.beta2", "must be in [0, 1)")
    _require(optimizer.eps > 0, "optimizer.eps", "must be > 0")
    _require(optimizer.weight_decay >= 0, "optimizer.weight_decay", "must be >= 0")

    training = config.training
    _require(training.steps >= 1, "training.steps", "must be >= 1")
    _require(training.batch_size >= 2, "training.batch_size", "must be >= 2")
    _require(training.log_interval >= 1, "training.log_interval", "must be >= 1")

    augment = config.augment
    _require(augment.noise_sigma >= 0, "augment.noise_sigma", "must be >= 0")
    _require(0.0 <= augment.mask_prob < 1.0, "augment.mask_prob", "must be in [0, 1)")
    _require(augment.smote_k >= 1, "augment.smote_k", "must be >= 1")

    evaluation = config.evaluation
    _require(evaluation.cv_folds == 0 or evaluation.cv_folds >= 2, "evaluation.cv_folds", "must be 0 or >= 2")
    _require(evaluation.probe_steps >= 1, "evaluation.probe_steps", "must be >= 1")
    _require(0.0 < evaluation.probe_lr < 1.0, "evaluation.probe_lr", "must be in (0, 1)")
    _require(
        evaluation.probe_optimizer in OPTIMIZER_KINDS,
        "evaluation.probe_optimizer",
        f"must be one of {', '.join(OPTIMIZER_KINDS)}",
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse `section.key = value` lines into a validated config.

    Args:
        text (str): Config file content

    Returns:
        ExperimentConfig: Resolved config with defaults for absent keys

    Raises:
        ParseError: If a line has no '=' or no key
        UnknownKey: If a section or key does not exist
        InvalidValue: If a value cannot be converted or is out of range
    """
    values = _flatten(ExperimentConfig())
    values["optimizer.weight_decay"] = None
    seen = set()
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ParseError(f"expected 'section.key = value', got '{raw.strip()}'", line_number)
        if "." not in key:
            raise ParseError(f"key '{key}' has no section", line_number)
        if key in seen:
            raise ParseError(f"duplicate key '{key}'", line_number)
        _split_key(key)
        seen.add(key)
        values[key] = value.strip()
    return _build(values)


def load_config(path: str) -> ExperimentConfig:
    """Read and parse a config file."""
    if not os.path.isfile(path):
        raise TableFileNotFound(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        config = parse_config(f.read())
    logger.debug(f"Loaded config {path}", extra={"fingerprint": config.fingerprint()})
    return config
