"""Environment-based settings and flat key = value experiment files."""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from nrmf.engine.training import TrainConfig
from nrmf.errors import ConfigError

METHODS = ("nrmf", "vbmf")
DEFAULT_MNIST_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"


def get_data_dir() -> Path | None:
    """Dataset root fallback (NRMF_DATA_DIR). None when unset."""
    raw = os.environ.get("NRMF_DATA_DIR", "").strip()
    return Path(raw).resolve() if raw else None


def get_out_dir() -> Path:
    """Default output directory (NRMF_OUT_DIR, else ./nrmf-out)."""
    raw = os.environ.get("NRMF_OUT_DIR", "").strip()
    return Path(raw or "nrmf-out").resolve()


def get_mnist_url() -> str:
    """Base URL for fetch-mnist; must end with a slash."""
    raw = os.environ.get("NRMF_MNIST_URL", "").strip() or DEFAULT_MNIST_URL
    return raw if raw.endswith("/") else raw + "/"


def get_log_level() -> str:
    return os.environ.get("NRMF_LOG_LEVEL", "").strip().upper() or "INFO"


# Desk-scale training: 5 epochs on 5k MNIST images, fast enough for a laptop CPU.
DESK_TRAIN = TrainConfig(batch_size=64, lr=0.05, lr_decay_factor=0.1, lr_decay_every=5, epochs=5, alpha=1e-2, seed=0, p=0.95)


@dataclass(frozen=True)
class ExperimentSpec:
    model: str = "lenet5-desk"
    train: TrainConfig = field(default_factory=lambda: DESK_TRAIN)
    method: str = "nrmf"
    finetune_epochs: int = 2
    finetune_lr: float = 0.01
    train_samples: int = 5000
    test_samples: int = 1000
    data_dir: Path | None = None
    out_dir: Path = field(default_factory=get_out_dir)
    monitored: tuple[str, ...] = ()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.finetune_epochs < 0:
            raise ConfigError(f"finetune_epochs must be >= 0, got {self.finetune_epochs}")
        if not self.finetune_lr > 0:
            raise ConfigError(f"finetune_lr must be > 0, got {self.finetune_lr}")
        if self.train_samples < 0 or self.test_samples < 0:
            raise ConfigError("sample counts must be >= 0 (0 means the full split)")

    @property
    def p(self) -> float:
        return self.train.p

    def resolved_data_dir(self) -> Path:
        data_dir = self.data_dir or get_data_dir()
        if data_dir is None:
            raise ConfigError("no dataset directory: set data_dir in the config or NRMF_DATA_DIR")
        if not Path(data_dir).is_dir():
            raise ConfigError(f"dataset directory {data_dir} does not exist")
        return Path(data_dir)

    def finetune_config(self) -> TrainConfig:
        """Fine-tuning runs without the regularizer."""
        return replace(self.train, alpha=0.0, lr=self.finetune_lr, epochs=self.finetune_epochs)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["data_dir"] = str(self.data_dir) if self.data_dir else None
        out["out_dir"] = str(self.out_dir)
        out["monitored"] = list(self.monitored)
        return out


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}
_SPEC_KEYS = {f.name for f in fields(ExperimentSpec)} - {"train"}


def _convert(key: str, raw: str) -> Any:
    try:
        if key in ("batch_size", "lr_decay_every", "epochs", "seed", "finetune_epochs", "train_samples", "test_samples"):
            return int(raw)
        if key in ("lr", "lr_decay_factor", "alpha", "p", "finetune_lr"):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from e
    if key in ("data_dir", "out_dir"):
        return Path(raw).expanduser()
    if key == "monitored":
        return tuple(name.strip() for name in raw.split(",") if name.strip())
    return raw


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse flat 'key = value' lines; '#' starts a comment."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _TRAIN_KEYS and key not in _SPEC_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw.strip())
    return values


def load_config_file(path: Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text)


def build_spec(values: dict[str, Any] | None = None, **overrides: Any) -> ExperimentSpec:
    """ExperimentSpec from parsed config values; non-None overrides win."""
    merged = dict(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - set(_TRAIN_KEYS) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    train = replace(DESK_TRAIN, **{k: v for k, v in merged.items() if k in _TRAIN_KEYS})
    spec_values = {k: v for k, v in merged.items() if k in _SPEC_KEYS}
    return ExperimentSpec(train=train, **spec_values)
