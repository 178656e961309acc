"""Run configuration and its flat ``key = value`` file format.

Example file::

    # comments start with '#'
    task = mnist_sum
    semiring = topk:3
    interplay = reasoner
    epochs = 3
    lr = 0.003

Unset fields fall back to per-task defaults.  Command-line flags override
file values.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional

from nesy import errors
from nesy.provenance import SemiringSpec, parse_semiring

TASKS = ("mnist_sum", "shapes", "toy_ner", "math_inference")
INTERPLAY_MODES = ("reasoner", "soft-constraint", "sampling", "primal-dual")
SUPERVISION = ("both", "conjunction")


@dataclass
class RunConfig:
    task: str = "mnist_sum"
    semiring: Optional[SemiringSpec] = None
    interplay: str = "reasoner"
    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    lr: Optional[float] = None
    seed: int = 0
    data_dir: Optional[str] = None
    out_dir: str = "runs"
    train_size: Optional[int] = None
    test_size: Optional[int] = None
    sample_count: int = 64
    dual_lr: float = 0.01
    supervision: str = "both"
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.semiring, str):
            self.semiring = parse_semiring(self.semiring)
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise errors.ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if self.interplay not in INTERPLAY_MODES:
            raise errors.ConfigError(f"unknown interplay mode {self.interplay!r}")
        if self.supervision not in SUPERVISION:
            raise errors.ConfigError(f"unknown supervision {self.supervision!r}")
        for name in ("epochs", "batch_size", "lr", "train_size", "test_size", "sample_count", "dual_lr"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise errors.ConfigError(f"{name} must be positive, got {value}")
        if self.seed < 0:
            raise errors.ConfigError(f"seed must be non-negative, got {self.seed}")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        out = dataclasses.asdict(self)
        out["semiring"] = str(self.semiring) if self.semiring is not None else None
        return out


_FIELD_TYPES = {
    "epochs": int, "batch_size": int, "seed": int, "train_size": int, "test_size": int,
    "sample_count": int, "lr": float, "dual_lr": float,
}


def coerce(key, value):
    """Convert one textual setting to the field's type."""
    names = {f.name for f in dataclasses.fields(RunConfig)}
    key = key.replace("-", "_")
    if key not in names:
        raise errors.ConfigError(f"unknown config key {key!r}")
    if value is None:
        return key, None
    if key == "semiring":
        return key, parse_semiring(str(value))
    kind = _FIELD_TYPES.get(key)
    if kind is not None and isinstance(value, str):
        try:
            value = kind(value)
        except ValueError:
            raise errors.ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None
    return key, value


def parse_config_text(text) -> dict:
    settings = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise errors.ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        k, v = coerce(key, value)
        settings[k] = v
    return settings


def load_config(path=None, **overrides) -> RunConfig:
    settings = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                settings.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise errors.ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    for key, value in overrides.items():
        if value is not None:
            k, v = coerce(key, value)
            settings[k] = v
    return RunConfig(**settings)
