"""Run configuration: dataclass of all training knobs plus a flat key=value file format."""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path


class Strategy(str, enum.Enum):
    """How the combined teacher signal for each triple is chosen."""

    REINFORCED = "reinforced"
    CONF_TEACHER = "conf_teacher"
    BEST_TEACHER = "best_teacher"
    BEST_STRATEGY = "best_strategy"
    TEACHER_AVG = "teacher_avg"


class KdVariant(str, enum.Enum):
    """Which distillation objective the student is trained with."""

    NDKD = "ndkd"
    DKD = "dkd"
    VANILLA = "vanilla"
    NEKD_ONLY = "nekd_only"
    NNKD_ONLY = "nnkd_only"
    NONE = "none"


@dataclass
class TrainConfig:
    """All knobs for teacher pre-training and student training.

    ``dim`` is the complex embedding dimension: one embedding vector holds
    2*dim reals.  ``gamma`` weighs the distillation term in the student
    objective, ``tau`` is the softmax temperature used only by the
    distillation terms, and ``alpha``/``beta`` weigh the neighbor and
    non-neighbor halves of the decoupled loss.
    """

    dim: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    gamma: float = 2.0
    tau: float = 4.0
    alpha: float = 1.0
    beta: float = 1.0
    policy_hidden: int = 1024
    policy_lr: float = 1e-3
    reward_pos: float = 1.0
    reward_neg: float = -10.0
    strategy: Strategy = Strategy.REINFORCED
    kd_variant: KdVariant = KdVariant.NDKD
    standardize_state: bool = True
    temperature_sq_scale: bool = False
    l2_weight: float = 0.0
    missing_rate: float = 0.0
    eval_every: int = 1
    cache_teacher_logits: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.strategy, str) and not isinstance(self.strategy, Strategy):
            self.strategy = Strategy(self.strategy)
        if isinstance(self.kd_variant, str) and not isinstance(self.kd_variant, KdVariant):
            self.kd_variant = KdVariant(self.kd_variant)
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        for name in ("gamma", "alpha", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValueError(f"missing_rate must be in [0, 1], got {self.missing_rate}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["strategy"] = self.strategy.value
        out["kd_variant"] = self.kd_variant.value
        return out

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)


_BOOL_FIELDS = {"standardize_state", "temperature_sq_scale", "cache_teacher_logits"}
_INT_FIELDS = {"dim", "batch_size", "epochs", "seed", "policy_hidden", "eval_every"}


def _coerce(name: str, raw: str):
    if name in _BOOL_FIELDS:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean config value {name}={raw!r}")
    if name in _INT_FIELDS:
        return int(raw)
    if name == "strategy":
        return Strategy(raw.strip())
    if name == "kd_variant":
        return KdVariant(raw.strip())
    return float(raw)


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines (# starts a comment) into a kwargs dict."""
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw.strip())
    return out


def load_config(path: str | Path, **overrides) -> TrainConfig:
    """Build a TrainConfig from a config file, applying keyword overrides last."""
    kwargs = parse_config_text(Path(path).read_text(encoding="utf-8"))
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kwargs)
