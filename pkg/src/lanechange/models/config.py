"""Model configuration and the preset table."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

FAMILIES = ("I3D", "SlowFast", "X3D")

PRESETS = {
    "X3D": ("XS", "S", "M", "L", "DESK"),
    "I3D": ("R50", "DESK"),
    "SlowFast": ("R50", "R101", "DESK"),
}

# (family, preset) -> (frames, side) the published GFLOPs were measured at.
# SlowFast numbers are for the 8x8 schedule: 8 slow + 32 fast frames, alpha 4.
CANONICAL_INPUT = {
    ("X3D", "XS"): (4, 182),
    ("X3D", "S"): (13, 182),
    ("X3D", "M"): (16, 256),
    ("X3D", "L"): (16, 356),
    ("I3D", "R50"): (8, 256),
    ("SlowFast", "R50"): (32, 256),
    ("SlowFast", "R101"): (32, 256),
}
CANONICAL_ALPHA = {"SlowFast": 4}

# GFLOPs listed for each model next to its RGB accuracies.
REFERENCE_GFLOPS = {
    ("X3D", "XS"): 0.91,
    ("X3D", "S"): 2.96,
    ("X3D", "M"): 6.72,
    ("X3D", "L"): 26.64,
    ("I3D", "R50"): 37.53,
    ("SlowFast", "R50"): 65.71,
    ("SlowFast", "R101"): 127.20,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    family: str = "X3D"
    preset: str = "S"
    alpha: int = 8
    beta: float = 1 / 8
    temporal_pool_kernel: Optional[int] = None  # None: full temporal extent
    num_classes: int = 3
    input_frames: int = 32
    input_size: int = 224
    in_channels: int = 3
    dropout: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.preset not in PRESETS[self.family]:
            raise ConfigError(
                f"unknown {self.family} preset {self.preset!r}; expected one of "
                f"{PRESETS[self.family]}")
        if self.input_frames < 1 or self.input_size < 1:
            raise ConfigError("input_frames and input_size must be positive")
        if self.family == "SlowFast":
            if self.alpha < 1 or self.input_frames % self.alpha:
                raise ConfigError(
                    f"alpha={self.alpha} must divide input_frames={self.input_frames}")
            if not 0 < self.beta <= 1:
                raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        k = self.temporal_pool_kernel
        if k is not None and not 1 <= k <= self.temporal_extent:
            raise ConfigError(
                f"temporal_pool_kernel={k} outside [1, {self.temporal_extent}]")

    @property
    def temporal_extent(self) -> int:
        """Temporal length of the features entering the global pool."""
        if self.family == "I3D":
            return max(1, self.input_frames // 2)
        return self.input_frames

    @property
    def pool_kernel(self) -> int:
        return self.temporal_pool_kernel or self.temporal_extent

    @property
    def name(self) -> str:
        return f"{self.family}-{self.preset}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def canonical_config(family: str, preset: str, num_classes: int = 3) -> ModelConfig:
    """Paper-scale config at the input the reference GFLOPs were measured on."""
    frames, side = CANONICAL_INPUT[(family, preset)]
    alpha = CANONICAL_ALPHA.get(family, 8)
    return ModelConfig(family=family, preset=preset, alpha=alpha, input_frames=frames,
                       input_size=side, num_classes=num_classes)


# DESK SlowFast sees 16-frame clips, so the slow pathway gets every 4th frame
# and the fast pathway a quarter of the channels (eighths leave it 2 wide).
# The narrow DESK X3D head trains faster and more reliably without dropout.
DESK_DEFAULTS = {
    "SlowFast": {"alpha": 4, "beta": 1 / 4},
    "X3D": {"dropout": 0.0},
}


def desk_config(family: str, input_frames: int = 16, input_size: int = 64,
                **kw) -> ModelConfig:
    for key, value in DESK_DEFAULTS.get(family, {}).items():
        if kw.get(key) is None:
            kw[key] = value
    kw = {k: v for k, v in kw.items() if v is not None or k == "temporal_pool_kernel"}
    return ModelConfig(family=family, preset="DESK", input_frames=input_frames,
                       input_size=input_size, **kw)


def _coerce(value: str, typ):
    value = value.strip()
    if value.lower() in ("none", ""):
        return None
    if "int" in str(typ):
        return int(value)
    if "float" in str(typ):
        if "/" in value:
            num, den = value.split("/")
            return float(num) / float(den)
        return float(value)
    return value


def read_config(path: Union[str, Path], base: Optional[ModelConfig] = None) -> ModelConfig:
    """Read a ``key = value`` text file (``#`` comments) into a ModelConfig."""
    types = {f.name: f.type for f in fields(ModelConfig)}
    vals = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{path}: unknown key {key!r}")
        vals[key] = _coerce(value, types[key])
    base = base or ModelConfig()
    return replace(base, **vals)


def write_config(cfg: ModelConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in cfg.to_dict().items():
            fh.write(f"{k} = {v}\n")
