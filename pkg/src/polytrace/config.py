"""Run configuration: plain-text ``key = value`` files with a schema version.

Every tunable of the pipeline lives here with its recommended default; a
handful of core parameters are range-checked against their recommended
intervals unless ``allow_nonstandard`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

SCHEMA_VERSION = 1

# (low, high) recommended intervals for the core parameters
RECOMMENDED_RANGES = {
    "n_vertices": (64, 128),
    "peak_threshold": (0.05, 0.2),
    "max_detections": (200, 300),
    "vertex_threshold": (0.5, 0.7),
    "evolution_iterations": (2, 3),
    "match_distance_weight": (4.0, 6.0),
}


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION

    # contour and matching
    n_vertices: int = 64
    peak_threshold: float = 0.2
    max_detections: int = 200
    vertex_threshold: float = 0.6
    evolution_iterations: int = 2
    match_distance_weight: float = 5.0
    expansion_factor: float = 10.0
    loss_balance: float = 1.0 / 3.0

    # model sizes
    feature_channels: int = 8
    encoder_width: int = 128
    center_hidden: int = 32
    offset_hidden: int = 32

    # optimization: an initialization-only phase, then the whole network,
    # with two 1/5 learning-rate decays
    optimizer: str = "momentum"
    learning_rate: float = 0.01
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs_total: int = 12
    epochs_init: int = 2
    decay_epoch_1: int = 8
    decay_epoch_2: int = 11
    decay_factor: float = 0.2
    batch_scenes: int = 2

    # synthetic data
    frame_width: int = 128
    frame_height: int = 128
    min_buildings: int = 1
    max_buildings: int = 4
    size_min: float = 20.0
    size_max: float = 48.0
    noise_sigma: float = 2.5

    seed: int = 7
    allow_nonstandard: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {self.schema_version}")
        if self.n_vertices % 4 != 0:
            raise ValueError("n_vertices must be divisible by 4")
        if self.optimizer not in ("momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.allow_nonstandard:
            for key, (lo, hi) in RECOMMENDED_RANGES.items():
                value = getattr(self, key)
                if not lo <= value <= hi:
                    raise ValueError(
                        f"{key} = {value} outside the recommended range [{lo}, {hi}]"
                        " (set allow_nonstandard = true to override)"
                    )

    @property
    def frame_dims(self) -> tuple:
        return self.frame_width, self.frame_height

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; '#' starts a comment, unknown keys fail."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ValueError(f"line {lineno}: unknown configuration key {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())


_BOOLS = {"true": True, "false": False, "1": True, "0": False}


def _coerce(key, value):
    default = getattr(RunConfig, key, None)
    for f in fields(RunConfig):
        if f.name == key:
            default = f.default
    if isinstance(default, bool):
        try:
            return _BOOLS[value.lower()]
        except KeyError:
            raise ValueError(f"{key}: expected a boolean, got {value!r}") from None
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value
