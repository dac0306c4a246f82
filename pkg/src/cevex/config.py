"""Run configuration: defaults, config-file parsing, and validation.

Config files are flat `key = value` text; every field can also be overridden
by a CLI flag of the same name.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

STRATEGIES = ("full", "fine-tuning", "joint-training")


class ConfigError(ValueError):
    """Bad configuration value or malformed config file."""


@dataclass
class RunConfig:
    # Data: either a corpus path or the synthetic generator below.
    corpus: str | None = None
    output_dir: str = "runs/latest"
    num_tasks: int = 5
    train_frac: float = 0.7
    dev_frac: float = 0.1
    permutation_seed: int = 0

    synth_types: int = 20
    synth_max_count: int = 200
    synth_min_count: int = 5
    synth_vocab: int = 120
    synth_multi_type_prob: float = 0.35
    synth_negative_ratio: float = 0.25
    synth_arguments: bool = True
    synth_seed: int = 13

    # Model.
    encoder_layers: int = 2
    encoder_heads: int = 2
    encoder_dim: int = 32
    feature_dim: int = 512
    max_len: int = 64
    dropout: float = 0.2
    model_seed: int = 0

    # Optimization.
    batch_size: int = 8
    epochs: int = 10
    warmup_epochs: int = 1
    lr_encoder: float = 5e-5
    lr_classifier: float = 5e-5
    lr_arguments: float = 5e-5
    lr_entities: float = 3e-5

    # Continual machinery.
    memory_size: int = 10
    tau: float = 0.8
    alpha: float = 1.0
    beta: float = 1.0
    attention_depth: int = 3  # layers averaged for in-context attention
    long_tail_fraction: float = 0.8
    strategy: str = "full"
    da: bool = True
    afd: bool = True
    spd: bool = True
    pkd: bool = True
    pkt: bool = True
    run_arguments: bool = True

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 < self.tau <= 1:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if self.memory_size < 0:
            raise ConfigError("memory_size must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable_dict(self) -> dict:
        """Config identity for reproducibility checks; the output path is not
        part of a run's identity."""
        d = self.to_dict()
        d.pop("output_dir")
        return d


def _coerce(raw: str, annotation: str, key: str):
    raw = raw.strip()
    if annotation in ("str | None", "Optional[str]"):
        return None if raw.lower() in ("none", "null", "") else raw
    if annotation == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if annotation == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if annotation == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def parse_config_file(path: str | Path) -> dict:
    """Parse `key = value` lines ('#' starts a comment) into typed values."""
    annotations = {f.name: str(f.type) for f in fields(RunConfig)}
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in annotations:
                raise ConfigError(f"{path}: line {lineno}: unknown option {key!r}")
            out[key] = _coerce(raw, annotations[key], key)
    return out


def load_run_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        values.update(parse_config_file(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def write_config_file(config: RunConfig, path: str | Path) -> None:
    lines = [f"{key} = {value}" for key, value in config.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
