"""Run configuration: flat key=value text, fully serialized with each run.

Every field maps to one CLI flag and one line in the config file, so a
run's provenance is a diff-able text file that re-runs to identical
artifacts. One seed drives every stochastic choice (classifier init, batch
shuffling); planted-encoder parameters live in the encoder spec string
because they define data, not run randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .aggregation import STRATEGIES
from .envelope import format_float
from .training import GAUSSIAN_WIDTH_DEFAULT

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""  # dataset manifest path
    encoder: str = "planted"  # planted[:k=v,...] | clip[:model=...]
    cache: str = ""  # embedding cache base path
    output_dir: str = "runs/out"
    grid_rows: int = 3
    grid_cols: int = 3
    zeta: float = 0.5
    strategy: str = "minmax"
    sigma_g: float = GAUSSIAN_WIDTH_DEFAULT
    eta: float = 1.0
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 0.1
    seed: int = 0
    hidden_dim: int = 0
    epsilon: float = 1e-6
    hard_labels: bool = False
    chain_through_sigmoid: bool = False
    eval_annotations: str = ""  # enables the optional eval-mAP history column
    histogram_bins: int = 10
    dump_similarities: bool = False  # also write per-image global+local vectors

    def validate(self) -> "RunConfig":
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigError("grid_rows and grid_cols must be at least 1")
        if not 0.0 <= self.zeta <= 1.0:
            raise ConfigError(f"zeta must lie in [0,1], got {self.zeta}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.sigma_g <= 0 or self.eta < 0 or self.learning_rate < 0:
            raise ConfigError("sigma_g must be positive; eta and learning_rate nonnegative")
        if self.epochs < 0 or self.batch_size < 1 or self.histogram_bins < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, histogram_bins >= 1 required")
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if not self.encoder.split(":", 1)[0] in ("planted", "clip"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        return self

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = format_float(value)
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value, known[key].type)
        return cls(**values)


def _coerce(key: str, text: str, typename) -> object:
    name = typename if isinstance(typename, str) else typename.__name__
    if name == "bool":
        lowered = text.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {text!r}")
    try:
        if name == "int":
            return int(text)
        if name == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc
    return text
