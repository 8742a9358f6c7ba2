"""Experiment configuration: JSON file + command-line overrides.

Every field of :class:`ExperimentConfig` can appear in the config file
and be overridden by a flag of the same name.  Validation happens before
any compute: paths must exist and head counts must divide their embedding
widths (window for feature heads, channel count for sequence heads).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import N_CHANNELS
from .errors import ConfigurationError
from .model import MODES
from .training import TrainConfig

SWEEPABLE = ("feature_heads", "sequence_heads", "window", "r_max", "mode")


@dataclass
class ExperimentConfig:
    train_path: str = ""
    test_path: str = ""
    truth_path: str = ""
    k_conditions: int = 1
    window: int = 30
    r_max: float = 125.0
    feature_heads: int = 5
    sequence_heads: int = 4
    mode: str = "F+T"
    lstm_hidden: int = 100
    lstm_layers: int = 3
    mlp_hidden: int = 100
    dropout: float = 0.5
    learning_rate: float = 0.0002
    batch_size: int = 128
    early_stop_patience: int = 50
    max_epochs: int = 500
    validation_fraction: float = 0.1
    clip_test_rul: bool = True
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    # -- construction -----------------------------------------------------
    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = set(raw) - set(cls.field_names())
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def override(self, **updates) -> "ExperimentConfig":
        """New config with the given non-None fields replaced."""
        clean = {k: v for k, v in updates.items() if v is not None}
        unknown = set(clean) - set(self.field_names())
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return dataclasses.replace(self, **clean)

    # -- derived views ------------------------------------------------------
    def effective_heads(self) -> tuple[int, int]:
        """(feature, sequence) head counts after applying the mode.

        0 means the block is disabled: mode L disables both, A forces a
        single feature head, F disables the sequence block.  A configured
        head count of 0 likewise disables its block.
        """
        fh = self.feature_heads
        sh = self.sequence_heads
        if self.mode == "L":
            return 0, 0
        if self.mode == "A":
            return 1, 0
        if self.mode == "F":
            return fh, 0
        return fh, sh

    def resolved_mode(self) -> str:
        """Mode after folding head-count zeros into block disabling."""
        fh, sh = self.effective_heads()
        if fh == 0:
            return "L"
        if sh == 0:
            return "A" if fh == 1 and self.mode == "A" else "F"
        return self.mode

    def validate(self, require_paths: bool = True) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.r_max <= 0:
            raise ConfigurationError(f"r_max must be positive, got {self.r_max}")
        if self.k_conditions < 1:
            raise ConfigurationError(f"k_conditions must be >= 1, got {self.k_conditions}")
        if not self.seeds:
            raise ConfigurationError("seed list is empty")
        fh, sh = self.effective_heads()
        if fh and self.window % fh != 0:
            raise ConfigurationError(
                f"feature head count {fh} does not divide window length {self.window}"
            )
        if sh and N_CHANNELS % sh != 0:
            raise ConfigurationError(
                f"sequence head count {sh} does not divide channel count {N_CHANNELS}"
            )
        if require_paths:
            for label in ("train_path", "test_path", "truth_path"):
                value = getattr(self, label)
                if not value:
                    raise ConfigurationError(f"{label} is not set")
                if not Path(value).exists():
                    raise ConfigurationError(f"{label} does not exist: {value}")
        # TrainConfig re-checks its own numeric ranges.
        self.train_config(self.seeds[0])

    # -- conversions --------------------------------------------------------
    def train_config(self, seed: int) -> TrainConfig:
        fh, sh = self.effective_heads()
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            early_stop_patience=self.early_stop_patience,
            max_epochs=self.max_epochs,
            validation_fraction=self.validation_fraction,
            r_max=self.r_max,
            window=self.window,
            feature_heads=fh,
            sequence_heads=sh,
            seed=seed,
        )

    def model_kwargs(self) -> dict:
        fh, sh = self.effective_heads()
        return {
            "n_features": N_CHANNELS,
            "window": self.window,
            "mode": self.resolved_mode(),
            "feature_heads": max(fh, 1),
            "sequence_heads": max(sh, 1),
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "mlp_hidden": self.mlp_hidden,
            "dropout": self.dropout,
        }

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SweepSpec:
    """One swept parameter, its values, and repetitions per value."""

    parameter: str
    values: list
    repetitions: int
    base: ExperimentConfig

    def validate(self) -> None:
        if self.parameter not in SWEEPABLE:
            raise ConfigurationError(
                f"sweep parameter must be one of {SWEEPABLE}, got {self.parameter!r}"
            )
        if not self.values:
            raise ConfigurationError("sweep needs at least one value")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        for value in self.values:
            self.config_for(value).validate(require_paths=False)

    def config_for(self, value) -> ExperimentConfig:
        if self.parameter == "mode":
            return self.base.override(mode=str(value))
        if self.parameter == "r_max":
            return self.base.override(r_max=float(value))
        return self.base.override(**{self.parameter: int(value)})

    def seed_for(self, repetition: int) -> int:
        seeds = self.base.seeds
        if repetition < len(seeds):
            return seeds[repetition]
        return seeds[0] + repetition
