"""Flat dotted-key configuration (``frontend.hop = 128``) for the command line.

Files are TOML; nested tables are flattened to dotted keys, and any key not
listed in :data:`DEFAULTS` is rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .autoencoder import TrainConfig
from .errors import ConfigError
from .frontend import FrontendConfig
from .patches import PatchGridSpec

DEFAULTS = {
    "frontend.sample_rate": 16000,
    "frontend.n_fft": 512,
    "frontend.hop": 128,
    "frontend.win_length": 512,
    "frontend.n_mels": 80,
    "frontend.fmin": 0.0,
    "frontend.fmax": None,
    "frontend.log_floor": 1e-5,
    "grid.patch_t": 4,
    "grid.patch_f": 4,
    "grid.pad_value": None,
    "model.k": 4096,
    "model.latent_dim": 16,
    "model.hidden": 64,
    "model.identity_mode": False,
    "train.lr_peak": 3e-4,
    "train.warmup_steps": 20,
    "train.total_steps": 400,
    "train.beta1": 0.9,
    "train.beta2": 0.95,
    "train.weight_decay": 0.01,
    "train.batch_size": 8,
    "train.commitment_beta": 0.25,
    "train.kmeans_iters": 50,
    "decode.griffin_lim_iters": 32,
    "seed": 0,
}


def _flatten(table: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


@dataclass
class CliConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    explicit: set = field(default_factory=set)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "CliConfig":
        cfg = cls()
        if path is not None:
            try:
                text = Path(path).read_text()
                parsed = _flatten(tomllib.loads(text))
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            cfg.update(parsed)
        if overrides:
            cfg.update(overrides)
        cfg.frontend, cfg.grid, cfg.train  # validate eagerly
        return cfg

    def update(self, entries: dict) -> None:
        unknown = sorted(set(entries) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in entries.items():
            default = DEFAULTS[key]
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(f"{key} must be true or false")
            if isinstance(default, int) and not isinstance(default, bool) and not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer")
            self.values[key] = value
            self.explicit.add(key)

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    @property
    def frontend(self) -> FrontendConfig:
        try:
            return FrontendConfig(**self.section("frontend"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def grid(self) -> PatchGridSpec:
        try:
            return PatchGridSpec(**self.section("grid"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def train(self) -> TrainConfig:
        params = self.section("train")
        params.pop("kmeans_iters")
        try:
            return TrainConfig(seed=self.values["seed"], **params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self) -> dict:
        return dict(sorted(self.values.items()))
