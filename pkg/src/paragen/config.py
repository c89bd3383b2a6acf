"""Run configuration: dimension presets, training hyperparameters, validation.

Configs travel as plain JSON objects. Validation is strict: unknown keys are
rejected by name so a typo in a config file fails loudly instead of silently
falling back to a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

# Special token ids, fixed for every vocabulary.
PAD_ID = 0
START_ID = 1
END_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")

# Continue/stop states emitted by the sentence-level head.
CONTINUE = 0
STOP = 1


class ConfigError(ValueError):
    """A config file or override failed validation."""


@dataclass(frozen=True)
class Dims:
    """Layer widths for the generator and both critics."""

    feat: int
    embed: int
    para_hidden: int
    sent_hidden: int
    word_hidden: int
    critic_hidden: int
    critic_embed: int


# "desk" is sized for laptop-scale experiments and the test suite; "paper" is
# the full-scale configuration; "micro" is a fast preset for loop-heavy tests.
PRESETS: dict[str, Dims] = {
    "desk": Dims(feat=64, embed=32, para_hidden=64, sent_hidden=128,
                 word_hidden=64, critic_hidden=64, critic_embed=32),
    "paper": Dims(feat=4096, embed=512, para_hidden=512, sent_hidden=1024,
                  word_hidden=512, critic_hidden=512, critic_embed=512),
    "micro": Dims(feat=16, embed=12, para_hidden=16, sent_hidden=24,
                  word_hidden=16, critic_hidden=16, critic_embed=12),
}


@dataclass
class TrainConfig:
    """Hyperparameters for adversarial training and decoding."""

    preset: str = "desk"
    mode: str = "fully"            # "fully" | "semi"
    lambda_adv: float = 0.001      # weight on the policy-gradient loss
    n_critic: int = 5              # critic updates per generator update
    n_rollouts: int = 5            # Monte-Carlo completions per word position
    lr: float = 1e-4
    clip: float = 0.01             # critic weight clip bound
    batch: int = 1
    s_max: int = 6                 # sentence cap per paragraph
    n_max: int = 30                # word cap per sentence
    beam_width: int = 2
    epochs: int = 1
    seed: int = 0
    use_reward_baseline: bool = False

    def dims(self) -> Dims:
        return PRESETS[self.preset]

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        if self.mode not in ("fully", "semi"):
            raise ConfigError(f"mode must be 'fully' or 'semi', got {self.mode!r}")
        for name in ("n_critic", "n_rollouts", "batch", "s_max", "n_max", "beam_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lr", "clip"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if not (isinstance(self.lambda_adv, (int, float)) and self.lambda_adv >= 0):
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_adv!r}")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.use_reward_baseline, bool):
            raise ConfigError("use_reward_baseline must be a boolean")


# JSON key -> dataclass attribute. "lambda" is a Python keyword, hence the map.
_JSON_KEYS = {
    "preset": "preset",
    "mode": "mode",
    "lambda": "lambda_adv",
    "n_critic": "n_critic",
    "n_rollouts": "n_rollouts",
    "lr": "lr",
    "clip": "clip",
    "batch": "batch",
    "s_max": "s_max",
    "n_max": "n_max",
    "beam_width": "beam_width",
    "epochs": "epochs",
    "seed": "seed",
    "use_reward_baseline": "use_reward_baseline",
}
_ATTR_TO_JSON = {v: k for k, v in _JSON_KEYS.items()}


def config_from_dict(obj: dict) -> TrainConfig:
    """Build a validated TrainConfig from a parsed JSON object."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    kwargs = {}
    for key, value in obj.items():
        if key not in _JSON_KEYS:
            raise ConfigError(f"unknown config field {key!r}")
        kwargs[_JSON_KEYS[key]] = value
    cfg = TrainConfig(**kwargs)
    # Integer-typed floats such as 1.0 for epochs are rejected by validate().
    cfg.validate()
    return cfg


def config_to_dict(cfg: TrainConfig) -> dict:
    return {_ATTR_TO_JSON[f.name]: getattr(cfg, f.name) for f in fields(cfg)}


def load_config(path: str | Path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(obj)
