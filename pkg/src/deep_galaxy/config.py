"""Run configuration: a flat JSON file, overridden by command-line flags.

Precedence is flag > file > built-in default.  Architecture keys default
from the named profile; the training keys in ``REQUIRED_TRAIN_KEYS`` have
no silent default and must come from the file or a flag.
"""

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SplitSpec
from .errors import ConfigError
from .network import PROFILES, NetworkConfig, TrainConfig

NETWORK_KEYS = [f.name for f in fields(NetworkConfig)]
TRAIN_KEYS = ["learning_rate", "momentum", "batch_size", "epochs", "seed"]
SPLIT_KEYS = ["train_fraction", "val_fraction"]
REQUIRED_TRAIN_KEYS = TRAIN_KEYS
KNOWN_KEYS = set(NETWORK_KEYS) | set(TRAIN_KEYS) | set(SPLIT_KEYS) | {"profile"}
# keys a profile pins; a config may repeat them but not contradict them
PROFILE_KEYS = ("input_height", "input_width", "conv_kernel", "conv_stride", "conv_padding")
DEFAULT_PROFILE = "default64"


@dataclass(frozen=True)
class RunConfig:
    profile: str
    network: NetworkConfig
    train: TrainConfig
    split: SplitSpec


def read_config_file(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return values


def _int(key, v):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    return v


def _float(key, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    return float(v)


def resolve(values, overrides=None, require_train=True):
    """Build a :class:`RunConfig` from file values and flag overrides."""
    merged = dict(values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    profile = merged.get("profile", DEFAULT_PROFILE)
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    base = PROFILES[profile]
    for key in PROFILE_KEYS:
        if key in merged and _int(key, merged[key]) != getattr(base, key):
            raise ConfigError(f"{key}={merged[key]} contradicts profile {profile} ({key}={getattr(base, key)})")

    net_kwargs = {k: _int(k, merged[k]) for k in NETWORK_KEYS if k in merged}
    network = NetworkConfig(**{**base.to_dict(), **net_kwargs})

    if require_train:
        for key in REQUIRED_TRAIN_KEYS:
            if key not in merged:
                raise ConfigError(f"missing required config field: {key}")
    train_kwargs = {}
    for key in ("learning_rate", "momentum"):
        if key in merged:
            train_kwargs[key] = _float(key, merged[key])
    for key in ("batch_size", "epochs", "seed"):
        if key in merged:
            train_kwargs[key] = _int(key, merged[key])
    if "learning_rate" in train_kwargs and train_kwargs["learning_rate"] <= 0:
        raise ConfigError("learning_rate must be > 0")
    train = TrainConfig(**train_kwargs)

    split_kwargs = {k: _float(k, merged[k]) for k in SPLIT_KEYS if k in merged}
    try:
        split = SplitSpec(seed=train.seed, **split_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(profile, network, train, split)


def load_run_config(path=None, overrides=None, require_train=True):
    values = read_config_file(path) if path is not None else {}
    return resolve(values, overrides, require_train)
