"""Run configuration: every module config in one tree, TOML file + ``--set`` overrides.

Keys are dotted paths into the tree, e.g. ``fusion.cap``, ``grasp.weights.approach``,
``train.lr``, ``synth.width``.  Precedence: defaults < file < command line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .nn.train import TrainConfig
from .pipeline import PipelineConfig
from .scene import SynthesisParams
from .selfsup import AugmentConfig, FilterConfig, HarvestConfig, MiningConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    synth: SynthesisParams = field(default_factory=SynthesisParams)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    retrain_fraction: float = 0.2

    # shortcuts so keys like "fusion.cap" work without the "pipeline." prefix
    ALIASES = {"leaf": "pipeline.leaf", "grasp": "pipeline.grasp", "fusion": "pipeline.fusion"}

    def harvest(self) -> HarvestConfig:
        p = self.pipeline
        return HarvestConfig(p.leaf, p.grasp, self.augment, self.mining, self.filter, self.seed)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=1, sort_keys=True, default=list) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _coerce(old, text, key: str):
    """Parse ``text`` to the type of the current value ``old``."""
    if isinstance(text, str):
        raw = text.strip()
    else:
        raw = text
    try:
        if isinstance(old, bool):
            if isinstance(raw, bool):
                return raw
            if str(raw).lower() in ("1", "true", "yes", "on"):
                return True
            if str(raw).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(old, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if isinstance(old, float):
            return float(raw)
        if old is None:
            if isinstance(raw, str):
                return None if raw.lower() in ("none", "null", "") else float(raw)
            return raw
        if isinstance(old, tuple):
            items = raw if isinstance(raw, (list, tuple)) else [s for s in str(raw).strip("()[] ").split(",") if s.strip()]
            proto = old[0] if old else 0.0
            return tuple(_coerce(proto, x, key) for x in items)
        if isinstance(old, str):
            return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {text!r} as {type(old).__name__}") from None
    raise ConfigError(f"{key}: not an overridable value")


def set_path(obj, path: list[str], value, full_key: str):
    name = path[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {full_key!r}")
    cur = getattr(obj, name)
    if len(path) == 1:
        if dataclasses.is_dataclass(cur):
            raise ConfigError(f"{full_key!r} is a section, not a value")
        return replace(obj, **{name: _coerce(cur, value, full_key)})
    return replace(obj, **{name: set_path(cur, path[1:], value, full_key)})


def apply_override(cfg: RunConfig, key: str, value) -> RunConfig:
    head, _, rest = key.partition(".")
    if head in RunConfig.ALIASES:
        key = RunConfig.ALIASES[head] + ("." + rest if rest else "")
    return set_path(cfg, key.split("."), value, key)


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out += _flatten(v, key + ".")
        else:
            out.append((key, v))
    return out


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            data = tomllib.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {p} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        for key, value in _flatten(data):
            cfg = apply_override(cfg, key, value)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like key=value")
        cfg = apply_override(cfg, key.strip(), value)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    try:
        cfg.pipeline.fusion.validate()
        cfg.train.validate()
        cfg.synth.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg
