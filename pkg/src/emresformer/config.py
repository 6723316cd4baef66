"""Run configuration: one JSON document covering model, training, rain and metrics.

Every leaf is addressable by its dotted path (``model.em.iterations``), both
in the JSON file and as a command-line override.  Unknown keys are errors.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .blocks import LmrbConfig
from .em import EmConfig
from .errors import ConfigError
from .metrics import SsimParams
from .model import ModelConfig
from .rain import StreakParams
from .train import TrainConfig

PRESETS = ("desk", "full")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rain: StreakParams = field(default_factory=StreakParams)
    metrics: SsimParams = field(default_factory=SsimParams)

    @classmethod
    def preset(cls, name: str) -> "RunConfig":
        if name == "desk":
            return cls(model=ModelConfig.desk(), train=TrainConfig.desk())
        if name == "full":
            return cls()
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, doc: dict, base: "RunConfig | None" = None) -> "RunConfig":
        """Build from a (possibly partial) document layered over ``base``."""
        merged = (base or cls()).to_dict()
        _merge(merged, doc, "")
        try:
            model = dict(merged["model"])
            model["em"] = EmConfig(**model["em"])
            model["lmrb"] = LmrbConfig(**model["lmrb"])
            return cls(model=ModelConfig(**model), train=TrainConfig(**merged["train"]),
                       rain=StreakParams(**merged["rain"]), metrics=SsimParams(**merged["metrics"]))
        except TypeError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def override(self, path: str, text: str) -> "RunConfig":
        """Return a copy with the leaf at dotted ``path`` parsed from ``text``."""
        doc = self.to_dict()
        keys = path.split(".")
        node = doc
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown configuration key {path!r}")
            node = node[k]
        if not isinstance(node, dict) or keys[-1] not in node or isinstance(node[keys[-1]], dict):
            raise ConfigError(f"unknown configuration key {path!r}")
        node[keys[-1]] = parse_value(text, node[keys[-1]], path)
        return RunConfig.from_dict(doc)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _merge(dst: dict, src: dict, prefix: str) -> None:
    if not isinstance(src, dict):
        raise ConfigError(f"configuration section {prefix or '<root>'} must be an object")
    for k, v in src.items():
        path = f"{prefix}{k}"
        if k not in dst:
            raise ConfigError(f"unknown configuration key {path!r}")
        if isinstance(dst[k], dict):
            _merge(dst[k], v, path + ".")
        else:
            dst[k] = v


def parse_value(text: str, current, path: str = ""):
    """Parse ``text`` into the type of ``current`` (lists are comma separated)."""
    try:
        if isinstance(current, bool):
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, list):
            kind = type(current[0]) if current else float
            return [kind(t) for t in text.split(",") if t.strip()]
        if isinstance(current, str):
            return text
        if text.strip().lower() in ("none", "null"):
            return None
        return json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r} for {path or 'value'}") from exc


def load_config(path=None, preset: str | None = None, overrides: list | None = None) -> RunConfig:
    """Preset, then JSON file, then dotted overrides ``[(path, text), ...]``."""
    cfg = RunConfig.preset(preset) if preset else RunConfig()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = RunConfig.from_dict(doc, base=cfg)
    for key, text in overrides or ():
        cfg = cfg.override(key, text)
    return cfg


def leaf_paths(cfg: RunConfig | None = None) -> list:
    """Every overridable dotted path, in document order."""
    out = []

    def walk(node, prefix):
        for k, v in node.items():
            if isinstance(v, dict):
                walk(v, f"{prefix}{k}.")
            else:
                out.append(f"{prefix}{k}")

    walk((cfg or RunConfig()).to_dict(), "")
    return out
