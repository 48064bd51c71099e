"""Run configuration: flat ``section.key = value`` files, env and command-line overrides.

Precedence, lowest first: dataclass defaults, config file, ``BATTKD_SECTION__KEY``
environment variables, ``--set section.key=value`` arguments. Unknown sections
or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .distill import KDConfig
from .experts import ExpertConfig
from .explain import LimeConfig
from .lora import LoraConfig
from .pipeline import DataConfig, PipelineConfig, PretrainConfig
from .timer import TimerConfig
from .train import FinetuneConfig

ENV_PREFIX = "BATTKD_"


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    data_dir: str = "data"
    ckpt_dir: str = "checkpoints"
    report_dir: str = "reports"
    workers: int = 1
    kinds: tuple[str, ...] = ("LinearDecomp", "PatchAttn", "SegRec")
    eval_windows: int = 20
    rollout_horizon: int = 192


@dataclass
class AblateSection:
    epochs: int = 3
    positions: tuple[str, ...] = ("q", "k", "v", "qk", "qv", "kv", "qkv")
    ranks: tuple[int, ...] = (2, 4, 8, 16)
    alphas: tuple[float, ...] = (4.0, 16.0, 32.0)
    lambdas: tuple[float, ...] = (0.0, 0.02, 0.1, 0.5)


def _section_factories():
    base = PipelineConfig()
    return {
        "run": RunSection,
        "data": DataConfig,
        "timer": TimerConfig,
        "pretrain": PretrainConfig,
        "lora": LoraConfig,
        "finetune": lambda: dataclasses.replace(base.finetune),
        "distill": KDConfig,
        "expert": ExpertConfig,
        "lime": LimeConfig,
        "ablate": AblateSection,
    }


@dataclass
class RunConfig:
    sections: dict = field(default_factory=lambda: {k: f() for k, f in _section_factories().items()})

    def __getattr__(self, name):
        try:
            return self.__dict__["sections"][name]
        except KeyError:
            raise AttributeError(name) from None

    def pipeline(self) -> PipelineConfig:
        s = self.sections
        return PipelineConfig(data=s["data"], timer=s["timer"], pretrain=s["pretrain"],
                              lora=s["lora"], finetune=s["finetune"], distill=s["distill"],
                              expert=s["expert"])

    def items(self):
        for sec, obj in self.sections.items():
            for f in fields(obj):
                yield f"{sec}.{f.name}", getattr(obj, f.name)

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.items())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def set(self, key: str, raw: str, source: str = "override"):
        sec, _, name = key.strip().partition(".")
        if sec not in self.sections or not name:
            raise ConfigError(f"{source}: unknown config section in {key!r}")
        obj = self.sections[sec]
        fmap = {f.name: f for f in fields(obj)}
        if name not in fmap:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        value = parse_value(raw, getattr(obj, name), fmap[name], key, source)
        try:
            self.sections[sec] = dataclasses.replace(obj, **{name: value})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{source}: {key}: {e}") from None


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _scalar(raw: str, kind, key, source):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{source}: {key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_value(raw: str, current, f, key, source):
    raw = raw.strip()
    if isinstance(current, tuple):
        kind = type(current[0]) if current else str
        return tuple(_scalar(x.strip(), kind, key, source) for x in raw.split(",") if x.strip())
    if current is None:
        # only optional floats default to None
        return None if raw.lower() in ("none", "") else _scalar(raw, float, key, source)
    kind = type(current)
    if kind is int and f.type in ("float", float):
        kind = float
    return _scalar(raw, kind, key, source)


def parse_text(text: str, source: str = "config") -> list[tuple[str, str, str]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {line!r}")
        k, v = line.split("=", 1)
        out.append((k.strip(), v.strip(), f"{source}:{lineno}"))
    return out


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        for k, v, src in parse_text(path.read_text(), str(path)):
            cfg.set(k, v, src)
    env = os.environ if env is None else env
    for name in sorted(env):
        if name.startswith(ENV_PREFIX):
            sec, sep, key = name[len(ENV_PREFIX):].partition("__")
            if not sep:
                raise ConfigError(f"env {name}: expected {ENV_PREFIX}SECTION__KEY")
            cfg.set(f"{sec.lower()}.{key.lower()}", env[name], f"env {name}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        k, v = item.split("=", 1)
        cfg.set(k, v, "--set")
    return cfg


__all__ = ["ENV_PREFIX", "ConfigError", "RunSection", "AblateSection", "RunConfig", "load_config",
           "parse_text", "format_value"]
