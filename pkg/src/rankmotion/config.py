"""Flat ``section.key = value`` configuration files.

Values are JSON literals (numbers, ``true``/``false``, ``null``, lists,
quoted strings); anything that does not parse as JSON is kept as a bare
string. ``#`` starts a comment line.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .density import PenaltyConfig
from .multiscale import RegistrationParams
from .phantom import PhantomSpec


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in values.items())


def section(values: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}


def _build(cls, values: dict, where: str, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(sorted(unknown))}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _flatten(obj, prefix: str, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        out[f"{prefix}.{f.name}"] = list(v) if isinstance(v, tuple) else v
    return out


@dataclass
class RunConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    preprocess_gamma: float = 0.0
    preprocess_scale: float = 1.0
    register: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        # output.* keys are written by the commands into manifests and ignored here
        known = ("phantom.", "registration.", "penalty.", "preprocess.", "register.", "evaluate.", "output.")
        stray = [k for k in values if not k.startswith(known)]
        if stray:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(stray))}")
        penalty = _build(PenaltyConfig, section(values, "penalty"), "penalty")
        reg = _build(RegistrationParams, section(values, "registration"), "registration", penalty=penalty)
        ph = _build(PhantomSpec, section(values, "phantom"), "phantom")
        pre = section(values, "preprocess")
        unknown = set(pre) - {"gamma", "scale"}
        if unknown:
            raise ConfigError(f"unknown preprocess keys: {', '.join(sorted(unknown))}")
        return cls(ph, reg, float(pre.get("gamma", 0.0)), float(pre.get("scale", 1.0)),
                   section(values, "register"), section(values, "evaluate"))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(load_config(path))

    def to_dict(self) -> dict:
        out = {}
        out.update(_flatten(self.phantom, "phantom"))
        out.update(_flatten(self.registration, "registration", skip=("penalty",)))
        out.update(_flatten(self.registration.penalty, "penalty"))
        out["preprocess.gamma"] = self.preprocess_gamma
        out["preprocess.scale"] = self.preprocess_scale
        out.update({f"register.{k}": v for k, v in self.register.items()})
        out.update({f"evaluate.{k}": v for k, v in self.evaluate.items()})
        return out
