"""Flat ``key = value`` run configuration with dotted keys.

Precedence, highest first: command-line overrides, config file, the
``D2V_SEED`` environment variable (for ``seed`` only), built-in defaults.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import fields
from pathlib import Path

from .memnet import ModelConfig, TrainConfig
from .syngen import GenConfig

SEED_ENV = "D2V_SEED"


class ConfigError(ValueError):
    """Usage-level configuration problem (unknown key, bad value, malformed file)."""


# key -> (default, kind, element kind, nullable)
def _schema():
    schema = {"seed": (0, "int", None, False)}

    def add(prefix, cls, skip=("seed",)):
        inst = cls()
        for f in fields(cls):
            if f.name in skip:
                continue
            value = getattr(inst, f.name)
            schema[f"{prefix}.{f.name}"] = _describe(prefix, f.name, value)

    add("gen", GenConfig)
    add("model", ModelConfig)
    add("train", TrainConfig)
    schema.update({
        "experiment.model": ("doctor2vec", "str", None, False),
        "experiment.mode": ("standard", "str", None, False),
        "experiment.seeds": ((0, 1, 2), "tuple", "int", False),
        "experiment.train_filter": (None, "str", None, True),
        "experiment.test_filter": (None, "str", None, True),
        "paths.corpus": (None, "str", None, True),
        "paths.checkpoint": (None, "str", None, True),
        "paths.results": (None, "str", None, True),
    })
    return schema


_NULLABLE_TUPLES = {"gen.target_bin_distribution": "float", "gen.country_weights": "float"}
_NULLABLE_STR = {"model.text_path"}


def _describe(prefix, name, value):
    key = f"{prefix}.{name}"
    if key in _NULLABLE_TUPLES:
        return (value, "tuple", _NULLABLE_TUPLES[key], True)
    if key in _NULLABLE_STR:
        return (value, "str", None, True)
    if isinstance(value, bool):
        return (value, "bool", None, False)
    if isinstance(value, int):
        return (value, "int", None, False)
    if isinstance(value, float):
        return (value, "float", None, False)
    if isinstance(value, str):
        return (value, "str", None, False)
    if isinstance(value, tuple):
        elem = type(value[0]).__name__ if value else "int"
        return (value, "tuple", elem, False)
    raise TypeError(f"unsupported config field {key}")


SCHEMA = _schema()
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _scalar(text, kind, key):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {text!r}") from None


def parse_value(key, text):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    _, kind, elem, nullable = SCHEMA[key]
    text = text.strip()
    if nullable and text.lower() in ("none", "null", ""):
        return None
    if kind == "tuple":
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ConfigError(f"{key}: expected a comma-separated list")
        return tuple(_scalar(p, elem, key) for p in parts)
    return _scalar(text, kind, key)


def format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        try:
            values[key.strip()] = parse_value(key.strip(), value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


class RunConfig:
    """Merged configuration; every key of ``SCHEMA`` has a value."""

    def __init__(self, values=None):
        self.values = {k: spec[0] for k, spec in SCHEMA.items()}
        for k, v in (values or {}).items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            self.values[k] = v

    def __getitem__(self, key):
        return self.values[key]

    def section(self, prefix):
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def gen_config(self):
        return GenConfig(seed=self["seed"], **self.section("gen"))

    def model_config(self):
        return ModelConfig(seed=self["seed"], **self.section("model"))

    def train_config(self):
        return TrainConfig(seed=self["seed"], **self.section("train"))

    def dumps(self):
        return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(self.values.items()))

    def hash(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def load_config(path=None, overrides=None, environ=None):
    """Merge defaults, ``D2V_SEED``, an optional file and ``overrides`` (key -> text)."""
    environ = os.environ if environ is None else environ
    values = {}
    if environ.get(SEED_ENV, "").strip():
        try:
            values["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        values.update(parse_config_text(text, str(path)))
    for key, text in (overrides or {}).items():
        values[key] = parse_value(key, text) if isinstance(text, str) else text
    return RunConfig(values)
