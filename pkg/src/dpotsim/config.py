"""Flat ``key = value`` experiment configs.

Blank lines and ``#`` comments are ignored. Plain keys are :class:`FLConfig`
fields; dotted keys such as ``robustlr.vote_threshold`` set a parameter of
one aggregation rule. ``DPOT_SEED`` in the environment overrides every seed.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

from .defenses import DEFENSES
from .engine import FLConfig
from .errors import ConfigError

SEED_FIELDS = ("data_seed", "model_seed", "round_seed")
SEED_ENV = "DPOT_SEED"


def _scalar(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _typed(name: str, text: str, kind):
    kind = {"int": int, "float": float, "str": str}.get(kind, kind)
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r}") from exc
    return text


def parse_config(text: str, base: FLConfig | None = None) -> FLConfig:
    fields = {f.name: f.type for f in dataclasses.fields(FLConfig)}
    values: dict = {}
    rules: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if "." in key:
            rule, param = key.split(".", 1)
            if rule not in DEFENSES:
                raise ConfigError(f"line {lineno}: unknown rule namespace {rule!r}")
            rules.setdefault(rule, {})[param] = _scalar(val)
        elif key in fields and key != "rule_params":
            values[key] = _typed(key, val, fields[key])
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    cfg = dataclasses.replace(base or FLConfig(), **values)
    if rules:
        merged = {k: dict(v) for k, v in cfg.rule_params.items()}
        for rule, params in rules.items():
            merged.setdefault(rule, {}).update(params)
        cfg = dataclasses.replace(cfg, rule_params=merged)
    return apply_seed_override(cfg)


def apply_seed_override(cfg: FLConfig, environ=None) -> FLConfig:
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc
    return dataclasses.replace(cfg, **{f: seed for f in SEED_FIELDS})


def load_config(path) -> FLConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: FLConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        if f.name == "rule_params":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for rule in sorted(cfg.rule_params):
        for param, val in sorted(cfg.rule_params[rule].items()):
            lines.append(f"{rule}.{param} = {val}")
    return "\n".join(lines) + "\n"
