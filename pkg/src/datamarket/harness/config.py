"""Run configuration from INI-style files.

A config file has up to three sections; every key is optional::

    [scenario]
    name = inventory
    n_sellers = 8
    n_buyers = 500
    rho = 0.3
    mu_distribution = uniform

    [market]
    allocation = gaussian_noise
    sigma = 1.0
    epsilon = auto
    K = auto
    lambda = 0.6931471805599453

    [run]
    seed = 0

``DATAMARKET_SEED`` in the environment replaces ``[run] seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from enum import Enum

from ..core import InputError
from ..engine import AUTO, MarketConfig
from .scenarios import Scenario

SEED_ENV = "DATAMARKET_SEED"

# [market] keys that are routed into the nested specs
_NESTED = {
    "allocation": ("allocation", "kind"),
    "sigma": ("allocation", "sigma"),
    "predictor": ("predictor", "kind"),
    "ridge_lambda": ("predictor", "ridge_lambda"),
    "k": ("predictor", "k"),
    "gain": ("gain", "kind"),
    "similarity": ("similarity", "kind"),
    "hellinger_bins": ("similarity", "hellinger_bins"),
}
_RENAMED = {"lambda": "lam"}


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario = field(default_factory=Scenario)
    market: MarketConfig = field(default_factory=MarketConfig)
    seed: int = 0

    def scenario_for(self, **changes) -> Scenario:
        return dataclasses.replace(self.scenario, master_seed=self.seed, **changes)

    def market_for(self, **changes) -> MarketConfig:
        return dataclasses.replace(self.market, master_seed=self.seed, **changes)


def _coerce(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise InputError(f"not a boolean: {text!r}")
    if text.lower() == AUTO:
        return AUTO
    if isinstance(like, int) and not isinstance(like, bool):
        try:
            return int(text)
        except ValueError:
            return float(text)
    if isinstance(like, float) or like == AUTO:
        value = float(text)
        return int(value) if like == AUTO and value.is_integer() and "." not in text else value
    return text


def _apply(obj, values: dict[str, str], section: str):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    changes = {}
    for key, text in values.items():
        if key not in known:
            raise InputError(f"unknown key [{section}] {key}")
        try:
            changes[key] = _coerce(text, known[key])
        except ValueError as exc:
            raise InputError(f"bad value for [{section}] {key}: {text!r}") from exc
    return dataclasses.replace(obj, **changes)


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"malformed config: {exc}") from exc
    unknown = set(parser.sections()) - {"scenario", "market", "run"}
    if unknown:
        raise InputError(f"unknown config sections: {sorted(unknown)}")

    scenario = Scenario()
    if parser.has_section("scenario"):
        scenario = _apply(scenario, dict(parser["scenario"]), "scenario")

    market = MarketConfig()
    if parser.has_section("market"):
        nested: dict[str, dict[str, str]] = {}
        flat: dict[str, str] = {}
        for key, value in parser["market"].items():
            if key in _NESTED:
                spec, attr = _NESTED[key]
                nested.setdefault(spec, {})[attr] = value
            else:
                flat[_RENAMED.get(key, key)] = value
        for spec, values in nested.items():
            market = dataclasses.replace(
                market, **{spec: _apply(getattr(market, spec), values, "market")}
            )
        market = _apply(market, flat, "market")

    seed = 0
    if parser.has_section("run"):
        extra = set(parser["run"]) - {"seed"}
        if extra:
            raise InputError(f"unknown key [run] {sorted(extra)[0]}")
        seed = _parse_seed(parser["run"].get("seed", "0"))
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        seed = _parse_seed(env[SEED_ENV])
    return RunConfig(scenario, market, seed)


def _parse_seed(text: str) -> int:
    try:
        seed = int(text)
    except ValueError as exc:
        raise InputError(f"seed must be an integer, got {text!r}") from exc
    if seed < 0:
        raise InputError("seed must be nonnegative")
    return seed


def load_config(path=None, env: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config("", env)
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read(), env)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, Enum):
        return value.value
    return value


def config_hash(config: RunConfig, **extra) -> str:
    """Short digest of every resolved setting, excluding the seed."""
    payload = {"scenario": _plain(config.scenario), "market": _plain(config.market), **extra}
    payload["scenario"].pop("master_seed", None)
    payload["market"].pop("master_seed", None)
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
