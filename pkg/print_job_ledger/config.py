#!/usr/bin/env python3
"""
Configuration objects.

Each config is a dataclass validated in __post_init__ and can be read from a
JSON file; keys the dataclass does not know are refused.
"""

import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional

from .agents import DEFAULT_POLL_INTERVAL_MS, PrinterModel
from .errors import ConfigError
from .ledger import DEFAULT_DIFFICULTY, DEFAULT_MAX_BLOCK_TXS

BLOCK_DISTRIBUTIONS = ("deterministic", "exponential")
OUTPUT_FORMATS = ("text", "json", "csv")


def _coerce_printer(value: Any) -> PrinterModel:
    if isinstance(value, PrinterModel):
        return value
    if isinstance(value, str):
        return PrinterModel.parse(value)
    if isinstance(value, dict):
        try:
            return PrinterModel(**value)
        except TypeError as e:
            raise ConfigError(f"Invalid printer model {value!r}: {e}")
    raise ConfigError(f"Invalid printer model {value!r}")


def load_json_config(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return data


def _from_mapping(cls, data: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(str(e))


@dataclass(frozen=True)
class SimConfig:
    d_block: int = 12000
    block_dist: str = "deterministic"
    inclusion_skip: int = 1
    propagation_delay: int = 0
    n_jobs: int = 100
    rng_seed: int = 0
    poll_interval: int = DEFAULT_POLL_INTERVAL_MS
    print_model: PrinterModel = field(default_factory=lambda: PrinterModel.fixed(1000))
    start_jitter_ms: int = 0
    approval_timeout_ms: Optional[int] = None
    model_size: int = 1024
    difficulty: int = DEFAULT_DIFFICULTY
    max_block_txs: int = DEFAULT_MAX_BLOCK_TXS
    time_limit_ms: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "print_model", _coerce_printer(self.print_model))
        if self.d_block <= 0:
            raise ConfigError("d_block must be positive")
        if self.block_dist not in BLOCK_DISTRIBUTIONS:
            raise ConfigError(f"block_dist must be one of {', '.join(BLOCK_DISTRIBUTIONS)}")
        if self.inclusion_skip < 1:
            raise ConfigError("inclusion_skip must be at least 1")
        if self.propagation_delay < 0:
            raise ConfigError("propagation_delay must not be negative")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be at least 1")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ConfigError("rng_seed must be an unsigned 64-bit value")
        if self.poll_interval <= 0:
            raise ConfigError("poll_interval must be positive")
        if self.start_jitter_ms < 0 or self.model_size < 0:
            raise ConfigError("start_jitter_ms and model_size must not be negative")
        if self.approval_timeout_ms is not None and self.approval_timeout_ms <= 0:
            raise ConfigError("approval_timeout_ms must be positive")
        if self.max_block_txs < 1:
            raise ConfigError("max_block_txs must be at least 1")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimConfig":
        return _from_mapping(cls, data)

    @classmethod
    def from_file(cls, path: str) -> "SimConfig":
        return cls.from_dict(load_json_config(path))

    def with_overrides(self, **overrides) -> "SimConfig":
        """Replace only the values that were actually given"""
        given = {key: value for key, value in overrides.items() if value is not None}
        try:
            return replace(self, **given)
        except TypeError as e:
            raise ConfigError(str(e))

    def to_dict(self) -> Dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["print_model"] = self.print_model.describe()
        return data

    def time_limit(self) -> int:
        """Virtual-time ceiling for a run"""
        if self.time_limit_ms is not None:
            return self.time_limit_ms
        per_job = (30 * self.inclusion_skip * self.d_block + 10 * self.poll_interval
                   + self.print_model.duration(self.model_size) + self.start_jitter_ms
                   + 10 * self.propagation_delay + (self.approval_timeout_ms or 0))
        return self.n_jobs * per_job + 100 * self.d_block


@dataclass(frozen=True)
class AgentConfig:
    """Print client / print server settings; store_root and key_path here win over the top-level ones"""

    printer_address: Optional[str] = None
    poll_interval: int = DEFAULT_POLL_INTERVAL_MS
    print_model: PrinterModel = field(default_factory=lambda: PrinterModel.fixed(1000))
    store_root: Optional[str] = None
    key_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "print_model", _coerce_printer(self.print_model))
        if self.poll_interval <= 0:
            raise ConfigError("poll_interval must be positive")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AgentConfig":
        return _from_mapping(cls, data)


@dataclass(frozen=True)
class CliConfig:
    chain_path: str = "chain.log"
    store_root: str = "model_store"
    key_path: Optional[str] = None
    output_format: str = "text"
    d_block: int = 12000
    difficulty: int = DEFAULT_DIFFICULTY
    sim: SimConfig = field(default_factory=SimConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.output_format not in OUTPUT_FORMATS:
            raise ConfigError(f"output format must be one of {', '.join(OUTPUT_FORMATS)}")
        if isinstance(self.sim, dict):
            object.__setattr__(self, "sim", SimConfig.from_dict(self.sim))
        if isinstance(self.agent, dict):
            object.__setattr__(self, "agent", AgentConfig.from_dict(self.agent))
        if self.d_block <= 0:
            raise ConfigError("d_block must be positive")
        for name in ("chain_path", "store_root"):
            value = getattr(self, name)
            if not value or not isinstance(value, str):
                raise ConfigError(f"{name} must be a non-empty path")
            parent = os.path.dirname(os.path.abspath(value))
            if not os.path.isdir(parent):
                raise ConfigError(f"Directory for {name} does not exist: {parent}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CliConfig":
        return _from_mapping(cls, data)

    @classmethod
    def from_file(cls, path: str) -> "CliConfig":
        return cls.from_dict(load_json_config(path))
