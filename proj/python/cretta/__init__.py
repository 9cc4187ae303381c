"""Contrastive residual-energy test-time adaptation experiments.

The heavy lifting lives in the compiled ``_cretta`` extension. This module
adds thin conveniences: configs may be passed as dicts and per-batch records
come back as dicts.
"""

from __future__ import annotations

import json
from typing import Any, Mapping

from cretta._cretta import (
    ConfigError,
    ExperimentResult,
    cretta_logit,
    ece,
    energy,
    energy_logit_grad,
    gradient_weight,
    mce,
    spearman,
    verify_results,
)
from cretta import _cretta

__all__ = [
    "ConfigError",
    "ExperimentResult",
    "canonical_config",
    "cretta_logit",
    "ece",
    "energy",
    "energy_logit_grad",
    "gradient_weight",
    "mce",
    "preset",
    "records",
    "run_experiment",
    "spearman",
    "verify_results",
]


def _text(config: str | Mapping[str, Any]) -> str:
    return config if isinstance(config, str) else json.dumps(config)


def preset(kind: str) -> dict[str, Any]:
    """Fully expanded built-in configuration for an experiment kind."""
    return json.loads(_cretta.preset(kind))


def canonical_config(config: str | Mapping[str, Any]) -> dict[str, Any]:
    """Validates a config (raising ConfigError) and returns its expanded form."""
    return json.loads(_cretta.canonical_config(_text(config)))


def run_experiment(config: str | Mapping[str, Any], threads: int = 1) -> ExperimentResult:
    return _cretta.run_experiment(_text(config), threads)


def records(result: ExperimentResult, arm: str, condition: str, seed: int) -> list[dict[str, Any]]:
    """Per-batch records of one cell as dicts (absent quantities are None)."""
    return [json.loads(line) for line in result.record_lines(arm, condition, seed)]
