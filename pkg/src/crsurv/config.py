"""Run configuration: ``key = value`` files and their resolved form."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .gibbs import SamplerConfig
from .model_space import EvidenceConfig
from .priors import PriorConfig

MODES = ("explore", "fit", "bma", "simulate")

_PRIOR_KEYS = {"omega2": float, "model_prior": str, "beta_a1": float, "beta_a2": float,
               "g_b1": float, "g_b2": float, "lambda_update": str}
_SAMPLER_KEYS = {"iterations": int, "burn_in": float, "retained": int,
                 "adapt_batch": int, "target_accept": float}
_EVIDENCE_KEYS = {"rungs": int, "ladder_power": float, "rung_iterations": int,
                  "rung_burn_in": float, "prior_draws": int}
_RUN_KEYS = {"cohort": Path, "schema": Path, "params": Path, "out": Path, "t0": int,
             "seed": int, "workers": int, "mask": str, "n": int, "horizon": int}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int
    cohort: Path | None = None
    schema: Path | None = None
    params: Path | None = None
    out: Path = Path("out")
    t0: int = 16
    workers: int = 1
    mask: str | None = None
    n: int = 1000
    horizon: int = 20
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    evidence: EvidenceConfig = field(default_factory=EvidenceConfig)

    def __post_init__(self):
        if self.t0 < 2:
            raise ConfigError("t0 must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def fingerprint(self) -> str:
        """SHA-256 over every setting that can change a result (not out/workers)."""
        data = dataclasses.asdict(self)
        data.pop("out")
        data.pop("workers")
        text = json.dumps(data, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def read_config_file(path: str | Path) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string("[run]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(parser.items("run"))


def _convert(key: str, value, kind):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {value!r}") from None


def build_config(values: dict[str, object]) -> RunConfig:
    """Resolve a flat key/value mapping into a :class:`RunConfig`."""
    known = {**_PRIOR_KEYS, **_SAMPLER_KEYS, **_EVIDENCE_KEYS, **_RUN_KEYS}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    vals = {k: _convert(k, v, known[k]) for k, v in values.items() if v is not None}
    if "seed" not in vals:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    try:
        prior = PriorConfig(**{k: vals[k] for k in _PRIOR_KEYS if k in vals})
        sampler = SamplerConfig(seed=vals["seed"],
                                **{k: vals[k] for k in _SAMPLER_KEYS if k in vals})
        evidence = EvidenceConfig(seed=vals["seed"],
                                  **{k: vals[k] for k in _EVIDENCE_KEYS if k in vals})
        return RunConfig(prior=prior, sampler=sampler, evidence=evidence,
                         **{k: vals[k] for k in _RUN_KEYS if k in vals})
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
