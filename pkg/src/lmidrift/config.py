"""Experiment configuration (JSON, versioned).

Schema, version 1. Paths are resolved relative to the config file.

    {
      "version": 1,
      "train": "train.jsonl",            # in-domain training set (required)
      "test": "test.jsonl",              # in-domain test set (required)
      "ood_test": "ood_test.jsonl",      # out-of-domain test set (optional)
      "schema": {"text": "text", "label": "label", "id": "id"},
      "model": "bow-logreg",             # bow-logreg | attn-pool | external
      "endpoints": {"0": "cmd ...", "1": "cmd ..."},   # external only: one per ratio
      "embed_dim": 32,
      "hyper": {"lr": 0.01, "epochs": 20, "batch_size": 8, "grad_clip": 1.0, "optimizer": "adam"},
      "ratios": [0, 0.01, 0.05, 0.1, 0.5, 1],          # percent of the training set, within [0, 1]
      "seeds": [0, 1, 2, 3, 4],
      "explanation": {"method": "shapley-sampled", "num_samples": 200, "steps": 100, "baseline": "zero"},
      "aopc_baselines": [],               # extra methods whose AOPC is reported alongside
      "k": "auto",                        # int, or "auto" (10 if average length >= 100 else 6)
      "sample_size": 1000,                # explanation subsample per test set
      "U": 10,
      "epsilon": 1e-9,
      "negative_lmi": "clamp",            # clamp | shift | abs
      "min_freq": 1,
      "max_len": 256,
      "top_n": 10,
      "out_dir": "out"
    }

``LMIDRIFT_OUT`` overrides ``out_dir``; ``LMIDRIFT_WORKERS`` sets the number
of worker threads (default 1).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .explain import METHODS
from .metrics import NEGATIVE_LMI_POLICIES
from .models import DEFAULT_EMBED_DIM, DEFAULT_HYPER, MODEL_KINDS, OPTIMIZERS

CONFIG_VERSION = 1
ENV_OUT = "LMIDRIFT_OUT"
ENV_WORKERS = "LMIDRIFT_WORKERS"

DEFAULT_RATIOS = (0, 0.01, 0.05, 0.1, 0.5, 1)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
EXTERNAL = "external"


@dataclass
class ExperimentConfig:
    train: str
    test: str
    ood_test: Optional[str] = None
    schema: dict = field(default_factory=lambda: {"text": "text", "label": "label"})
    model: str = "bow-logreg"
    endpoints: dict = field(default_factory=dict)
    embed_dim: int = DEFAULT_EMBED_DIM
    hyper: dict = field(default_factory=lambda: dict(DEFAULT_HYPER))
    ratios: list = field(default_factory=lambda: list(DEFAULT_RATIOS))
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    explanation: dict = field(default_factory=lambda: {"method": "shapley-sampled", "num_samples": 200})
    aopc_baselines: list = field(default_factory=list)
    k: object = "auto"
    sample_size: int = 1000
    U: int = 10
    epsilon: float = 1e-9
    negative_lmi: str = "clamp"
    min_freq: int = 1
    max_len: int = 256
    top_n: int = 10
    out_dir: str = "out"
    version: int = CONFIG_VERSION
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}; expected {CONFIG_VERSION}")
        if not self.ratios:
            raise ConfigError("ratios must not be empty")
        for r in self.ratios:
            if not isinstance(r, (int, float)) or not 0 <= r <= 1:
                raise ConfigError(f"ratio {r!r} outside [0, 1] percent")
        if len(set(self.ratios)) != len(self.ratios):
            raise ConfigError("duplicate ratios")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds")
        if self.sample_size < 1:
            raise ConfigError("sample_size must be at least 1")
        if self.U < 1:
            raise ConfigError("U must be at least 1")
        if self.model not in MODEL_KINDS + (EXTERNAL,):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.model == EXTERNAL:
            missing = [r for r in self.ratios if _ratio_key(r) not in self.endpoints]
            if missing:
                raise ConfigError(f"external model needs an endpoint for ratios {missing}")
        method = self.explanation.get("method")
        for m in [method] + list(self.aopc_baselines):
            if m not in METHODS:
                raise ConfigError(f"unknown explanation method {m!r}")
        if self.k != "auto" and (not isinstance(self.k, int) or self.k < 1):
            raise ConfigError(f"k must be a positive integer or 'auto', got {self.k!r}")
        if self.negative_lmi not in NEGATIVE_LMI_POLICIES:
            raise ConfigError(f"negative_lmi must be one of {NEGATIVE_LMI_POLICIES}")
        if self.hyper.get("optimizer", "adam") not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        data = copy.deepcopy(data)
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        for required in ("train", "test"):
            if required not in data:
                raise ConfigError(f"config is missing required field {required!r}")
        hyper = dict(DEFAULT_HYPER)
        hyper.update(data.pop("hyper", {}))
        explanation = {"method": "shapley-sampled", "num_samples": 200}
        explanation.update(data.pop("explanation", {}))
        return cls(hyper=hyper, explanation=explanation, base_dir=str(base_dir), **data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data, base_dir=path.resolve().parent)

    def to_dict(self) -> dict:
        out = {name: copy.deepcopy(getattr(self, name)) for name in self.__dataclass_fields__ if name != "base_dir"}
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def output_dir(self) -> Path:
        override = os.environ.get(ENV_OUT)
        return Path(override) if override else self.resolve(self.out_dir)


def _ratio_key(r) -> str:
    return format(float(r), "g")


def worker_count() -> int:
    raw = os.environ.get(ENV_WORKERS, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_WORKERS} must be an integer, got {raw!r}") from None
    return max(1, n)
