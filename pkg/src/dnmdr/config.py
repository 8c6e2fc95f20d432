"""Hyperparameters, ablation variants and run configuration files."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

ABLATIONS = ("full", "prob", "lstm", "internal", "interactive", "dynn")
VARIANT_NAMES = {a: "DNMDR" if a == "full" else f"DNMDR_{a}" for a in ABLATIONS}


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    gat_layers: int = 2
    heads: int = 1
    mpnn_depth: int = 2
    activation: str = "tanh"
    dropout: float = 0.4
    gat_dropout: bool = False
    alpha: float = 0.95
    beta: float = 0.05
    gamma: float = 0.1
    lr: float = 1e-4
    epochs: int = 50
    patience: int = 10
    threshold: float = 0.5
    ablation: str = "full"
    kv_score: str = "keys"
    denominator: str = "row"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")
        if self.kv_score not in ("keys", "concat"):
            raise ConfigError("kv_score must be 'keys' or 'concat'")
        if self.denominator not in ("row", "column"):
            raise ConfigError("denominator must be 'row' or 'column'")
        if self.dim < 1 or self.gat_layers < 1 or self.heads < 1 or self.mpnn_depth < 0:
            raise ConfigError("dim, gat_layers and heads must be >= 1; mpnn_depth >= 0")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lr < 0 or self.epochs < 0 or self.patience < 1:
            raise ConfigError("lr and epochs must be non-negative, patience >= 1")

    @property
    def variant(self) -> str:
        return VARIANT_NAMES[self.ablation]

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelConfig":
        _reject_unknown(cls, d, "model")
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs. Exactly one of ``visits`` or ``synthetic`` is set."""

    visits: str | None = None
    ddi: str | None = None
    smiles: str | None = None
    mapping: str | None = None
    synthetic: dict | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    rounds: int = 10
    top_k_severities: int = 40
    split: tuple[float, float, float] = (4 / 6, 1 / 6, 1 / 6)
    conventional_pr: bool = False

    def __post_init__(self):
        if (self.visits is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of 'visits' (with 'ddi' and 'smiles') or 'synthetic'")
        if self.visits is not None and (self.ddi is None or self.smiles is None):
            raise ConfigError("'visits' requires 'ddi' and 'smiles' paths")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.top_k_severities < 1:
            raise ConfigError("top_k_severities must be >= 1")
        object.__setattr__(self, "split", tuple(float(x) for x in self.split))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_model(self, **changes) -> "RunConfig":
        return self.replace(model=self.model.replace(**changes))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: str | Path | None = None) -> "RunConfig":
        _reject_unknown(cls, d, "run")
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if base_dir is not None:
            for key in ("visits", "ddi", "smiles", "mapping"):
                if d.get(key) is not None and not Path(d[key]).is_absolute():
                    d[key] = str(Path(base_dir) / d[key])
        if "split" in d:
            d["split"] = tuple(d["split"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, base_dir=path.parent)


def _reject_unknown(cls, d: Mapping[str, Any], what: str) -> None:
    if not isinstance(d, Mapping):
        raise ConfigError(f"{what} config must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown {what} config key(s): {', '.join(unknown)}")
