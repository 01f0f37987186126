"""Run configuration loaded from JSON."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .causal import CausalConfig, GpsConfig
from .gbt import TrainConfig
from .indicators import IndicatorConfig


class ConfigError(ValueError):
    pass


PATH_KEYS = ("masks_dir", "schema_json", "accidents_csv", "roads_csv", "mapping_json")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    paths: dict = field(default_factory=dict)
    out_dir: str = "out"
    indicators: IndicatorConfig = IndicatorConfig()
    train: TrainConfig = TrainConfig()
    causal: CausalConfig = CausalConfig()
    split_fraction: float = 0.2
    balance_target: int | None = None
    smote_k: int = 5
    fishnet_cell: float = 0.01
    shap_max_samples: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["indicators"]["center_region"] = list(d["indicators"]["center_region"])
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        train = replace(self.train, seed=seed)
        causal = replace(self.causal, seed=seed)
        return replace(self, seed=seed, train=train, causal=causal)

    def validate_paths(self, keys=PATH_KEYS) -> None:
        for key in keys:
            if key not in self.paths:
                raise ConfigError(f"config lacks paths.{key}")
            if not Path(self.paths[key]).exists():
                raise ConfigError(f"paths.{key} does not exist: {self.paths[key]}")


def _build(cls, doc: dict | None):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**doc)


def from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    if "seed" not in doc:
        raise ConfigError("config must set a seed")
    seed = int(doc["seed"])
    base = base_dir or Path(".")
    paths = {k: str((base / v).resolve()) if not Path(v).is_absolute() else v
             for k, v in (doc.get("paths") or {}).items()}
    ind = dict(doc.get("indicators") or {})
    if "center_region" in ind:
        ind["center_region"] = tuple(ind["center_region"])
    causal = dict(doc.get("causal") or {})
    gps = dict(causal.pop("gps", {}) or {})
    if "train" in gps:
        gps["train"] = _build(TrainConfig, gps["train"])
    causal.setdefault("seed", seed)
    train = dict(doc.get("train") or {})
    train.setdefault("seed", seed)
    out_dir = doc.get("out_dir", "out")
    if not Path(out_dir).is_absolute():
        out_dir = str((base / out_dir).resolve())
    rest = {k: doc[k] for k in ("split_fraction", "balance_target", "smote_k", "fishnet_cell", "shap_max_samples")
            if k in doc}
    unknown = set(doc) - {"seed", "paths", "indicators", "train", "causal", "out_dir", *rest}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(
        seed=seed, paths=paths, out_dir=out_dir,
        indicators=_build(IndicatorConfig, ind), train=_build(TrainConfig, train),
        causal=_build(CausalConfig, causal | {"gps": _build(GpsConfig, gps)}), **rest,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    with open(path) as fh:
        return from_dict(json.load(fh), path.parent)
