"""Stage runner: masks -> indicators -> features -> model -> attributions -> effects.

Every stage reads its inputs from the output directory, writes its
artifacts atomically and records its wall time in ``manifest.json``.
"""
from __future__ import annotations

import json
import logging
import os
import platform
import tempfile
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .causal import balance_table, build_effect_matrix
from .config import RunConfig
from .dataset import (
    ACCIDENT_CLASSES, FEATURES, balance_classes, fishnet_aggregate, impute_column_means, join_features,
    load_accidents, load_mapping, load_roads, read_feature_csv, stratified_split,
)
from .gbt import TreeEnsemble, evaluate_classifier, fit_multiclass
from .indicators import CategorySchema, extract_directory
from .plots import bar_chart, effect_grid, scatter
from .shap import class_importance, dependence_csv, dependence_table, explain, global_importance
from .synth import RNG_NAME

log = logging.getLogger(__name__)

STAGES = ("extract", "prep", "train", "explain", "causal", "matrix")

# stage -> (artifacts it needs, stage that makes them)
REQUIRES = {
    "extract": [],
    "prep": [("indicators.csv", "extract")],
    "train": [("train.csv", "prep"), ("test.csv", "prep")],
    "explain": [("model.json", "train"), ("test.csv", "prep")],
    "causal": [("features.csv", "prep")],
    "matrix": [("features.csv", "prep")],
}


class StageError(RuntimeError):
    pass


class PartialResult(RuntimeError):
    pass


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, df: pd.DataFrame) -> None:
    write_atomic(path, df.to_csv(index=False, lineterminator="\n"))


def write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o)}")


def _root_missing(stage: str, out: Path) -> str | None:
    """Earliest upstream stage whose artifacts are missing, if any."""
    for artifact, producer in REQUIRES[stage]:
        if not (out / artifact).exists():
            return _root_missing(producer, out) or producer
    return None


def check_dependencies(stage: str, out: Path, will_run=()) -> None:
    for artifact, producer in REQUIRES[stage]:
        if (out / artifact).exists() or producer in will_run:
            continue
        first = _root_missing(producer, out) or producer
        raise StageError(f"stage {stage!r} needs {artifact}, which is missing; run stage {first!r} first")


# ---------------------------------------------------------------------------
# stages


def stage_extract(cfg: RunConfig, out: Path) -> list[str]:
    cfg.validate_paths(("masks_dir", "schema_json"))
    schema = CategorySchema.load(cfg.paths["schema_json"])
    table = extract_directory(cfg.paths["masks_dir"], schema, cfg.indicators)
    if table.empty:
        raise StageError(f"no masks found under {cfg.paths['masks_dir']}")
    write_csv(out / "indicators.csv", table)
    return ["indicators.csv"]


def stage_prep(cfg: RunConfig, out: Path) -> list[str]:
    cfg.validate_paths(("accidents_csv", "roads_csv", "mapping_json"))
    mapping = load_mapping(cfg.paths["mapping_json"])
    accidents = load_accidents(cfg.paths["accidents_csv"], mapping)
    roads = load_roads(cfg.paths["roads_csv"])
    indicators = read_feature_csv(out / "indicators.csv")
    joined = join_features(indicators, accidents, roads)

    train_raw, test_raw = stratified_split(joined, cfg.split_fraction, cfg.seed)
    train, means = impute_column_means(train_raw)
    test, _ = impute_column_means(test_raw, means)
    balanced = balance_classes(train, cfg.seed, cfg.balance_target, cfg.smote_k)
    full, full_means = impute_column_means(joined)

    grid = fishnet_aggregate(accidents, indicators, cfg.fishnet_cell)
    write_csv(out / "features.csv", full)
    write_csv(out / "train.csv", balanced)
    write_csv(out / "test.csv", test)
    write_csv(out / "fishnet.csv", grid.cells)
    write_json(out / "prep.json", {
        "n_points": len(joined),
        "n_missing_cells": int(joined[list(FEATURES)].isna().sum().sum()),
        "train_means": means,
        "class_counts": {k: int(v) for k, v in joined["accident_class"].value_counts().sort_index().items()},
        "train_counts_balanced": {k: int(v) for k, v in balanced["accident_class"].value_counts().sort_index().items()},
        "test_counts": {k: int(v) for k, v in test["accident_class"].value_counts().sort_index().items()},
        "fishnet": {"origin_lon": grid.origin_lon, "origin_lat": grid.origin_lat,
                    "cell_size": grid.cell_size, "cells": len(grid.cells)},
    })
    return ["features.csv", "train.csv", "test.csv", "fishnet.csv", "prep.json"]


def stage_train(cfg: RunConfig, out: Path) -> list[str]:
    train = read_feature_csv(out / "train.csv")
    test = read_feature_csv(out / "test.csv")
    history: list[float] = []
    model = fit_multiclass(train[list(FEATURES)].to_numpy(float), train["accident_class"].to_numpy(),
                           cfg.train, classes=list(ACCIDENT_CLASSES), history=history)
    metrics = {
        "train": evaluate_classifier(model, train[list(FEATURES)].to_numpy(float), train["accident_class"].to_numpy()),
        "test": evaluate_classifier(model, test[list(FEATURES)].to_numpy(float), test["accident_class"].to_numpy()),
        "features": list(FEATURES),
    }
    write_atomic(out / "model.json", model.to_json() + "\n")
    write_json(out / "metrics.json", metrics)
    write_csv(out / "training_loss.csv", pd.DataFrame({"round": range(len(history)), "cross_entropy": history}))
    return ["model.json", "metrics.json", "training_loss.csv"]


def stage_explain(cfg: RunConfig, out: Path) -> list[str]:
    model = TreeEnsemble.from_json((out / "model.json").read_text())
    test = read_feature_csv(out / "test.csv")
    if cfg.shap_max_samples is not None:
        test = test.iloc[: cfg.shap_max_samples]
    attrs = explain(model, test[list(FEATURES)].to_numpy(float), test["point_id"].tolist())
    feats = list(FEATURES)
    glob = global_importance(attrs, feats)
    write_atomic(out / "shap_global.csv", glob.to_csv())
    rows, per_class = [], {}
    for k, cls in enumerate(model.classes):
        try:
            imp = class_importance(attrs, k, feats)
        except ValueError:
            continue
        per_class[cls] = dict(zip(feats, imp.shares.tolist()))
        for f, m, s in zip(feats, imp.mean_abs, imp.shares):
            rows.append({"class": cls, "feature": f, "mean_abs_shap": float(m), "share": float(s)})
    write_csv(out / "shap_by_class.csv", pd.DataFrame(rows))
    max_add = max(float(np.abs(a.phi0 + a.phi.sum(axis=1) - model.predict_logits(a.x)[0]).max()) for a in attrs)
    write_json(out / "shap_summary.json", {
        "n_samples": len(attrs), "global_shares": dict(zip(feats, glob.shares.tolist())),
        "ranking": glob.ranking(), "class_shares": per_class, "max_additivity_error": max_add,
    })
    labels = [f for f, _ in glob.ranking()]
    write_atomic(out / "shap_global.svg", bar_chart(labels, [dict(glob.ranking())[f] for f in labels],
                                                    "Global mean |SHAP| share"))
    dep = out / "dependence"
    for k, cls in enumerate(model.classes):
        for j, f in enumerate(feats):
            table = dependence_table(attrs, j, k)
            write_atomic(dep / f"{f}__{cls}.csv", dependence_csv(table, f))
    top = labels[0]
    j = feats.index(top)
    for k, cls in enumerate(model.classes):
        table = dependence_table(attrs, j, k)
        write_atomic(dep / f"{top}__{cls}.svg", scatter([t[0] for t in table], [t[1] for t in table],
                                                        top, "SHAP (logit)", f"{top} -> {cls}"))
    return ["shap_global.csv", "shap_by_class.csv", "shap_summary.json", "shap_global.svg", "dependence/"]


def stage_causal(cfg: RunConfig, out: Path) -> list[str]:
    data = read_feature_csv(out / "features.csv")
    rows = balance_table(data, cfg.causal.gps)
    write_json(out / "balance.json", rows)
    cols = ["treatment", "kind", "r2", "rmse", "accuracy", "smd_improvement", "mean_smd_before",
            "mean_smd_after", "degenerate", "error"]
    write_csv(out / "balance.csv", pd.DataFrame(rows).reindex(columns=cols))
    return ["balance.json", "balance.csv"]


def stage_matrix(cfg: RunConfig, out: Path) -> list[str]:
    data = read_feature_csv(out / "features.csv")
    matrix = build_effect_matrix(data, cfg.causal)
    write_csv(out / "effect_matrix.csv", matrix.to_frame())
    write_csv(out / "effect_levels.csv", matrix.levels_frame())
    write_json(out / "effect_matrix.json", matrix.to_dict())
    cells = {k: (v.odds_ratio, v.stars) for k, v in matrix.cells.items()}
    write_atomic(out / "effect_matrix.svg", effect_grid(matrix.treatments, matrix.outcomes, cells))
    if not matrix.complete:
        raise PartialResult(f"{len(matrix.failures)} effect cells failed: "
                            + "; ".join(f"{t}->{o}: {m}" for (t, o), m in matrix.failures.items()))
    return ["effect_matrix.csv", "effect_levels.csv", "effect_matrix.json", "effect_matrix.svg"]


RUNNERS = {
    "extract": stage_extract, "prep": stage_prep, "train": stage_train,
    "explain": stage_explain, "causal": stage_causal, "matrix": stage_matrix,
}


def versions() -> dict:
    import numba
    import scipy

    return {"streetsafety": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "pandas": pd.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_pipeline(cfg: RunConfig, stages=STAGES, out_dir=None) -> int:
    """Run ``stages`` in pipeline order. Returns 0 iff every stage succeeded."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    requested = [s for s in STAGES if s in set(stages)]
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise StageError(f"unknown stages: {sorted(unknown)}")
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    manifest.update({"config_hash": cfg.config_hash(), "seed": cfg.seed, "rng": RNG_NAME,
                     "versions": versions(), "config": cfg.to_dict()})
    manifest.setdefault("stages", {})
    status = 0
    for i, stage in enumerate(requested):
        try:
            check_dependencies(stage, out, will_run=requested[:i])
        except StageError as exc:
            log.error("%s", exc)
            manifest["stages"][stage] = {"status": "blocked", "error": str(exc)}
            status = 2
            break
        t0 = time.perf_counter()
        log.info("stage %s ...", stage)
        try:
            outputs = RUNNERS[stage](cfg, out)
            manifest["stages"][stage] = {"status": "ok", "outputs": outputs,
                                         "wall_time_s": round(time.perf_counter() - t0, 3)}
        except PartialResult as exc:
            log.error("stage %s finished with failures: %s", stage, exc)
            manifest["stages"][stage] = {"status": "partial", "error": str(exc),
                                         "wall_time_s": round(time.perf_counter() - t0, 3)}
            status = 1
        except Exception as exc:
            log.error("stage %s failed: %s", stage, exc)
            manifest["stages"][stage] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                                         "wall_time_s": round(time.perf_counter() - t0, 3)}
            status = 1
            break
    write_json(manifest_path, manifest)
    return status
