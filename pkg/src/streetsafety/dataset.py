"""Accident records, road categories and the 12-column feature table.

The feature table is a pandas DataFrame with ``point_id``, the eleven
indicator columns, ``road_code`` and ``accident_class``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .indicators import INDICATOR_NAMES

ACCIDENT_CLASSES = ("Collision", "Crash", "VehicleBreakdown", "TrafficHazard", "Debris")
ROAD_CATEGORIES = ("Path", "Linkroad", "Specialroad", "PrincipalTag")
FEATURES = (*INDICATOR_NAMES, "road_code")
CONTINUOUS = INDICATOR_NAMES
N_RAW_TYPES = 18

# OSM highway tags per road category
ROAD_TYPES = {
    "Path": ("footway", "path", "cycleway", "pedestrian"),
    "Linkroad": ("motorway link", "trunk link", "primary link"),
    "Specialroad": ("service", "track", "unclassified", "residential"),
    "PrincipalTag": ("motorway", "trunk", "primary", "secondary", "tertiary"),
}

# Placeholder grouping of the 18 source incident types; replace with the
# expert table via a mapping JSON when available.
DEFAULT_ACCIDENT_MAPPING = {
    "COLLISION": "Collision",
    "COLLISION WITH INJURY": "Collision",
    "COLLISN/ LVNG SCN": "Collision",
    "COLLISION/PRIVATE PROPERTY": "Collision",
    "AUTO/ PED": "Collision",
    "Crash Urgent": "Crash",
    "Crash Service": "Crash",
    "TRAFFIC FATALITY": "Crash",
    "FLEET ACC/ INJURY": "Crash",
    "Stalled Vehicle": "VehicleBreakdown",
    "zSTALLED VEHICLE": "VehicleBreakdown",
    "VEHICLE FIRE": "VehicleBreakdown",
    "Traffic Hazard": "TrafficHazard",
    "BLOCKED DRIV/ HWY": "TrafficHazard",
    "N / HZRD TRFC VIOL": "TrafficHazard",
    "ICY ROADWAY": "TrafficHazard",
    "TRFC HAZD/ DEBRIS": "Debris",
    "LOOSE LIVESTOCK": "Debris",
}


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# categorical mappings


def validate_mapping(mapping: dict, expected: int = N_RAW_TYPES) -> dict:
    if len(mapping) != expected:
        raise DataError(f"accident mapping has {len(mapping)} raw types, expected {expected}")
    bad = {k: v for k, v in mapping.items() if v not in ACCIDENT_CLASSES}
    if bad:
        raise DataError(f"mapping targets outside {ACCIDENT_CLASSES}: {bad}")
    return dict(mapping)


def load_mapping(path, expected: int = N_RAW_TYPES) -> dict:
    with open(path) as fh:
        return validate_mapping(json.load(fh), expected)


def reclassify_accident(raw_type: str, mapping: dict) -> str:
    try:
        return mapping[raw_type]
    except KeyError:
        raise DataError(f"raw accident type {raw_type!r} is not in the mapping") from None


def road_code(category: str) -> int:
    """Integer code 0-3 for a road category name or an OSM highway tag."""
    key = category.strip()
    if key in ROAD_CATEGORIES:
        return ROAD_CATEGORIES.index(key)
    norm = key.lower().replace("_", " ")
    if norm in ("principal tag", "principaltag"):
        return ROAD_CATEGORIES.index("PrincipalTag")
    for code, cat in enumerate(ROAD_CATEGORIES):
        if norm == cat.lower() or norm in ROAD_TYPES[cat]:
            return code
    raise DataError(f"unknown road category {category!r}")


# ---------------------------------------------------------------------------
# ingestion


def load_accidents(path, mapping: dict) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"point_id": str, "raw_type": str})
    need = {"point_id", "timestamp", "raw_type", "lon", "lat"}
    if need - set(df.columns):
        raise DataError(f"accidents CSV lacks columns {sorted(need - set(df.columns))}")
    unmapped = sorted(set(df["raw_type"]) - set(mapping))
    if unmapped:
        raise DataError(f"raw accident types missing from mapping: {unmapped}")
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    df["accident_class"] = df["raw_type"].map(mapping)
    if not np.isfinite(df[["lon", "lat"]].to_numpy(float)).all():
        raise DataError("non-finite accident coordinates")
    return df


def load_roads(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"point_id": str, "road_category": str})
    df["road_code"] = [road_code(c) for c in df["road_category"]]
    return df[["point_id", "road_code"]]


def join_features(indicators: pd.DataFrame, accidents: pd.DataFrame, roads: pd.DataFrame) -> pd.DataFrame:
    """Inner-join per-point indicators with road codes and accident classes.

    Indicator cells may stay missing; ``impute_column_means`` fills them.
    """
    ind = indicators.drop(columns=["n_views"], errors="ignore")
    out = accidents[["point_id", "accident_class"]].merge(ind, on="point_id", how="left")
    out = out.merge(roads, on="point_id", how="left")
    out = out.dropna(subset=["accident_class"])
    out = out[["point_id", *FEATURES, "accident_class"]]
    return out.sort_values("point_id", kind="stable").reset_index(drop=True)


# ---------------------------------------------------------------------------
# preprocessing


def impute_column_means(table: pd.DataFrame, means: dict | None = None, columns=FEATURES):
    """Fill missing feature cells with column means.

    With ``means`` given (e.g. from the training split) they are used as-is,
    so held-out rows never see their own statistics. Returns
    ``(filled_table, means)``.
    """
    out = table.copy()
    if means is None:
        means = {}
        for col in columns:
            values = out[col].astype(float)
            if values.notna().sum() == 0:
                raise DataError(f"column {col!r} is entirely missing")
            means[col] = float(values.mean())
    for col in columns:
        out[col] = out[col].astype(float).fillna(means[col])
    out["road_code"] = out["road_code"].round().astype(int)
    return out, means


def stratified_split(table: pd.DataFrame, test_fraction: float = 0.2, seed: int = 0,
                     label: str = "accident_class"):
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test_idx = []
    for cls, group in table.groupby(label, sort=True):
        if len(group) < 2:
            raise DataError(f"class {cls!r} has a single row; cannot stratify")
        n_test = int(round(len(group) * test_fraction))
        n_test = min(max(n_test, 1), len(group) - 1)
        test_idx.extend(rng.permutation(group.index.to_numpy())[:n_test])
    mask = table.index.isin(test_idx)
    return table[~mask].copy(), table[mask].copy()


def standardize_features(table: pd.DataFrame, stats: dict | None = None, columns=CONTINUOUS):
    """Z-score the continuous columns; ``road_code`` is left alone.

    Returns ``(table, stats)`` with ``stats[col] = (mean, std)``.
    """
    out = table.copy()
    if stats is None:
        stats = {}
        for col in columns:
            values = out[col].to_numpy(float)
            sd = float(values.std())
            if not sd > 0:
                raise DataError(f"column {col!r} has zero variance")
            stats[col] = (float(values.mean()), sd)
    for col in columns:
        mu, sd = stats[col]
        out[col] = (out[col].to_numpy(float) - mu) / sd
    return out, stats


@dataclass
class SmoteRecord:
    row: int          # position in the balanced output
    parent_a: str
    parent_b: str
    lam: float


def balance_classes(train: pd.DataFrame, seed: int = 0, target: int | None = None, k: int = 5,
                    label: str = "accident_class", features=FEATURES, return_log: bool = False):
    """SMOTE-oversample small classes and randomly undersample large ones to ``target`` rows.

    ``target`` defaults to the (floored) median class size. Neighbours are
    searched in z-scored continuous space; a synthetic row takes the road
    code of whichever parent it lies closer to.
    """
    rng = np.random.default_rng(seed)
    sizes = train[label].value_counts().sort_index()
    if (sizes < 2).any():
        raise DataError(f"classes with fewer than 2 rows cannot be balanced: {list(sizes[sizes < 2].index)}")
    if target is None:
        target = int(math.floor(float(np.median(sizes.to_numpy()))))
    cont = [c for c in features if c != "road_code"]
    values = train[cont].to_numpy(float)
    mu, sd = values.mean(axis=0), values.std(axis=0)
    sd[sd == 0] = 1.0

    parts, log = [], []
    offset = 0
    for cls in sizes.index:
        group = train[train[label] == cls]
        n = len(group)
        if n >= target:
            keep = np.sort(rng.choice(n, size=target, replace=False)) if n > target else np.arange(n)
            parts.append(group.iloc[keep])
            offset += target
            continue
        parts.append(group)
        offset += n
        x = group[cont].to_numpy(float)
        z = (x - mu) / sd
        kk = min(k, n - 1)
        _, nbr = cKDTree(z).query(z, k=kk + 1)
        nbr = np.asarray(nbr).reshape(n, kk + 1)[:, 1:]
        n_new = target - n
        base = rng.integers(0, n, size=n_new)
        pick = nbr[base, rng.integers(0, kk, size=n_new)]
        lam = rng.random(n_new)
        synth = x[base] + lam[:, None] * (x[pick] - x[base])
        new = pd.DataFrame(synth, columns=cont)
        if "road_code" in features:
            codes = group["road_code"].to_numpy()
            new["road_code"] = np.where(lam <= 0.5, codes[base], codes[pick])
        new[label] = cls
        pids = group["point_id"].astype(str).to_numpy() if "point_id" in group else np.arange(n).astype(str)
        new["point_id"] = [f"smote-{cls}-{j}" for j in range(n_new)]
        parts.append(new[[c for c in train.columns if c in new.columns]])
        for j in range(n_new):
            log.append(SmoteRecord(offset + j, pids[base[j]], pids[pick[j]], float(lam[j])))
        offset += n_new
    out = pd.concat(parts, ignore_index=True)[list(train.columns)]
    if "road_code" in out:
        out["road_code"] = out["road_code"].astype(int)
    return (out, log) if return_log else out


# ---------------------------------------------------------------------------
# fishnet


@dataclass
class FishnetGrid:
    origin_lon: float
    origin_lat: float
    cell_size: float
    cells: pd.DataFrame  # one row per occupied (row, col)

    @property
    def total(self) -> int:
        return int(self.cells["count"].sum())


def _cell_index(values: np.ndarray, origin: float, size: float) -> np.ndarray:
    idx = np.floor((values - origin) / size).astype(np.int64)
    # undo rounding so that boundaries fall in the higher cell: [lo, lo + size)
    idx = np.where(origin + (idx + 1) * size <= values, idx + 1, idx)
    idx = np.where(origin + idx * size > values, idx - 1, idx)
    return idx


def fishnet_aggregate(records: pd.DataFrame, indicators: pd.DataFrame | None, cell_size: float,
                      origin: tuple[float, float] | None = None) -> FishnetGrid:
    """Bin accident points into uniform lon/lat cells.

    Each occupied cell carries the accident count per class, the total and
    the mean of every indicator over its points.
    """
    if not cell_size > 0:
        raise DataError("cell_size must be positive")
    df = records[["point_id", "lon", "lat", "accident_class"]].copy()
    if indicators is not None:
        df = df.merge(indicators[["point_id", *INDICATOR_NAMES]], on="point_id", how="left")
    lon0, lat0 = origin if origin is not None else (float(df["lon"].min()), float(df["lat"].min()))
    df["row"] = _cell_index(df["lat"].to_numpy(float), lat0, cell_size)
    df["col"] = _cell_index(df["lon"].to_numpy(float), lon0, cell_size)
    grouped = df.groupby(["row", "col"], sort=True)
    cells = grouped.size().rename("count").to_frame()
    for cls in ACCIDENT_CLASSES:
        cells[f"n_{cls}"] = grouped["accident_class"].apply(lambda s, c=cls: int((s == c).sum()))
    if indicators is not None:
        cells = cells.join(grouped[list(INDICATOR_NAMES)].mean())
    return FishnetGrid(lon0, lat0, float(cell_size), cells.reset_index())


def read_feature_csv(path) -> pd.DataFrame:
    return pd.read_csv(Path(path), dtype={"point_id": str})
