"""Streetscape indicators computed from semantic label masks.

A mask is an H x W grid of class ids. Eleven scalar indicators are derived
from pixel counts, connected components and component shape, then averaged
over the (up to four) views captured at one accident point.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

INDICATOR_NAMES = ("bc", "sor", "bor", "vod", "vo", "dar", "es", "sr", "vc", "tsi", "vd")

DEFAULT_CLASSES = (
    "road", "sidewalk", "building", "wall", "fence", "pole", "traffic light",
    "traffic sign", "vegetation", "terrain", "sky", "person", "rider", "car",
    "truck", "bus", "train", "motorcycle", "bicycle",
)

DEFAULT_ROLES = {
    "road": ("road",),
    "sidewalk": ("sidewalk",),
    "building": ("building",),
    "vegetation": ("vegetation",),
    "terrain": ("terrain",),
    "sky": ("sky",),
    "vehicle": ("car", "truck", "bus", "train", "motorcycle", "bicycle"),
    "traffic_sign": ("traffic sign",),
    "obstruction": ("building", "wall", "fence", "pole", "vegetation"),
    "obstacle": ("pole", "traffic light", "traffic sign", "fence", "wall"),
    "escape": ("sidewalk", "terrain"),
}

ROLE_NAMES = tuple(DEFAULT_ROLES)


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class CategorySchema:
    classes: tuple[tuple[int, str], ...]
    role_sets: dict[str, frozenset[int]]

    def __post_init__(self):
        ids = [c for c, _ in self.classes]
        if ids != list(range(len(ids))):
            raise ValueError("class ids must be unique and contiguous from 0")
        missing = set(ROLE_NAMES) - set(self.role_sets)
        if missing:
            raise ValueError(f"schema lacks role sets: {sorted(missing)}")
        for role, members in self.role_sets.items():
            bad = set(members) - set(ids)
            if bad:
                raise ValueError(f"role {role!r} references undeclared ids {sorted(bad)}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def id_of(self, name: str) -> int:
        for cid, cname in self.classes:
            if cname == name:
                return cid
        raise KeyError(name)

    def name_of(self, cid: int) -> str:
        return self.classes[cid][1]

    @classmethod
    def default(cls) -> "CategorySchema":
        classes = tuple(enumerate(DEFAULT_CLASSES))
        lookup = {n: i for i, n in classes}
        roles = {r: frozenset(lookup[n] for n in names) for r, names in DEFAULT_ROLES.items()}
        return cls(classes, roles)

    @classmethod
    def from_dict(cls, doc: dict) -> "CategorySchema":
        classes = tuple((int(c["id"]), str(c["name"])) for c in doc["classes"])
        lookup = {n: i for i, n in classes}
        roles = {}
        for role, members in doc["role_sets"].items():
            ids = set()
            for m in members:
                if isinstance(m, str):
                    if m not in lookup:
                        raise ValueError(f"role {role!r} names unknown class {m!r}")
                    ids.add(lookup[m])
                else:
                    ids.add(int(m))
            roles[role] = frozenset(ids)
        return cls(classes, roles)

    def to_dict(self) -> dict:
        return {
            "classes": [{"id": i, "name": n} for i, n in self.classes],
            "role_sets": {r: sorted(v) for r, v in sorted(self.role_sets.items())},
        }

    @classmethod
    def load(cls, path) -> "CategorySchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class LabelMask:
    data: np.ndarray  # (height, width) int
    point_id: str = ""
    view_heading: int = 0

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.data.size


@dataclass(frozen=True)
class IndicatorConfig:
    """Parameters for the indicator terms the formulas leave open.

    ``center_region`` is (x0, x1, y0, y1) as image fractions, y growing
    downward. ``roles`` overrides schema role sets by role name, given as
    class ids or class names.
    """

    center_region: tuple[float, float, float, float] = (0.25, 0.75, 0.33, 1.0)
    connectivity: int = 4
    min_component_px: int = 5
    roles: dict = field(default_factory=dict)

    def __post_init__(self):
        x0, x1, y0, y1 = self.center_region
        if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
            raise ValueError(f"bad center region {self.center_region}")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.min_component_px < 1:
            raise ValueError("min_component_px must be >= 1")

    def role(self, schema: CategorySchema, name: str) -> frozenset[int]:
        if name in self.roles:
            return frozenset(
                schema.id_of(m) if isinstance(m, str) else int(m) for m in self.roles[name]
            )
        return schema.role_sets[name]


@dataclass(frozen=True)
class IndicatorVector:
    bc: float
    sor: float
    bor: float
    vod: float
    vo: float
    dar: float
    es: float
    sr: float
    vc: float
    tsi: float
    vd: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in INDICATOR_NAMES], dtype=float)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_array(cls, values) -> "IndicatorVector":
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class Component:
    area: int
    perimeter: int
    bbox: tuple[int, int, int, int]  # row0, row1 (exclusive), col0, col1 (exclusive)

    @property
    def circularity(self) -> float:
        return 4.0 * math.pi * self.area / self.perimeter**2


# ---------------------------------------------------------------------------
# loading


def validate_mask(data, schema: CategorySchema, point_id="", view_heading=0) -> LabelMask:
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MaskError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise MaskError("mask holds non-integer values")
    arr = arr.astype(np.int64)
    bad = (arr < 0) | (arr >= schema.n_classes)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise MaskError(f"unknown class {arr[r, c]} at pixel (row={r}, col={c})")
    arr.setflags(write=False)
    return LabelMask(arr, str(point_id), int(view_heading))


_NAME_RE = re.compile(r"^(?P<pid>.+)_(?P<heading>0|90|180|270)$")


def parse_mask_name(path) -> tuple[str, int]:
    """Split ``<point_id>_<heading>.png`` into its parts."""
    m = _NAME_RE.match(Path(path).stem)
    if not m:
        raise MaskError(f"file name {Path(path).name!r} does not follow <point_id>_<heading>.png")
    return m["pid"], int(m["heading"])


def load_mask(path, schema: CategorySchema, shape: tuple[int, int] | None = None) -> LabelMask:
    """Read a mask from an 8-bit single-channel PNG, ``.npy`` or whitespace text grid.

    ``shape`` (height, width), when given, must match the stored grid.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        arr = np.load(path)
    elif suffix in (".txt", ".csv"):
        arr = np.loadtxt(path, delimiter="," if suffix == ".csv" else None, dtype=np.int64, ndmin=2)
    else:
        from PIL import Image

        with Image.open(path) as img:
            if img.mode not in ("L", "P"):
                raise MaskError(f"{path.name}: expected single-channel 8-bit image, got mode {img.mode}")
            arr = np.asarray(img)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise MaskError(f"{path.name}: dimension mismatch, expected {shape}, got {arr.shape}")
    try:
        pid, heading = parse_mask_name(path)
    except MaskError:
        pid, heading = path.stem, 0
    return validate_mask(arr, schema, pid, heading)


def save_mask_png(mask: LabelMask, path) -> None:
    from PIL import Image

    Image.fromarray(mask.data.astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# pixel statistics


def class_counts(mask: LabelMask) -> dict[int, int]:
    counts = np.bincount(mask.data.ravel())
    return {int(c): int(n) for c, n in enumerate(counts) if n > 0}


def class_proportions(mask: LabelMask) -> dict[int, float]:
    total = mask.n_pixels
    return {c: n / total for c, n in class_counts(mask).items()}


def class_ratio(mask: LabelMask, roles) -> float:
    ids = np.fromiter(roles, dtype=np.int64)
    if ids.size == 0:
        return 0.0
    return int(np.isin(mask.data, ids).sum()) / mask.n_pixels


def background_complexity(mask: LabelMask) -> float:
    """Shannon entropy of the present classes normalised by log of their count."""
    p = np.array(list(class_proportions(mask).values()))
    n = p.size
    if n <= 1:
        return 0.0
    value = float(-(p * np.log(p)).sum() / math.log(n))
    return min(max(value, 0.0), 1.0)


def center_bounds(mask: LabelMask, cfg: IndicatorConfig) -> tuple[int, int, int, int]:
    x0, x1, y0, y1 = cfg.center_region
    c0, c1 = int(round(x0 * mask.width)), int(round(x1 * mask.width))
    r0, r1 = int(round(y0 * mask.height)), int(round(y1 * mask.height))
    return r0, r1, c0, c1


def sight_obstruction_risk(mask: LabelMask, cfg: IndicatorConfig, schema: CategorySchema | None = None) -> float:
    schema = schema or CategorySchema.default()
    r0, r1, c0, c1 = center_bounds(mask, cfg)
    if r1 <= r0 or c1 <= c0:
        raise MaskError(f"center region {cfg.center_region} is empty on a {mask.width}x{mask.height} mask")
    center = mask.data[r0:r1, c0:c1]
    ids = np.fromiter(cfg.role(schema, "obstruction"), dtype=np.int64)
    return int(np.isin(center, ids).sum()) / center.size


_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components(mask: LabelMask, roles, cfg: IndicatorConfig) -> list[Component]:
    """Connected regions of role pixels, smallest first discarded below ``min_component_px``.

    Perimeter counts unit pixel edges shared with a non-role pixel or the
    image border. Components come out in raster order of their first pixel.
    """
    ids = np.fromiter(roles, dtype=np.int64)
    on = np.isin(mask.data, ids)
    if not on.any():
        return []
    labels, n = ndimage.label(on, structure=_STRUCTURE[cfg.connectivity])
    padded = np.pad(on, 1, constant_values=False).astype(np.int64)
    exposed = 4 - (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:])
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)
    perims = np.bincount(flat, weights=(exposed * on).ravel(), minlength=n + 1)
    out = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if areas[lab] < cfg.min_component_px:
            continue
        out.append(Component(
            int(areas[lab]), int(perims[lab]),
            (sl[0].start, sl[0].stop, sl[1].start, sl[1].stop),
        ))
    return out


def visible_obstacle_density(mask: LabelMask, cfg: IndicatorConfig, schema: CategorySchema | None = None) -> float:
    schema = schema or CategorySchema.default()
    comps = connected_components(mask, cfg.role(schema, "obstacle"), cfg)
    return len(comps) / (mask.n_pixels / 10000.0)


def traffic_sign_integrity(mask: LabelMask, cfg: IndicatorConfig, schema: CategorySchema | None = None) -> float:
    schema = schema or CategorySchema.default()
    comps = connected_components(mask, cfg.role(schema, "traffic_sign"), cfg)
    if not comps:
        return 0.0
    return float(np.mean([min(c.circularity, 1.0) for c in comps]))


def compute_indicators(mask: LabelMask, schema: CategorySchema, cfg: IndicatorConfig | None = None) -> IndicatorVector:
    cfg = cfg or IndicatorConfig()

    def ratio(role):
        return class_ratio(mask, cfg.role(schema, role))

    return IndicatorVector(
        bc=background_complexity(mask),
        sor=sight_obstruction_risk(mask, cfg, schema),
        bor=ratio("building"),
        vod=visible_obstacle_density(mask, cfg, schema),
        vo=class_ratio(mask, cfg.role(schema, "sky") | cfg.role(schema, "terrain")),
        dar=ratio("road"),
        es=ratio("escape"),
        sr=ratio("sidewalk"),
        vc=ratio("vegetation"),
        tsi=traffic_sign_integrity(mask, cfg, schema),
        vd=ratio("vehicle"),
    )


def aggregate_views(vectors) -> IndicatorVector:
    vectors = list(vectors)
    if not vectors:
        raise ValueError("cannot aggregate an empty list of views")
    stacked = np.stack([v.as_array() for v in vectors])
    return IndicatorVector.from_array(stacked.mean(axis=0))


def extract_directory(mask_dir, schema: CategorySchema, cfg: IndicatorConfig | None = None):
    """Compute per-point indicators for every ``<point_id>_<heading>.png`` under ``mask_dir``.

    Returns a DataFrame sorted by point id with one row per point and an
    ``n_views`` column.
    """
    import pandas as pd

    cfg = cfg or IndicatorConfig()
    per_point: dict[str, list[IndicatorVector]] = {}
    for path in sorted(Path(mask_dir).glob("*.png")):
        mask = load_mask(path, schema)
        per_point.setdefault(mask.point_id, []).append(compute_indicators(mask, schema, cfg))
    rows = []
    for pid in sorted(per_point):
        views = per_point[pid]
        if len(views) > 4:
            raise MaskError(f"point {pid!r} has {len(views)} views; at most 4 allowed")
        rows.append({"point_id": pid, **aggregate_views(views).as_dict(), "n_views": len(views)})
    return pd.DataFrame(rows, columns=["point_id", *INDICATOR_NAMES, "n_views"])
