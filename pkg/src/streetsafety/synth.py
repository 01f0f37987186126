"""Synthetic scenes and tables with known ground truth.

Scenes are assembled from axis-aligned blocks, so every indicator has a
closed-form expected value. Tabular samples come from a logistic outcome
model with a planted confounder, so the true odds ratio is known.
All randomness uses numpy's PCG64 generator seeded from the ``SynthSpec`` seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import entropy

from .dataset import ACCIDENT_CLASSES, DEFAULT_ACCIDENT_MAPPING, ROAD_CATEGORIES, ROAD_TYPES
from .indicators import (
    CategorySchema, IndicatorConfig, IndicatorVector, LabelMask, center_bounds, save_mask_png,
    validate_mask,
)

RNG_NAME = "numpy.random.PCG64"

BACKGROUND_CLASSES = ("road", "sidewalk", "building", "vegetation", "terrain", "sky",
                      "car", "truck", "bus", "person")


class SynthError(ValueError):
    pass


@dataclass
class SceneRecipe:
    """Class proportions of the whole image plus planted objects.

    ``proportions`` times ``width * height`` must be whole pixel counts;
    pixels left over go to ``filler``. Obstacle blocks use ``obstacle_class``
    and signs are rectangles of ``sign_class``, all separated by a 1 px gap.
    """

    proportions: dict[str, float]
    width: int = 100
    height: int = 100
    obstacles: int = 0
    obstacle_size: tuple[int, int] = (3, 3)
    signs: list[tuple[int, int]] = field(default_factory=list)
    filler: str = "person"
    obstacle_class: str = "pole"
    sign_class: str = "traffic sign"


@dataclass
class CausalRecipe:
    confounding: float = 1.0      # a: treatment loading on the confounder
    outcome_confounding: float = 1.0  # gamma: outcome loading on the confounder
    beta0: float = -1.0
    beta1: float = 0.0            # log of the true conditional odds ratio
    kind: str = "continuous"
    n_noise: int = 2
    noise_sd: float = 1.0

    @property
    def true_or(self) -> float:
        return math.exp(self.beta1)


@dataclass
class SynthSpec:
    seed: int = 0
    scenes: list[SceneRecipe] = field(default_factory=list)
    n_random_scenes: int = 0
    causal: CausalRecipe = field(default_factory=CausalRecipe)

    def echo(self) -> dict:
        return {"rng": RNG_NAME, **asdict(self)}


# ---------------------------------------------------------------------------
# scenes


def _pack_objects(shapes, width, height):
    """Place rectangles left-to-right in shelves with a 1 px gap; returns top-left corners."""
    corners = []
    x = y = 0
    shelf = 0
    for h, w in shapes:
        if w > width:
            raise SynthError(f"object {h}x{w} wider than the image")
        if x + w > width:
            x, y = 0, y + shelf + 1
            shelf = 0
        if y + h > height:
            raise SynthError("planted objects do not fit in the image")
        corners.append((y, x))
        x += w + 1
        shelf = max(shelf, h)
    return corners


def gen_scene(recipe: SceneRecipe, schema: CategorySchema | None = None,
              cfg: IndicatorConfig | None = None, point_id: str = "", heading: int = 0):
    """Build one mask and the indicator vector it must produce."""
    schema = schema or CategorySchema.default()
    cfg = cfg or IndicatorConfig()
    total = recipe.width * recipe.height
    if sum(recipe.proportions.values()) > 1 + 1e-12:
        raise SynthError("class proportions sum to more than 1")
    obstacle_ids = cfg.role(schema, "obstacle") | cfg.role(schema, "traffic_sign")
    for name in [*recipe.proportions, recipe.filler]:
        if schema.id_of(name) in obstacle_ids:
            raise SynthError(f"background class {name!r} would add unplanned components")
    for h, w in [recipe.obstacle_size] * recipe.obstacles + list(recipe.signs):
        if h * w < cfg.min_component_px:
            raise SynthError(f"planted {h}x{w} object is below min_component_px")

    counts = {}
    for name, p in recipe.proportions.items():
        c = p * total
        if abs(c - round(c)) > 1e-6:
            raise SynthError(f"proportion {p} of {name!r} is not a whole pixel count")
        counts[name] = int(round(c))

    shapes = [recipe.obstacle_size] * recipe.obstacles + list(recipe.signs)
    corners = _pack_objects(shapes, recipe.width, recipe.height)
    grid = np.full((recipe.height, recipe.width), -1, dtype=np.int64)
    obstacle_px = sign_px = 0
    for i, ((h, w), (r, c)) in enumerate(zip(shapes, corners)):
        is_sign = i >= recipe.obstacles
        grid[r:r + h, c:c + w] = schema.id_of(recipe.sign_class if is_sign else recipe.obstacle_class)
        if is_sign:
            sign_px += h * w
        else:
            obstacle_px += h * w
    free = total - obstacle_px - sign_px
    used = sum(counts.values())
    if used > free:
        raise SynthError(f"recipe needs {used} background pixels but only {free} remain")
    counts[recipe.filler] = counts.get(recipe.filler, 0) + free - used

    fill = np.concatenate([np.full(n, schema.id_of(name), dtype=np.int64) for name, n in counts.items()])
    grid[grid < 0] = fill
    mask = validate_mask(grid, schema, point_id, heading)

    final = dict(counts)
    final[recipe.obstacle_class] = final.get(recipe.obstacle_class, 0) + obstacle_px
    final[recipe.sign_class] = final.get(recipe.sign_class, 0) + sign_px
    by_id = np.zeros(schema.n_classes, dtype=np.int64)
    for name, n in final.items():
        by_id[schema.id_of(name)] += n

    def ratio(*roles):
        ids = set().union(*(cfg.role(schema, r) for r in roles))
        return int(sum(by_id[i] for i in ids)) / total

    present = by_id[by_id > 0]
    bc = float(entropy(present) / math.log(len(present))) if len(present) > 1 else 0.0
    r0, r1, c0, c1 = center_bounds(mask, cfg)
    center = mask.data[r0:r1, c0:c1]
    sor = int(np.isin(center, list(cfg.role(schema, "obstruction"))).sum()) / center.size
    circ = [min(4 * math.pi * h * w / (2 * (h + w)) ** 2, 1.0) for h, w in recipe.signs]
    expected = IndicatorVector(
        bc=min(max(bc, 0.0), 1.0), sor=sor, bor=ratio("building"),
        vod=(recipe.obstacles + len(recipe.signs)) / (total / 10000.0),
        vo=ratio("sky", "terrain"), dar=ratio("road"), es=ratio("escape"), sr=ratio("sidewalk"),
        vc=ratio("vegetation"), tsi=float(np.mean(circ)) if circ else 0.0, vd=ratio("vehicle"),
    )
    return mask, expected


def random_recipe(rng: np.random.Generator, width: int = 100, height: int = 100,
                  max_obstacles: int = 6, max_signs: int = 3, square_signs: bool = True) -> SceneRecipe:
    total = width * height
    k = int(rng.integers(2, len(BACKGROUND_CLASSES) + 1))
    names = [str(n) for n in rng.choice(BACKGROUND_CLASSES, size=k, replace=False)]
    budget = int(total * 0.8)
    share = rng.dirichlet(np.ones(k))
    px = np.floor(share * budget).astype(int)
    sizes = rng.integers(3, 13, size=int(rng.integers(0, max_signs + 1)))
    if square_signs:
        signs = [(int(s), int(s)) for s in sizes]
    else:
        signs = [(int(s), int(rng.integers(3, 13))) for s in sizes]
    return SceneRecipe(
        {n: int(p) / total for n, p in zip(names, px)},
        width, height, int(rng.integers(0, max_obstacles + 1)), (3, 3), signs,
    )


def gen_scene_masks(spec: SynthSpec, schema: CategorySchema | None = None, cfg: IndicatorConfig | None = None):
    """Masks for the explicit recipes in the given ``SynthSpec`` followed by ``n_random_scenes`` random ones."""
    rng = np.random.default_rng(spec.seed)
    recipes = list(spec.scenes) + [random_recipe(rng) for _ in range(spec.n_random_scenes)]
    return [gen_scene(r, schema, cfg, point_id=f"s{i}") for i, r in enumerate(recipes)]


# ---------------------------------------------------------------------------
# tabular samples


def gen_logistic_sample(beta0: float, beta1: float, n: int, seed: int):
    if n < 10:
        raise SynthError("n must be at least 10")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    y = (rng.random(n) < expit(beta0 + beta1 * z)).astype(float)
    return y, z


def gen_confounded_sample(spec: SynthSpec, n: int) -> pd.DataFrame:
    """Table with confounder ``u``, noise covariates ``x1..``, treatment ``z`` and outcome ``y``.

    Continuous: ``z`` is the z-scored ``a*u + noise`` and
    ``logit P(y) = beta0 + beta1*z + gamma*u``. Categorical: ``z`` takes
    levels 0/1/2 with log-odds ``(0, a*u, -a*u)`` and ``beta1`` applies to
    level 1 against level 0. ``df.attrs["true_or"]`` holds ``exp(beta1)``.
    """
    if n < 100:
        raise SynthError("n must be at least 100")
    c = spec.causal
    rng = np.random.default_rng(spec.seed)
    u = rng.standard_normal(n)
    noise = rng.standard_normal((n, c.n_noise))
    if c.kind == "continuous":
        raw = c.confounding * u + c.noise_sd * rng.standard_normal(n)
        z = (raw - raw.mean()) / raw.std()
        effect = c.beta1 * z
    elif c.kind == "categorical":
        logits = np.column_stack([np.zeros(n), c.confounding * u, -c.confounding * u])
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        z = (rng.random(n)[:, None] > np.cumsum(p, axis=1)).sum(axis=1)
        effect = c.beta1 * (z == 1)
    else:
        raise SynthError(f"unknown treatment kind {c.kind!r}")
    y = (rng.random(n) < expit(c.beta0 + effect + c.outcome_confounding * u)).astype(int)
    events = int(y.sum())
    if events < 5 or n - events < 5:
        raise SynthError(f"degenerate outcome: {events} events out of {n}")
    df = pd.DataFrame({"u": u, **{f"x{j + 1}": noise[:, j] for j in range(c.n_noise)}, "z": z, "y": y})
    df.attrs["true_or"] = c.true_or
    return df


# ---------------------------------------------------------------------------
# synthetic city


INDICATOR_WEIGHTS = {
    # per accident class: weights on (dar, vc, bor, vd, vod, road PrincipalTag)
    "Collision":        (2.0, -1.0, 0.0, 3.0, 0.0, 0.6),
    "Crash":            (1.0, 0.0, -1.5, 2.0, 0.3, 0.8),
    "VehicleBreakdown": (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    "TrafficHazard":    (-1.0, 1.5, 1.0, 0.0, 0.5, -0.4),
    "Debris":           (-2.0, 2.5, 0.0, -1.0, 0.0, -0.6),
}


def _city_recipe(rng, urban: float, size: int) -> SceneRecipe:
    total = size * size
    base = {
        "road": 0.25 + 0.15 * urban, "sidewalk": 0.04 + 0.06 * urban, "building": 0.05 + 0.25 * urban,
        "vegetation": 0.30 - 0.22 * urban, "terrain": 0.10 - 0.07 * urban, "sky": 0.18 - 0.05 * urban,
        "car": 0.01 + 0.05 * urban, "truck": 0.005 + 0.01 * urban,
    }
    share = rng.dirichlet(np.array(list(base.values())) * 60)
    n_signs = int(rng.poisson(0.6 + 1.2 * urban))
    signs = []
    for _ in range(min(n_signs, 3)):
        h = int(rng.integers(3, 9))
        w = h if rng.random() < 0.6 else int(rng.integers(3, 9))
        signs.append((h, w))
    n_obstacles = int(rng.poisson(1 + 3 * urban))
    planted = 9 * n_obstacles + sum(h * w for h, w in signs)
    budget = int((total - planted) * 0.9)
    px = np.floor(share * budget).astype(int)
    return SceneRecipe({n: int(p) / total for n, p in zip(base, px)}, size, size, n_obstacles, (3, 3), signs)


def write_synthetic_city(out_dir, n_points: int = 500, seed: int = 0, size: int = 64,
                         schema: CategorySchema | None = None) -> dict:
    """Write masks, accidents, roads, mapping, schema and a run config under ``out_dir``.

    Accident classes follow a multinomial logit in the planted indicators and
    road type, so the classifier and effect estimates have real signal.
    Returns the paths written.
    """
    schema = schema or CategorySchema.default()
    cfg = IndicatorConfig()
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    mask_dir = out / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)

    urban = rng.beta(2, 2, size=n_points)
    lon = -97.80 + 0.12 * np.clip(urban + 0.15 * rng.standard_normal(n_points), 0, 1)
    lat = 30.22 + 0.12 * rng.random(n_points)
    road_p = np.column_stack([0.35 - 0.2 * urban, 0.12 + 0.0 * urban, 0.33 - 0.1 * urban, 0.2 + 0.3 * urban])
    road_p /= road_p.sum(axis=1, keepdims=True)
    road_idx = (rng.random(n_points)[:, None] > np.cumsum(road_p, axis=1)).sum(axis=1)

    raw_by_class = {c: [r for r, k in DEFAULT_ACCIDENT_MAPPING.items() if k == c] for c in ACCIDENT_CLASSES}
    accidents, roads = [], []
    width = len(str(n_points))
    for i in range(n_points):
        pid = f"p{i:0{width}d}"
        n_views = 4 if rng.random() > 0.05 else int(rng.integers(1, 4))
        skip_all = rng.random() < 0.01
        views = []
        for heading in (0, 90, 180, 270)[:n_views]:
            mask, expected = gen_scene(_city_recipe(rng, urban[i], size), schema, cfg, pid, heading)
            if not skip_all:
                save_mask_png(mask, mask_dir / f"{pid}_{heading}.png")
            views.append(expected.as_array())
        v = np.mean(views, axis=0)
        d = dict(zip(("bc", "sor", "bor", "vod", "vo", "dar", "es", "sr", "vc", "tsi", "vd"), v))
        feats = np.array([d["dar"], d["vc"], d["bor"], d["vd"] * 10, d["vod"] / 1000, road_idx[i] == 3])
        scores = np.array([np.dot(INDICATOR_WEIGHTS[c], feats) for c in ACCIDENT_CLASSES])
        scores = scores + np.array([-0.3, 0.0, 0.8, 0.7, 0.8])
        p = np.exp(scores - scores.max())
        p /= p.sum()
        cls = ACCIDENT_CLASSES[int(rng.choice(len(ACCIDENT_CLASSES), p=p))]
        raw = str(rng.choice(raw_by_class[cls]))
        ts = pd.Timestamp("2024-02-01") + pd.Timedelta(minutes=int(rng.integers(0, 365 * 24 * 60)))
        accidents.append({"point_id": pid, "timestamp": ts.isoformat(), "raw_type": raw,
                          "lon": round(float(lon[i]), 6), "lat": round(float(lat[i]), 6)})
        cat = ROAD_CATEGORIES[road_idx[i]]
        roads.append({"point_id": pid, "road_category": str(rng.choice(ROAD_TYPES[cat]))})

    paths = {
        "masks_dir": str(mask_dir),
        "accidents_csv": str(out / "accidents.csv"),
        "roads_csv": str(out / "roads.csv"),
        "mapping_json": str(out / "mapping.json"),
        "schema_json": str(out / "schema.json"),
    }
    pd.DataFrame(accidents).to_csv(paths["accidents_csv"], index=False)
    pd.DataFrame(roads).to_csv(paths["roads_csv"], index=False)
    Path(paths["mapping_json"]).write_text(json.dumps(DEFAULT_ACCIDENT_MAPPING, indent=2) + "\n")
    Path(paths["schema_json"]).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")
    return paths
