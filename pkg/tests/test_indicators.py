import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streetsafety.indicators import (
    INDICATOR_NAMES, CategorySchema, IndicatorConfig, IndicatorVector, LabelMask, MaskError,
    aggregate_views, background_complexity, compute_indicators, connected_components, extract_directory,
    load_mask, parse_mask_name, save_mask_png, sight_obstruction_risk, traffic_sign_integrity,
    validate_mask, visible_obstacle_density,
)
from streetsafety.synth import SceneRecipe, gen_scene

from oracles import entropy_ratio, flood_fill_components

SCHEMA = CategorySchema.default()
CFG = IndicatorConfig()
ID = SCHEMA.id_of


def mask_of(grid):
    return validate_mask(np.asarray(grid), SCHEMA)


def test_ratio_recipe_road_sky_vegetation():
    mask, expected = gen_scene(SceneRecipe({"road": 0.6, "sky": 0.3, "vegetation": 0.1}))
    iv = compute_indicators(mask, SCHEMA)
    assert iv.dar == 0.6 and iv.vo == 0.3 and iv.vc == 0.1
    assert iv == expected


def test_single_class_mask_has_zero_complexity():
    mask = mask_of(np.full((20, 20), ID("road")))
    assert background_complexity(mask) == 0.0
    assert compute_indicators(mask, SCHEMA).dar == 1.0


def test_two_equal_classes_give_unit_complexity():
    grid = np.full((10, 10), ID("road"))
    grid[:5] = ID("sky")
    assert background_complexity(mask_of(grid)) == pytest.approx(1.0, abs=1e-12)


def test_complexity_matches_entropy_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        grid = rng.integers(0, 5, size=(16, 16))
        counts = np.bincount(grid.ravel())
        assert background_complexity(mask_of(grid)) == pytest.approx(entropy_ratio(counts), abs=1e-12)


def test_planted_obstacles_density():
    mask, _ = gen_scene(SceneRecipe({"road": 0.5}, obstacles=4))
    assert visible_obstacle_density(mask, CFG, SCHEMA) == 4.0


def test_square_sign_circularity():
    mask, _ = gen_scene(SceneRecipe({"road": 0.5}, signs=[(10, 10)]))
    assert traffic_sign_integrity(mask, CFG, SCHEMA) == pytest.approx(math.pi / 4, abs=1e-12)


def test_no_signs_means_zero_integrity():
    mask = mask_of(np.full((10, 10), ID("road")))
    assert traffic_sign_integrity(mask, CFG, SCHEMA) == 0.0


def test_small_components_are_dropped():
    grid = np.full((20, 20), ID("road"))
    grid[2:4, 2:4] = ID("pole")   # 4 px, below the 5 px floor
    grid[10:13, 10:13] = ID("pole")
    assert visible_obstacle_density(mask_of(grid), CFG, SCHEMA) == pytest.approx(1 / (400 / 10000))


def test_diagonal_touch_depends_on_connectivity():
    grid = np.full((10, 10), ID("road"))
    grid[0:3, 0:3] = ID("pole")
    grid[3:6, 3:6] = ID("pole")
    mask = mask_of(grid)
    four = connected_components(mask, {ID("pole")}, IndicatorConfig(connectivity=4))
    eight = connected_components(mask, {ID("pole")}, IndicatorConfig(connectivity=8))
    assert [c.area for c in four] == [9, 9]
    assert [c.area for c in eight] == [18]


def test_component_perimeter_counts_exposed_edges():
    grid = np.full((10, 10), ID("road"))
    grid[2:5, 2:7] = ID("traffic sign")
    (comp,) = connected_components(mask_of(grid), {ID("traffic sign")}, CFG)
    assert comp.area == 15 and comp.perimeter == 16 and comp.bbox == (2, 5, 2, 7)


def test_sight_obstruction_uses_center_region():
    grid = np.full((100, 100), ID("road"))
    grid[:33, :] = ID("building")   # above the center band
    grid[:, :25] = ID("building")   # left of it
    assert sight_obstruction_risk(mask_of(grid), CFG, SCHEMA) == 0.0
    grid[33:, 25:75] = ID("vegetation")
    assert sight_obstruction_risk(mask_of(grid), CFG, SCHEMA) == 1.0


def test_unknown_class_reports_pixel():
    grid = np.zeros((4, 4), int)
    grid[2, 3] = 99
    with pytest.raises(MaskError, match=r"row=2, col=3"):
        validate_mask(grid, SCHEMA)


def test_mask_name_parsing():
    assert parse_mask_name("p17_90.png") == ("p17", 90)
    assert parse_mask_name("a_b_270.npy") == ("a_b", 270)
    with pytest.raises(MaskError):
        parse_mask_name("p17_45.png")


def test_png_roundtrip_and_directory_extraction(tmp_path):
    rng = np.random.default_rng(0)
    for pid in ("a", "b"):
        for heading in (0, 90, 180, 270):
            m = validate_mask(rng.integers(0, 19, size=(24, 24)), SCHEMA, pid, heading)
            save_mask_png(m, tmp_path / f"{pid}_{heading}.png")
    back = load_mask(tmp_path / "a_0.png", SCHEMA)
    assert back.data.shape == (24, 24)
    df = extract_directory(tmp_path, SCHEMA)
    assert list(df["point_id"]) == ["a", "b"]
    assert (df["n_views"] == 4).all()
    views = [compute_indicators(load_mask(tmp_path / f"a_{h}.png", SCHEMA), SCHEMA) for h in (0, 90, 180, 270)]
    np.testing.assert_allclose(df.loc[0, list(INDICATOR_NAMES)].to_numpy(float), aggregate_views(views).as_array())


def test_aggregate_is_mean():
    a = IndicatorVector.from_array(np.arange(11.0))
    b = IndicatorVector.from_array(np.arange(11.0) + 2)
    np.testing.assert_allclose(aggregate_views([a, b]).as_array(), np.arange(11.0) + 1)
    with pytest.raises(ValueError):
        aggregate_views([])


def test_schema_roundtrip():
    assert CategorySchema.from_dict(SCHEMA.to_dict()) == SCHEMA


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_components_match_flood_fill(seed):
    rng = np.random.default_rng(seed)
    on = rng.random((32, 32)) < 0.45
    grid = np.where(on, ID("pole"), ID("road"))
    cfg = IndicatorConfig(min_component_px=1)
    areas = [c.area for c in connected_components(mask_of(grid), {ID("pole")}, cfg)]
    assert sorted(areas) == sorted(flood_fill_components(on))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ratios_invariant_to_pixel_permutation(seed):
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, 19, size=(20, 20))
    a = compute_indicators(mask_of(grid), SCHEMA)
    b = compute_indicators(mask_of(rng.permutation(grid.ravel()).reshape(20, 20)), SCHEMA)
    for name in ("bc", "bor", "vo", "dar", "es", "sr", "vc", "vd"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3))
def test_ratios_invariant_to_nearest_upscaling(seed, factor):
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, 19, size=(12, 12))
    big = np.kron(grid, np.ones((factor, factor), dtype=grid.dtype))
    a = compute_indicators(mask_of(grid), SCHEMA)
    b = compute_indicators(mask_of(big), SCHEMA)
    for name in ("bc", "bor", "vo", "dar", "es", "sr", "vc", "vd"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)


def test_two_disjoint_blocks():
    grid = np.full((12, 12), ID("road"))
    grid[1:4, 1:4] = ID("pole")
    grid[6:9, 6:9] = ID("pole")
    comps = connected_components(mask_of(grid), {ID("pole")}, CFG)
    assert [(c.area, c.perimeter) for c in comps] == [(9, 12), (9, 12)]


def test_half_vegetation_center_region():
    grid = np.full((100, 100), ID("road"))
    r0, c0 = 33, 25   # center region rows 33..99, cols 25..74
    region = np.zeros((100 - r0, 50), bool)
    region.ravel()[: region.size // 2] = True
    grid[r0:, c0:c0 + 50][region] = ID("vegetation")
    count = 0
    for r in range(r0, 100):
        for c in range(c0, c0 + 50):
            count += grid[r, c] == ID("vegetation")
    assert count / region.size == 0.5
    assert sight_obstruction_risk(mask_of(grid), CFG, SCHEMA) == 0.5


def test_two_identical_square_signs():
    mask, _ = gen_scene(SceneRecipe({"road": 0.5}, signs=[(10, 10), (10, 10)]))
    assert traffic_sign_integrity(mask, CFG, SCHEMA) == pytest.approx(0.7854, abs=1e-4)
