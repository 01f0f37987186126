import json

import numpy as np
import pandas as pd
import pytest

from streetsafety.causal import weighted_logistic
from streetsafety.dataset import ACCIDENT_CLASSES, load_mapping
from streetsafety.indicators import CategorySchema, compute_indicators
from streetsafety.synth import (
    CausalRecipe, SceneRecipe, SynthError, SynthSpec, gen_confounded_sample, gen_logistic_sample, gen_scene,
    gen_scene_masks, write_synthetic_city,
)

SCHEMA = CategorySchema.default()


def test_random_scenes_reproduce_planted_indicators():
    for mask, expected in gen_scene_masks(SynthSpec(seed=5, n_random_scenes=20)):
        got = compute_indicators(mask, SCHEMA)
        for name in ("sor", "bor", "vo", "dar", "es", "sr", "vc", "vd", "vod"):
            assert getattr(got, name) == getattr(expected, name), name
        assert got.bc == pytest.approx(expected.bc, abs=1e-12)
        assert got.tsi == pytest.approx(expected.tsi, abs=1e-12)


def test_infeasible_recipes_are_rejected():
    with pytest.raises(SynthError, match="more than 1"):
        gen_scene(SceneRecipe({"road": 0.7, "sky": 0.4}))
    with pytest.raises(SynthError):
        gen_scene(SceneRecipe({"road": 0.99}, obstacles=20))
    with pytest.raises(SynthError, match="unplanned"):
        gen_scene(SceneRecipe({"pole": 0.1}))


def test_scene_generation_is_seeded():
    a = gen_scene_masks(SynthSpec(seed=1, n_random_scenes=3))
    b = gen_scene_masks(SynthSpec(seed=1, n_random_scenes=3))
    for (ma, ea), (mb, eb) in zip(a, b):
        assert np.array_equal(ma.data, mb.data) and ea == eb


def test_unconfounded_sample_recovers_odds_ratio():
    spec = SynthSpec(seed=0, causal=CausalRecipe(confounding=0.0, outcome_confounding=0.0, beta1=np.log(2)))
    df = gen_confounded_sample(spec, 20000)
    assert df.attrs["true_or"] == pytest.approx(2.0)
    fit = weighted_logistic(df["y"], df["z"])
    assert abs(np.exp(fit.coef[1]) - 2.0) < 0.15


def test_confounded_sample_is_seeded_and_standardized():
    spec = SynthSpec(seed=3)
    a, b = gen_confounded_sample(spec, 500), gen_confounded_sample(spec, 500)
    pd.testing.assert_frame_equal(a, b)
    assert a["z"].mean() == pytest.approx(0, abs=1e-12) and a["z"].std(ddof=0) == pytest.approx(1)
    cat = gen_confounded_sample(SynthSpec(seed=3, causal=CausalRecipe(kind="categorical")), 500)
    assert set(cat["z"]) == {0, 1, 2}


def test_degenerate_outcome_is_rejected():
    with pytest.raises(SynthError, match="degenerate"):
        gen_confounded_sample(SynthSpec(causal=CausalRecipe(beta0=-30.0)), 200)


def test_logistic_sample():
    y, z = gen_logistic_sample(0.0, 1.0, 1000, seed=2)
    y2, z2 = gen_logistic_sample(0.0, 1.0, 1000, seed=2)
    assert np.array_equal(y, y2) and np.array_equal(z, z2)
    assert set(np.unique(y)) == {0.0, 1.0}


def test_synthetic_city_layout(tmp_path):
    paths = write_synthetic_city(tmp_path / "city", n_points=40, seed=1, size=32)
    masks = list((tmp_path / "city" / "masks").glob("*.png"))
    assert 100 < len(masks) <= 160
    accidents = pd.read_csv(paths["accidents_csv"])
    assert len(accidents) == 40
    mapping = load_mapping(paths["mapping_json"])
    assert set(accidents["raw_type"]) <= set(mapping)
    assert set(mapping.values()) == set(ACCIDENT_CLASSES)
    CategorySchema.load(paths["schema_json"])
    assert json.loads((tmp_path / "city" / "mapping.json").read_text()) == mapping
