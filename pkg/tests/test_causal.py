import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from streetsafety.causal import (
    CausalConfig, CausalError, GpsConfig, GpsModel, SeparationError, build_effect_matrix, estimate_effect,
    fit_gps_categorical, fit_gps_continuous, fit_treatment_model, gps_diagnostics, raw_weights, smd,
    smd_balance, significance_stars, truncate_weights, weighted_logistic,
)
from streetsafety.gbt import TrainConfig
from streetsafety.synth import CausalRecipe, SynthSpec, gen_confounded_sample, gen_logistic_sample

from oracles import cross_product_odds_ratio, nearest_rank

FAST = GpsConfig(train=TrainConfig(rounds=20, max_depth=2))


def table_from_counts(a, b, c, d):
    z = np.r_[np.ones(a + b), np.zeros(c + d)]
    y = np.r_[np.ones(a), np.zeros(b), np.ones(c), np.zeros(d)]
    return y, z


def continuous_gps(fitted, sigma):
    return GpsModel("t", "continuous", [], None, np.asarray(fitted, float), sigma)


def test_inverse_density_weights():
    w = raw_weights(continuous_gps([0.0, 0.0], 1.0), [0.0, 0.0])
    assert w[0] == pytest.approx(1 / norm.pdf(0.0), abs=1e-12)
    assert w[0] == pytest.approx(2.5066, abs=1e-4)
    w2 = raw_weights(continuous_gps([0.0], 2.0), [0.0])
    assert w2[0] == pytest.approx(1 / norm.pdf(0.0, scale=2.0), abs=1e-12)


def test_zero_sigma_is_rejected_after_being_flagged():
    df = pd.DataFrame({"x": np.arange(20.0), "t": np.arange(20.0) * 2})
    gps = continuous_gps(df["t"].to_numpy(), 0.0)
    gps.treatment, gps.covariates = "t", ["x"]
    assert gps_diagnostics(gps, df)["degenerate"] is True
    with pytest.raises(CausalError, match="sigma = 0"):
        raw_weights(gps, df["t"].to_numpy())


def test_categorical_weights_invert_probabilities():
    gps = GpsModel("t", "categorical", [], None, np.array([[0.5, 0.5], [0.75, 0.25], [1.0, 0.0]]),
                   levels=[0, 1])
    np.testing.assert_allclose(raw_weights(gps, [0, 1, 1]), [2.0, 4.0, 1e6])


def test_truncation_nearest_rank():
    out = truncate_weights([1.0, 1.0, 1.0, 100.0], 75)
    assert out.clamp == nearest_rank([1, 1, 1, 100], 75) == 1.0
    assert list(out.weights) == [1.0, 1.0, 1.0, 1.0]
    assert list(out.truncated) == [False, False, False, True]
    assert list(truncate_weights([3.0, 1.0], 100).weights) == [3.0, 1.0]
    assert list(truncate_weights([2.0] * 5, 60).weights) == [2.0] * 5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=50), st.floats(50.5, 100))
def test_truncation_caps_at_clamp(w, pct):
    out = truncate_weights(w, pct)
    assert out.weights.max() == out.clamp
    assert (out.weights > 0).all() and np.isfinite(out.weights).all()


def test_smd_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(50)
    assert smd(x, x)[0] == 0.0
    a = np.array([0.0, 2.0])      # mean 1, population variance 1
    b = np.array([-1.0, 1.0])     # mean 0, variance 1
    assert smd(a, b)[0] == pytest.approx(1.0)
    assert smd(a, b)[0] == smd(b, a)[0]


def test_two_by_two_odds_ratio():
    y, z = table_from_counts(30, 70, 10, 90)
    fit = weighted_logistic(y, z)
    assert math.exp(fit.coef[1]) == pytest.approx(cross_product_odds_ratio(30, 70, 10, 90), abs=1e-6)
    assert math.exp(fit.coef[1]) == pytest.approx(3.857, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 60), st.integers(1, 60))
def test_random_tables_match_closed_form(a, b, c, d):
    y, z = table_from_counts(a, b, c, d)
    fit = weighted_logistic(y, z)
    assert math.exp(fit.coef[1]) == pytest.approx(cross_product_odds_ratio(a, b, c, d), rel=1e-6)


def test_weight_scale_invariance():
    y, z = gen_logistic_sample(-0.5, 0.8, 2000, seed=3)
    w = np.random.default_rng(3).uniform(0.2, 5, 2000)
    a = weighted_logistic(y, z, w).coef
    b = weighted_logistic(y, z, 7.5 * w).coef
    np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)


def test_separation_is_reported():
    z = np.r_[np.zeros(20), np.ones(20)]
    y = z.copy()
    with pytest.raises(SeparationError, match="separated"):
        weighted_logistic(y, z)


def test_categorical_design_uses_most_frequent_baseline():
    rng = np.random.default_rng(4)
    z = rng.choice([0, 1, 2], p=[0.2, 0.5, 0.3], size=3000)
    y = (rng.random(3000) < np.where(z == 0, 0.4, 0.2)).astype(float)
    fit = weighted_logistic(y, z, categorical=True)
    assert fit.baseline == 1 and fit.levels == [0, 2]
    p0, p1 = y[z == 0].mean(), y[z == 1].mean()
    assert math.exp(fit.coef[1]) == pytest.approx((p0 / (1 - p0)) / (p1 / (1 - p1)), rel=1e-6)


def test_null_sample_slope_within_three_se():
    y, z = gen_logistic_sample(0.0, 0.0, 20000, seed=9)
    fit = weighted_logistic(y, z)
    p = 1 / (1 + np.exp(-(fit.coef[0] + fit.coef[1] * z)))
    X = np.column_stack([np.ones_like(z), z])
    se = math.sqrt(np.linalg.inv(X.T @ (X * (p * (1 - p))[:, None]))[1, 1])
    assert abs(fit.coef[1]) < 3 * se


def test_gps_fits_and_balance_on_confounded_data():
    df = gen_confounded_sample(SynthSpec(seed=1, causal=CausalRecipe(confounding=1.0)), 1500)
    gps, w = fit_gps_continuous(df, "z", ["u", "x1", "x2"], FAST)
    assert gps.residual_sigma > 0 and w.weights.max() == w.clamp
    report = smd_balance(df, "z", w, ["u", "x1", "x2"])
    assert report.improvement > 0
    diag = gps_diagnostics(gps, df, FAST)
    assert 0 < diag["r2"] < 1 and diag["rmse"] > 0


def test_randomized_categorical_weights_near_marginal():
    df = gen_confounded_sample(SynthSpec(seed=2, causal=CausalRecipe(confounding=0.0, kind="categorical")), 3000)
    gps, w = fit_gps_categorical(df, "z", ["u", "x1", "x2"], FAST)
    freq = df["z"].map(df["z"].value_counts(normalize=True)).to_numpy()
    assert np.median(np.abs(w.weights * freq - 1)) < 0.1


def test_level_with_one_sample_is_rejected():
    df = pd.DataFrame({"x": np.arange(10.0), "t": [0] * 9 + [1]})
    with pytest.raises(CausalError, match="< 2 samples"):
        fit_treatment_model(df, "t", "categorical", ["x"], FAST)


def test_effect_without_bootstrap_has_no_interval():
    df = gen_confounded_sample(SynthSpec(seed=3), 800)
    est = estimate_effect(df, "z", 1, CausalConfig(bootstrap=0, gps=FAST), kind="continuous",
                          covariates=["u", "x1", "x2"], outcome_col="y")
    assert est.ci_low is None and est.p_value is None and est.stars == ""


def test_bootstrap_is_deterministic():
    df = gen_confounded_sample(SynthSpec(seed=4), 600)
    cfg = CausalConfig(bootstrap=10, seed=11, gps=FAST)
    kw = dict(kind="continuous", covariates=["u", "x1", "x2"], outcome_col="y")
    a = estimate_effect(df, "z", 1, cfg, **kw)
    b = estimate_effect(df, "z", 1, cfg, **kw)
    assert (a.ci_low, a.ci_high, a.p_value) == (b.ci_low, b.ci_high, b.p_value)
    assert a.ci_low <= a.odds_ratio <= a.ci_high


def test_unconfounded_weighted_and_naive_agree():
    df = gen_confounded_sample(SynthSpec(seed=5, causal=CausalRecipe(confounding=0.0, beta1=0.5)), 3000)
    kw = dict(kind="continuous", covariates=["u", "x1", "x2"], outcome_col="y")
    est = estimate_effect(df, "z", 1, CausalConfig(bootstrap=30, gps=FAST), **kw)
    naive = weighted_logistic(df["y"], df["z"]).coef[1]
    se = abs(est.beta1) / norm.isf(est.p_value / 2)
    assert abs(est.beta1 - naive) < 2 * se


def test_single_cell_matrix():
    df = gen_confounded_sample(SynthSpec(seed=6), 500).rename(columns={"z": "bc", "u": "vc", "x1": "dar"})
    df["accident_class"] = np.where(df["y"] == 1, "Crash", "Collision")
    m = build_effect_matrix(df.drop(columns="y"), CausalConfig(bootstrap=5, gps=FAST), treatments=["bc"],
                            outcomes=["Crash"])
    frame = m.to_frame()
    assert m.complete and len(frame) == 1
    assert list(frame.columns) == ["treatment", "outcome", "or", "ci_low", "ci_high", "p", "stars", "n", "b"]


def test_stars():
    assert [significance_stars(p) for p in (0.2, 0.04, 0.009, 0.0005, None)] == ["", "*", "**", "***", ""]
