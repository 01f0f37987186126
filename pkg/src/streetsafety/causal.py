"""Generalized propensity score weighting and weighted logistic effect estimation.

Each (treatment, accident class) cell is estimated by: fit a treatment
model on the remaining covariates, turn it into inverse-density (or
inverse-probability) weights, truncate them, and fit a weighted one-vs-rest
logistic regression. Uncertainty comes from a refit-everything bootstrap.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit

from .dataset import ACCIDENT_CLASSES, FEATURES
from .gbt import FitError, TrainConfig, TreeEnsemble, fit_multiclass, fit_regressor

log = logging.getLogger(__name__)

CATEGORICAL_TREATMENTS = ("road_code",)


class CausalError(ValueError):
    pass


class SeparationError(CausalError):
    pass


class ConvergenceError(CausalError):
    pass


@dataclass(frozen=True)
class GpsConfig:
    train: TrainConfig = TrainConfig(rounds=50, max_depth=3, learning_rate=0.1)
    truncation_percentile: float = 99.0
    # continuous only: multiply 1/f(z|x) by the marginal density f(z)
    stabilized: bool = True
    prob_floor: float = 1e-6

    def __post_init__(self):
        if not 50 < self.truncation_percentile <= 100:
            raise ValueError("truncation_percentile must lie in (50, 100]")


@dataclass(frozen=True)
class CausalConfig:
    bootstrap: int = 500
    seed: int = 0
    gps: GpsConfig = GpsConfig()
    max_fail_fraction: float = 0.2


@dataclass
class GpsModel:
    treatment: str
    kind: str                       # "continuous" or "categorical"
    covariates: list[str]
    model: TreeEnsemble
    fitted: np.ndarray              # in-sample Z-hat (continuous) or level probabilities (categorical)
    residual_sigma: float | None = None
    levels: list | None = None
    truncation_percentile: float = 99.0


@dataclass
class WeightVector:
    weights: np.ndarray
    truncated: np.ndarray
    raw: np.ndarray
    clamp: float | None = None


@dataclass
class BalanceReport:
    treatment: str
    covariates: list[str]
    smd_before: np.ndarray
    smd_after: np.ndarray
    r2: float | None = None
    rmse: float | None = None
    accuracy: float | None = None

    @property
    def improvement(self) -> float:
        return float(self.smd_before.mean() - self.smd_after.mean())

    def to_dict(self) -> dict:
        return {
            "treatment": self.treatment,
            "r2": self.r2, "rmse": self.rmse, "accuracy": self.accuracy,
            "smd_improvement": self.improvement,
            "mean_smd_before": float(self.smd_before.mean()),
            "mean_smd_after": float(self.smd_after.mean()),
            "smd": {c: {"before": float(b), "after": float(a)}
                    for c, b, a in zip(self.covariates, self.smd_before, self.smd_after)},
        }


@dataclass
class LogisticFit:
    coef: np.ndarray                # intercept first
    levels: list | None = None      # non-baseline levels matching coef[1:] (categorical)
    baseline: object = None
    n_iter: int = 0


@dataclass
class LevelEffect:
    level: object
    odds_ratio: float
    ci_low: float | None
    ci_high: float | None
    p_value: float | None


@dataclass
class EffectEstimate:
    treatment: str
    outcome: object
    beta0: float
    beta1: float
    odds_ratio: float
    ci_low: float | None
    ci_high: float | None
    p_value: float | None
    n: int
    b: int
    n_failed: int = 0
    levels: list[LevelEffect] = field(default_factory=list)
    baseline: object = None
    headline_level: object = None

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)

    def to_row(self) -> dict:
        return {
            "treatment": self.treatment, "outcome": self.outcome, "or": self.odds_ratio,
            "ci_low": self.ci_low, "ci_high": self.ci_high, "p": self.p_value,
            "stars": self.stars, "n": self.n, "b": self.b,
        }


def significance_stars(p: float | None) -> str:
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


# ---------------------------------------------------------------------------
# weights


def _covariates(data: pd.DataFrame, treatment: str, covariates) -> list[str]:
    if covariates is None:
        covariates = [c for c in FEATURES if c != treatment and c in data.columns]
    covariates = list(covariates)
    if not covariates:
        raise CausalError(f"no covariates available to model treatment {treatment!r}")
    return covariates


def fit_treatment_model(data: pd.DataFrame, treatment: str, kind: str, covariates=None,
                        cfg: GpsConfig = GpsConfig()) -> GpsModel:
    covs = _covariates(data, treatment, covariates)
    X = data[covs].to_numpy(float)
    z = data[treatment].to_numpy()
    if kind == "continuous":
        z = z.astype(float)
        if np.ptp(z) == 0:
            raise CausalError(f"treatment {treatment!r} is constant")
        model = fit_regressor(X, z, cfg.train)
        zhat = model.predict(X)
        sigma = float(np.std(z - zhat))
        return GpsModel(treatment, kind, covs, model, zhat, sigma, None, cfg.truncation_percentile)
    if kind == "categorical":
        levels, counts = np.unique(z, return_counts=True)
        if len(levels) < 2:
            raise CausalError(f"treatment {treatment!r} has a single level")
        if (counts < 2).any():
            raise CausalError(f"treatment {treatment!r} levels with < 2 samples: {levels[counts < 2].tolist()}")
        model = fit_multiclass(X, z, cfg.train, classes=levels.tolist())
        return GpsModel(treatment, kind, covs, model, model.predict_proba(X), None, levels.tolist(),
                        cfg.truncation_percentile)
    raise ValueError(f"unknown treatment kind {kind!r}")


def normal_pdf(x, sigma):
    return np.exp(-0.5 * (np.asarray(x) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def raw_weights(gps: GpsModel, z, stabilized: bool = False, prob_floor: float = 1e-6) -> np.ndarray:
    z = np.asarray(z)
    if gps.kind == "continuous":
        if not gps.residual_sigma or gps.residual_sigma <= 0:
            raise CausalError(f"treatment {gps.treatment!r} is predicted perfectly (sigma = 0); no overlap")
        z = z.astype(float)
        w = 1.0 / normal_pdf(z - gps.fitted, gps.residual_sigma)
        if stabilized:
            w = w * normal_pdf(z - z.mean(), z.std())
        return w
    idx = {lvl: i for i, lvl in enumerate(gps.levels)}
    cols = np.array([idx[v] for v in z.tolist()])
    p = np.maximum(gps.fitted[np.arange(len(z)), cols], prob_floor)
    return 1.0 / p


def truncate_weights(w, percentile: float) -> WeightVector:
    """Clamp weights above the nearest-rank ``percentile`` value."""
    if isinstance(w, WeightVector):
        w = w.raw
    w = np.asarray(w, dtype=float)
    if not 50 < percentile <= 100:
        raise ValueError("percentile must lie in (50, 100]")
    if percentile == 100:
        return WeightVector(w.copy(), np.zeros(len(w), bool), w.copy(), float(w.max()))
    rank = math.ceil(percentile / 100.0 * len(w))
    clamp = float(np.sort(w)[max(rank, 1) - 1])
    truncated = w > clamp
    return WeightVector(np.minimum(w, clamp), truncated, w.copy(), clamp)


def _fit_gps(data, treatment, kind, covariates, cfg: GpsConfig):
    gps = fit_treatment_model(data, treatment, kind, covariates, cfg)
    w = raw_weights(gps, data[treatment].to_numpy(), cfg.stabilized, cfg.prob_floor)
    if not np.isfinite(w).all():
        raise CausalError(f"non-finite weights for {treatment!r}")
    return gps, truncate_weights(w, cfg.truncation_percentile)


def fit_gps_continuous(data: pd.DataFrame, treatment: str, covariates=None, cfg: GpsConfig = GpsConfig()):
    return _fit_gps(data, treatment, "continuous", covariates, cfg)


def fit_gps_categorical(data: pd.DataFrame, treatment: str = "road_code", covariates=None,
                        cfg: GpsConfig = GpsConfig()):
    return _fit_gps(data, treatment, "categorical", covariates, cfg)


# ---------------------------------------------------------------------------
# balance


def _wmean_var(x, w):
    m = np.average(x, weights=w, axis=0)
    v = np.average((x - m) ** 2, weights=w, axis=0)
    return m, v


def smd(x1, x0, w1=None, w0=None) -> np.ndarray:
    """|m1 - m0| / sqrt((v1 + v0) / 2) per column, optionally weighted."""
    x1 = np.asarray(x1, float).reshape(len(x1), -1)
    x0 = np.asarray(x0, float).reshape(len(x0), -1)
    w1 = np.ones(len(x1)) if w1 is None else w1
    w0 = np.ones(len(x0)) if w0 is None else w0
    m1, v1 = _wmean_var(x1, w1)
    m0, v0 = _wmean_var(x0, w0)
    diff = np.abs(m1 - m0)
    pooled = np.sqrt((v1 + v0) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(pooled > 0, diff / np.where(pooled > 0, pooled, 1.0), np.where(diff > 0, np.inf, 0.0))
    return out


def pseudo_groups(z, kind: str) -> list[np.ndarray]:
    """Boolean group masks: median split for continuous, baseline-first levels for categorical."""
    z = np.asarray(z)
    if kind == "continuous":
        med = np.median(z)
        groups = [z <= med, z > med]
    else:
        levels, counts = np.unique(z, return_counts=True)
        order = np.argsort(-counts, kind="stable")
        groups = [z == levels[i] for i in order]
    for g in groups:
        if g.sum() < 2:
            raise CausalError("pseudo-group with fewer than 2 samples")
    return groups


def smd_balance(data: pd.DataFrame, treatment: str, w, covariates=None, kind: str = "continuous") -> BalanceReport:
    """Covariate SMDs between treatment pseudo-groups, unweighted and weighted.

    Categorical treatments report the mean over levels of each level's SMD
    against the most frequent level.
    """
    covs = _covariates(data, treatment, covariates)
    w = w.weights if isinstance(w, WeightVector) else np.asarray(w, float)
    X = data[covs].to_numpy(float)
    groups = pseudo_groups(data[treatment].to_numpy(), kind)
    base = groups[0]
    before, after = [], []
    for g in groups[1:]:
        before.append(smd(X[g], X[base]))
        after.append(smd(X[g], X[base], w[g], w[base]))
    return BalanceReport(treatment, covs, np.mean(before, axis=0), np.mean(after, axis=0))


def gps_diagnostics(gps: GpsModel, data: pd.DataFrame, cfg: GpsConfig = GpsConfig()) -> dict:
    """Treatment-model fit quality and balance gain for one treatment.

    A perfectly predicted continuous treatment is reported as ``degenerate``
    before any weighting is attempted.
    """
    z = data[gps.treatment].to_numpy()
    out = {"treatment": gps.treatment, "kind": gps.kind, "degenerate": False}
    if gps.kind == "continuous":
        z = z.astype(float)
        resid = z - gps.fitted
        ss_res = float((resid**2).sum())
        ss_tot = float(((z - z.mean()) ** 2).sum())
        out["r2"] = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
        out["rmse"] = math.sqrt(ss_res / len(z))
        out["degenerate"] = not gps.residual_sigma
    else:
        pred = np.asarray(gps.levels, dtype=object)[gps.fitted.argmax(axis=1)]
        out["accuracy"] = float(np.mean(pred == z))
    if out["degenerate"]:
        out["smd_improvement"] = None
        return out
    w = truncate_weights(raw_weights(gps, z, cfg.stabilized, cfg.prob_floor), cfg.truncation_percentile)
    report = smd_balance(data, gps.treatment, w, gps.covariates, gps.kind)
    out["smd_improvement"] = report.improvement
    out["mean_smd_before"] = float(report.smd_before.mean())
    out["mean_smd_after"] = float(report.smd_after.mean())
    return out


# ---------------------------------------------------------------------------
# weighted logistic regression


def _design(z, categorical: bool, levels=None, baseline=None):
    z = np.asarray(z)
    if not categorical:
        return np.column_stack([np.ones(len(z)), z.astype(float)]), None, None
    if levels is None:
        vals, counts = np.unique(z, return_counts=True)
        baseline = vals[np.argmax(counts)].item()
        levels = [v.item() for v in vals if v != baseline]
    cols = [np.ones(len(z))] + [(z == lvl).astype(float) for lvl in levels]
    return np.column_stack(cols), list(levels), baseline


# |eta| > 20 puts a fitted probability within 2e-9 of 0 or 1: treat as separation
_ETA_LIMIT = 20.0


def weighted_logistic(y, z, w=None, categorical: bool = False, levels=None, baseline=None,
                      tol: float = 1e-8, max_iter: int = 100, jitter: float = 1e-8) -> LogisticFit:
    """Weighted maximum likelihood for ``logit P(y=1) = b0 + b1 z`` by IRLS.

    Categorical ``z`` enters as indicators of every level except the most
    frequent (or the given ``baseline``).
    """
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w.weights if isinstance(w, WeightVector) else w, float)
    if len(y) == 0 or len(y) != len(w):
        raise CausalError("y and weights must be non-empty and aligned")
    if not (np.isfinite(w).all() and (w > 0).all()):
        raise CausalError("weights must be positive and finite")
    if w[y == 1].sum() <= 0 or w[y == 0].sum() <= 0:
        raise CausalError("both outcome values must be present")
    X, levels, baseline = _design(z, categorical, levels, baseline)
    if categorical:
        empty = [lvl for lvl, col in zip(levels, X[:, 1:].T) if col.sum() == 0]
        if empty:
            raise CausalError(f"treatment levels absent from sample: {empty}")
    w = w / w.mean()
    p_bar = np.average(y, weights=w)
    beta = np.zeros(X.shape[1])
    beta[0] = math.log(p_bar / (1 - p_bar))
    eye = jitter * np.eye(X.shape[1])

    def loglik(b):
        eta = X @ b
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))

    ll = loglik(beta)
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        W = w * p * (1 - p)
        hess = X.T @ (X * W[:, None]) + eye
        grad = X.T @ (w * (y - p))
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise SeparationError("singular information matrix; treatment may separate the outcome") from None
        # step halving keeps Newton from overshooting on skewed tables
        for _ in range(30):
            trial = beta + step
            ll_trial = loglik(trial) if np.isfinite(trial).all() else -np.inf
            if ll_trial >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        beta, ll = trial, ll_trial
        eta_max = float(np.abs(X @ beta).max())
        if not np.isfinite(beta).all() or np.abs(beta).max() > 50 or eta_max > _ETA_LIMIT:
            raise SeparationError(
                f"coefficients diverging (max |beta| = {np.abs(beta).max():.3g}, max |linear predictor| = "
                f"{eta_max:.3g} at iteration {it}); outcome looks completely separated by the treatment")
        if np.abs(step).max() < tol:
            return LogisticFit(beta, levels, baseline, it)
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# effects


def treatment_kind(treatment: str) -> str:
    return "categorical" if treatment in CATEGORICAL_TREATMENTS else "continuous"


def _point_fit(data, treatment, kind, covariates, outcomes, outcome_col, cfg: CausalConfig,
               levels=None, baseline=None):
    """One GPS fit shared by all requested outcomes. Returns {outcome: LogisticFit | Exception}."""
    _, w = _fit_gps(data, treatment, kind, covariates, cfg.gps)
    z = data[treatment].to_numpy()
    ycol = data[outcome_col].to_numpy()
    out = {}
    for k in outcomes:
        try:
            out[k] = weighted_logistic((ycol == k).astype(float), z, w, kind == "categorical", levels, baseline)
        except CausalError as exc:
            out[k] = exc
    return out


def _summarize(log_or_hat: float, reps: np.ndarray):
    ors = np.exp(reps)
    lo, hi = np.percentile(ors, [2.5, 97.5])
    se = float(np.std(reps, ddof=1)) if len(reps) > 1 else float("nan")
    if se > 0:
        p = float(2 * stats.norm.sf(abs(log_or_hat) / se))
    else:
        p = 1.0 if log_or_hat == 0 else 0.0
    return float(lo), float(hi), p


def treatment_effects(data: pd.DataFrame, treatment: str, outcomes, cfg: CausalConfig = CausalConfig(),
                      kind: str | None = None, covariates=None, outcome_col: str = "accident_class") -> dict:
    """Effect estimates of one treatment on several one-vs-rest outcomes.

    Bootstrap replicate ``b`` resamples rows with ``default_rng(seed + b)``,
    so every outcome sees the same resamples and GPS refits are shared.
    Returns ``{outcome: EffectEstimate | Exception}``.
    """
    kind = kind or treatment_kind(treatment)
    data = data.reset_index(drop=True)
    n = len(data)
    outcomes = list(outcomes)
    point = _point_fit(data, treatment, kind, covariates, outcomes, outcome_col, cfg)
    levels = baseline = None
    if kind == "categorical":
        ref = next((f for f in point.values() if isinstance(f, LogisticFit)), None)
        if ref is not None:
            levels, baseline = ref.levels, ref.baseline

    B = cfg.bootstrap
    reps = {k: [] for k in outcomes}
    fails = {k: 0 for k in outcomes}
    for b in range(B):
        idx = np.random.default_rng(cfg.seed + b).integers(0, n, size=n)
        sample = data.iloc[idx].reset_index(drop=True)
        try:
            fits = _point_fit(sample, treatment, kind, covariates, outcomes, outcome_col, cfg, levels, baseline)
        except (CausalError, FitError) as exc:
            fits = {k: exc for k in outcomes}
        for k, f in fits.items():
            if isinstance(f, LogisticFit):
                reps[k].append(f.coef[1:])
            else:
                fails[k] += 1

    results = {}
    for k in outcomes:
        fit = point[k]
        if not isinstance(fit, LogisticFit):
            results[k] = fit
            continue
        if B and fails[k] > cfg.max_fail_fraction * B:
            results[k] = CausalError(f"{fails[k]}/{B} bootstrap refits failed for {treatment} -> {k}")
            continue
        coef = fit.coef
        if kind == "continuous":
            lo = hi = p = None
            if B:
                lo, hi, p = _summarize(coef[1], np.array([r[0] for r in reps[k]]))
            results[k] = EffectEstimate(treatment, k, float(coef[0]), float(coef[1]), float(np.exp(coef[1])),
                                        lo, hi, p, n, B, fails[k])
            continue
        level_effects = []
        rep_arr = np.array(reps[k]) if reps[k] else np.zeros((0, len(fit.levels)))
        for j, lvl in enumerate(fit.levels):
            lo = hi = p = None
            if B:
                lo, hi, p = _summarize(coef[1 + j], rep_arr[:, j])
            level_effects.append(LevelEffect(lvl, float(np.exp(coef[1 + j])), lo, hi, p))
        # headline: the most significant contrast (largest |log OR| without bootstrap)
        if B:
            j = min(range(len(level_effects)), key=lambda i: (level_effects[i].p_value, i))
        else:
            j = int(np.argmax(np.abs(coef[1:])))
        head = level_effects[j]
        results[k] = EffectEstimate(treatment, k, float(coef[0]), float(coef[1 + j]), head.odds_ratio,
                                    head.ci_low, head.ci_high, head.p_value, n, B, fails[k],
                                    level_effects, fit.baseline, head.level)
    return results


def estimate_effect(data: pd.DataFrame, treatment: str, outcome, cfg: CausalConfig = CausalConfig(),
                    kind: str | None = None, covariates=None, outcome_col: str = "accident_class") -> EffectEstimate:
    if outcome not in set(data[outcome_col].tolist()):
        raise CausalError(f"outcome class {outcome!r} absent from data")
    res = treatment_effects(data, treatment, [outcome], cfg, kind, covariates, outcome_col)[outcome]
    if isinstance(res, Exception):
        raise res
    return res


def naive_effect(data: pd.DataFrame, treatment: str, outcome, outcome_col: str = "accident_class") -> float:
    """Unweighted odds ratio, for comparison with the adjusted estimate."""
    y = (data[outcome_col].to_numpy() == outcome).astype(float)
    return float(np.exp(weighted_logistic(y, data[treatment].to_numpy(float)).coef[1]))


@dataclass
class EffectMatrix:
    treatments: list[str]
    outcomes: list
    cells: dict                      # (treatment, outcome) -> EffectEstimate
    failures: dict = field(default_factory=dict)   # (treatment, outcome) -> message

    @property
    def complete(self) -> bool:
        return not self.failures and len(self.cells) == len(self.treatments) * len(self.outcomes)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for t in self.treatments:
            for o in self.outcomes:
                est = self.cells.get((t, o))
                if est is not None:
                    rows.append(est.to_row())
        return pd.DataFrame(rows, columns=["treatment", "outcome", "or", "ci_low", "ci_high", "p", "stars", "n", "b"])

    def levels_frame(self) -> pd.DataFrame:
        rows = []
        for (t, o), est in self.cells.items():
            for lv in est.levels:
                rows.append({"treatment": t, "outcome": o, "level": lv.level, "baseline": est.baseline,
                             "or": lv.odds_ratio, "ci_low": lv.ci_low, "ci_high": lv.ci_high,
                             "p": lv.p_value, "stars": significance_stars(lv.p_value)})
        return pd.DataFrame(rows, columns=["treatment", "outcome", "level", "baseline", "or", "ci_low",
                                           "ci_high", "p", "stars"])

    def to_dict(self) -> dict:
        return {
            "treatments": self.treatments,
            "outcomes": list(self.outcomes),
            "cells": [self.cells[(t, o)].to_row() | {
                "beta0": self.cells[(t, o)].beta0, "beta1": self.cells[(t, o)].beta1,
                "n_failed": self.cells[(t, o)].n_failed,
                "headline_level": self.cells[(t, o)].headline_level,
                "baseline": self.cells[(t, o)].baseline,
            } for t in self.treatments for o in self.outcomes if (t, o) in self.cells],
            "failures": [{"treatment": t, "outcome": o, "error": msg} for (t, o), msg in self.failures.items()],
        }


def build_effect_matrix(data: pd.DataFrame, cfg: CausalConfig = CausalConfig(), treatments=None, outcomes=None,
                        outcome_col: str = "accident_class", standardize: bool = True) -> EffectMatrix:
    """Estimate every (treatment, outcome) cell.

    Continuous treatments are z-scored on ``data`` first, so odds ratios
    are per standard deviation. Failing cells are collected in
    ``failures`` rather than aborting the grid.
    """
    treatments = list(treatments) if treatments is not None else list(FEATURES)
    outcomes = list(outcomes) if outcomes is not None else list(ACCIDENT_CLASSES)
    data = data.reset_index(drop=True).copy()
    if standardize:
        for t in treatments:
            if treatment_kind(t) == "continuous":
                col = data[t].to_numpy(float)
                sd = col.std()
                if sd > 0:
                    data[t] = (col - col.mean()) / sd
    cells, failures = {}, {}
    for t in treatments:
        log.info("effect matrix: treatment %s", t)
        try:
            res = treatment_effects(data, t, outcomes, cfg, outcome_col=outcome_col)
        except (CausalError, FitError) as exc:
            res = {o: exc for o in outcomes}
        for o, r in res.items():
            if isinstance(r, Exception):
                failures[(t, o)] = str(r)
            else:
                cells[(t, o)] = r
    return EffectMatrix(treatments, outcomes, cells, failures)


def balance_table(data: pd.DataFrame, cfg: GpsConfig = GpsConfig(), treatments=None) -> list[dict]:
    """Treatment-model R2/RMSE (or accuracy) and SMD improvement for each treatment."""
    treatments = list(treatments) if treatments is not None else list(FEATURES)
    rows = []
    for t in treatments:
        kind = treatment_kind(t)
        try:
            gps = fit_treatment_model(data, t, kind, None, cfg)
            rows.append(gps_diagnostics(gps, data, cfg))
        except (CausalError, FitError) as exc:
            rows.append({"treatment": t, "kind": kind, "error": str(exc)})
    return rows
