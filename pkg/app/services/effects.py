import logging

import numpy as np

from app.config import settings
from app.errors import ContractError, EstimationError
from app.models.cohort import CohortSample
from app.models.effects import CateTable, PropensityModel
from app.models.forest import CausalForest
from app.schemas.effect import EffectEstimate, HistogramSummary
from app.schemas.forest import ForestConfig
from app.services import forest_engine, inference

logger = logging.getLogger(__name__)


def _check_arms(d: np.ndarray) -> None:
    if len(d) == 0:
        raise EstimationError("sample is empty")
    if d.min() == 1:
        raise EstimationError("sample has no control (d=0) rows")
    if d.max() == 0:
        raise EstimationError("sample has no treated (d=1) rows")


def clamp_scores(scores, low: float = settings.PROPENSITY_CLAMP_LOW, high: float = settings.PROPENSITY_CLAMP_HIGH) -> np.ndarray:
    return np.clip(np.asarray(scores, dtype=float), low, high)


def estimate_propensity(
    sample: CohortSample,
    config: ForestConfig,
    clamp: tuple[float, float] = (settings.PROPENSITY_CLAMP_LOW, settings.PROPENSITY_CLAMP_HIGH),
) -> PropensityModel:
    _check_arms(sample.d)
    forest = forest_engine.fit_regression_forest(sample.X, sample.d, sample.clusters, config, sample.feature_names)
    scores = forest.predict_oob(sample.X)
    missing = np.isnan(scores)
    if missing.any():
        scores[missing] = forest.predict(sample.X[missing])
    return PropensityModel(forest=forest, oob_scores=clamp_scores(scores, *clamp), clamp=clamp)


def propensity_from_forest(
    forest: CausalForest,
    clamp: tuple[float, float] = (settings.PROPENSITY_CLAMP_LOW, settings.PROPENSITY_CLAMP_HIGH),
) -> PropensityModel:
    """Reuse the treatment-centering forest's out-of-bag scores."""
    return PropensityModel(
        forest=forest.centering_treatment,
        oob_scores=clamp_scores(forest.treatment_hat, *clamp),
        clamp=clamp,
    )


def overlap_weights(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    return scores * (1.0 - scores)


def oob_effects(forest: CausalForest, X) -> np.ndarray:
    tau = forest.predict_oob(X)
    missing = np.isnan(tau)
    if missing.any():
        logger.warning("%d rows have no out-of-bag causal trees, using full-forest effects", int(missing.sum()))
        tau[missing] = forest.predict(np.asarray(X)[missing])
    return tau


def aipw_scores(y, d, e_hat, m_hat, tau_hat) -> np.ndarray:
    residual = d - e_hat
    scores = tau_hat + residual / (e_hat * (1.0 - e_hat)) * (y - m_hat - residual * tau_hat)
    if not np.isfinite(scores).all():
        raise ContractError("doubly robust scores are not finite; check propensity clamping")
    return scores


def doubly_robust_scores(sample: CohortSample, propensity: PropensityModel, forest: CausalForest) -> np.ndarray:
    if len(forest.outcome_hat) != len(sample):
        raise ContractError(f"forest was trained on {len(forest.outcome_hat)} rows, sample has {len(sample)}")
    tau = oob_effects(forest, sample.X)
    return aipw_scores(sample.y, sample.d, propensity.oob_scores, forest.outcome_hat, tau)


def _estimate(scores, weights, clusters, d, threshold: str, level: float, allow_unclustered: bool, **extra) -> EffectEstimate:
    total = weights.sum()
    if total <= 0:
        raise EstimationError(f"{threshold}: overlap weights sum to zero")
    tau_hat = inference.weighted_mean(scores, weights)
    variance = inference.cluster_variance(scores, weights, clusters, tau_hat=tau_hat, allow_unclustered=allow_unclustered)
    low, high = inference.confidence_interval(tau_hat, variance.value, level)
    n_treated = int(d.sum())
    return EffectEstimate(
        threshold=threshold,
        tau_hat=tau_hat,
        std_err=variance.std_err,
        ci_low=min(low, tau_hat),
        ci_high=max(high, tau_hat),
        level=level,
        n_treated=n_treated,
        n_control=len(d) - n_treated,
        **extra,
    )


def estimate_ate(
    sample: CohortSample,
    forest: CausalForest,
    propensity: PropensityModel,
    level: float = 0.95,
    allow_unclustered: bool = False,
    scores: np.ndarray | None = None,
) -> EffectEstimate:
    """Overlap-weighted AIPW average effect with a country-year clustered standard error."""
    _check_arms(sample.d)
    if scores is None:
        scores = doubly_robust_scores(sample, propensity, forest)
    weights = overlap_weights(propensity.oob_scores)
    cate_std = float(np.std(oob_effects(forest, sample.X)))
    estimate = _estimate(
        scores, weights, sample.clusters, sample.d, sample.threshold.value, level, allow_unclustered, cate_std=cate_std
    )
    logger.info(
        "%s: tau_hat=%.4f se=%.4f (%d treated, %d control)",
        estimate.threshold, estimate.tau_hat, estimate.std_err, estimate.n_treated, estimate.n_control,
    )
    return estimate


def estimate_group_ate(
    sample: CohortSample,
    forest: CausalForest,
    propensity: PropensityModel,
    groups,
    level: float = 0.95,
    allow_unclustered: bool = False,
) -> dict[str, EffectEstimate]:
    """Overlap-weighted average effect within each group label."""
    groups = np.asarray(groups).astype(str)
    if len(groups) != len(sample):
        raise ContractError(f"{len(groups)} group labels for {len(sample)} rows")
    scores = doubly_robust_scores(sample, propensity, forest)
    weights = overlap_weights(propensity.oob_scores)
    tau = oob_effects(forest, sample.X)
    out = {}
    for label in np.unique(groups):
        rows = groups == label
        out[str(label)] = _estimate(
            scores[rows],
            weights[rows],
            sample.clusters[rows],
            sample.d[rows],
            sample.threshold.value,
            level,
            allow_unclustered,
            cate_std=float(np.std(tau[rows])),
            group=str(label),
        )
    return out


def estimate_cate(sample: CohortSample, forest: CausalForest) -> CateTable:
    tau = oob_effects(forest, sample.X)
    variance = inference.little_bags_variance(forest, sample.X, oob=True)
    return CateTable(child_ids=sample.child_ids, tau=tau, variance=variance, clusters=sample.clusters)


def cate_histogram(table: CateTable, n_bins: int = settings.HIST_BINS, ate: float | None = None) -> HistogramSummary:
    if n_bins < 2:
        raise ContractError(f"n_bins must be >= 2, got {n_bins}")
    if len(table) == 0:
        return HistogramSummary()
    low, high = float(np.min(table.tau)), float(np.max(table.tau))
    if low == high:
        low, high = low - 0.5e-3, high + 0.5e-3
    counts, edges = np.histogram(table.tau, bins=n_bins, range=(low, high))
    return HistogramSummary(
        bin_edges=edges.tolist(),
        counts=counts.astype(int).tolist(),
        mean_marker=float(np.mean(table.tau)) if ate is None else float(ate),
        zero_marker=0.0,
    )


def count_modes(summary: HistogramSummary, smooth: int = 3, min_share: float = 0.05, dip_ratio: float = 0.75) -> int:
    """Local maxima of the moving-average smoothed counts.

    A mode must hold at least ``min_share`` of the rows in its smoothed bin
    and be separated from the next mode by a dip below ``dip_ratio`` of the
    lower peak.
    """
    if summary.is_empty:
        return 0
    counts = np.asarray(summary.counts, dtype=float)
    if smooth > 1:
        kernel = np.ones(smooth) / smooth
        counts = np.convolve(np.pad(counts, smooth // 2, mode="edge"), kernel, mode="valid")[: len(summary.counts)]
    floor = min_share * counts.sum()
    padded = np.concatenate(([-np.inf], counts, [-np.inf]))
    peaks = [
        i
        for i in range(len(counts))
        if counts[i] >= floor and padded[i + 1] > padded[i] and padded[i + 1] >= padded[i + 2]
    ]
    modes = peaks[:1]
    for peak in peaks[1:]:
        previous = modes[-1]
        dip = counts[previous : peak + 1].min()
        if dip < dip_ratio * min(counts[previous], counts[peak]):
            modes.append(peak)
        elif counts[peak] > counts[previous]:
            modes[-1] = peak
    return len(modes)
