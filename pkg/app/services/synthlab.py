import itertools
import logging
import time
from typing import Callable

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError as PydanticValidationError

from app.config import settings
from app.errors import ConfigRejected, MonteCarloAborted, PipelineError
from app.models.cohort import CohortSample
from app.models.effects import CateTable
from app.models.synth import SyntheticPanel, TruthBundle
from app.schemas.child import CrisisEvent, to_cmc
from app.schemas.cohort import INDICATOR_FEATURES
from app.schemas.run import PipelineSettings
from app.schemas.synth import DgpConfig, MonteCarloReport, ModeratorSpec, RepResult
from app.services import cohort_builder, effects, forest_engine
from app.utils import seeding

logger = logging.getLogger(__name__)

MAX_FAILURE_SHARE = 0.2
SURVEY_LAG_YEARS = 6
MAX_REDRAWS = 1000


def _probability_combinations(dgp: DgpConfig):
    base_effect = dgp.true_ate or 0.0
    shifts = [moderator.effect_shift for moderator in dgp.moderator_spec]
    for low_income in (0, 1):
        for d in (0, 1):
            for active in itertools.product((0, 1), repeat=len(shifts)):
                effect = base_effect + sum(shift * on for shift, on in zip(shifts, active))
                probability = dgp.baseline_mortality + dgp.low_income_mortality_shift * low_income + d * effect
                yield probability, {"low_income": low_income, "d": d, "moderators_on": active}


def probability_margin(dgp: DgpConfig) -> float:
    """Distance of the closest covariate/arm combination to the [0, 1] edges.

    Raises ``ConfigRejected`` naming the first combination outside [0, 1].
    """
    margin = np.inf
    for probability, combination in _probability_combinations(dgp):
        if not 0 <= probability <= 1:
            raise ConfigRejected(f"mortality probability {probability:.4f} outside [0, 1] for {combination}")
        margin = min(margin, probability, 1 - probability)
    return float(margin)


def _cluster_effects(rng: np.random.Generator, size: int, sd: float, margin: float) -> np.ndarray:
    if sd == 0 or margin == 0:
        return np.zeros(size)
    draws = rng.normal(0.0, sd, size)
    for _ in range(MAX_REDRAWS):
        outside = np.abs(draws) > margin
        if not outside.any():
            return draws
        draws[outside] = rng.normal(0.0, sd, int(outside.sum()))
    raise ConfigRejected(f"cluster_effect_sd={sd} keeps pushing mortality outside [0, 1] (margin {margin:.4f})")


def _moderator_active(moderator: ModeratorSpec, features: dict[str, np.ndarray]) -> np.ndarray:
    values = features[moderator.covariate]
    if moderator.above is None and moderator.covariate in INDICATOR_FEATURES:
        return values == 1
    return values > moderator.above


def _country_frame(dgp: DgpConfig, rng: np.random.Generator) -> pd.DataFrame:
    countries = [f"C{index:02d}" for index in range(dgp.n_countries)]
    n_low = int(round(dgp.low_income_share * dgp.n_countries))
    low_income = np.zeros(dgp.n_countries, dtype=bool)
    low_income[rng.permutation(dgp.n_countries)[:n_low]] = True
    gdp_base = np.where(low_income, rng.uniform(400, 900, dgp.n_countries), rng.uniform(1500, 6000, dgp.n_countries))
    gdp_growth = rng.uniform(-0.01, 0.01, dgp.n_countries)
    population_base = np.exp(rng.normal(np.log(1.5e7), 1.0, dgp.n_countries))
    rows = []
    for index, country in enumerate(countries):
        for offset, year in enumerate(dgp.years):
            rows.append(
                {
                    "country": country,
                    "year": year,
                    "gdp_per_capita": round(float(gdp_base[index] * (1 + gdp_growth[index]) ** offset), 2),
                    "population": round(float(population_base[index] * 1.02**offset)),
                }
            )
    return pd.DataFrame(rows, columns=list(cohort_builder.COVARIATES_COLUMNS))


def _events_frame(dgp: DgpConfig, covariates: pd.DataFrame, rng: np.random.Generator) -> tuple[pd.DataFrame, pd.DataFrame]:
    low = covariates["gdp_per_capita"].to_numpy() < settings.LOW_INCOME_GDP_CUTOFF
    if dgp.sdc_assignment == "gdp_dependent":
        probability = np.clip(np.where(low, 1.6, 0.4) * dgp.event_rate, 0.0, 1.0)
    else:
        probability = np.full(len(covariates), dgp.event_rate)
    happened = rng.uniform(size=len(covariates)) < probability
    events = covariates.loc[happened, ["country", "year"]].reset_index(drop=True)
    propensity = pd.DataFrame(
        {
            "cluster": covariates["country"] + "-" + covariates["year"].astype(str),
            "event_probability": probability,
        }
    )
    return events, propensity


def generate_panel(dgp: DgpConfig) -> SyntheticPanel:
    """Draw a children/events/covariates panel and its ground truth.

    Exposure is assigned by crisis country-years and propagated to children
    through the same window rule as observed data.
    """
    margin = probability_margin(dgp)
    rng = seeding.stream(dgp.seed, seeding.DGP)
    covariates = _country_frame(dgp, rng)
    events_frame, propensity = _events_frame(dgp, covariates, rng)
    events = [CrisisEvent(country=row.country, year=int(row.year)) for row in events_frame.itertuples()]

    per_cluster = dgp.children_per_country_year
    n = dgp.n_children
    cluster_effect = np.repeat(_cluster_effects(rng, len(covariates), dgp.cluster_effect_sd, margin), per_cluster)
    country = np.repeat(covariates["country"].to_numpy(dtype=object), per_cluster)
    year = np.repeat(covariates["year"].to_numpy(), per_cluster)
    gdp = np.repeat(covariates["gdp_per_capita"].to_numpy(), per_cluster)
    population = np.repeat(covariates["population"].to_numpy(dtype=float), per_cluster)

    children = pd.DataFrame(
        {
            "child_id": [f"k{index:07d}" for index in range(n)],
            "country": country,
            "birth_cmc": [to_cmc(int(y), int(m)) for y, m in zip(year, rng.integers(1, 13, n))],
            "survey_year": dgp.first_year + dgp.years_span - 1 + SURVEY_LAG_YEARS,
            "died": 0,
            "age_at_death_months": pd.array([pd.NA] * n, dtype="Int64"),
            "sex": np.where(rng.uniform(size=n) < 0.5, "F", "M"),
            "mother_age": np.round(rng.uniform(15, 45, n), 1),
            "mother_edu": rng.integers(0, 4, n),
            "residence": np.where(rng.uniform(size=n) < 0.4, "urban", "rural"),
            "birth_order": 1 + rng.poisson(1.5, n),
            "multiple_birth": (rng.uniform(size=n) < 0.02).astype(np.int64),
        }
    )
    features = {
        "sex_female": (children["sex"] == "F").to_numpy(dtype=float),
        "mother_age": children["mother_age"].to_numpy(dtype=float),
        "mother_edu": children["mother_edu"].to_numpy(dtype=float),
        "residence_urban": (children["residence"] == "urban").to_numpy(dtype=float),
        "birth_order": children["birth_order"].to_numpy(dtype=float),
        "multiple_birth": children["multiple_birth"].to_numpy(dtype=float),
        "low_income": (gdp < settings.LOW_INCOME_GDP_CUTOFF).astype(float),
        "gdp_per_capita": gdp,
        "population": population,
    }

    tau = np.full(n, dgp.true_ate or 0.0)
    moderator_active = np.zeros(n, dtype=bool)
    for position, moderator in enumerate(dgp.moderator_spec):
        active = _moderator_active(moderator, features)
        tau = tau + moderator.effect_shift * active
        if position == 0:
            moderator_active = active

    records, _ = cohort_builder.parse_birth_histories(children)
    exposed = np.array([cohort_builder.build_exposure(child, events, dgp.threshold) for child in records], dtype=float)
    probability = (
        dgp.baseline_mortality
        + dgp.low_income_mortality_shift * features["low_income"]
        + cluster_effect
        + exposed * tau
    )
    died = rng.uniform(size=n) < probability
    ages = rng.integers(0, dgp.threshold.months + 1, n)
    children["died"] = died.astype(np.int64)
    children["age_at_death_months"] = pd.array(np.where(died, ages, 0), dtype="Int64")
    children.loc[~died, "age_at_death_months"] = pd.NA

    truth = TruthBundle(
        child_ids=children["child_id"].to_numpy(dtype=object),
        tau=tau,
        moderator_active=moderator_active,
        ate=float(np.mean(tau)),
        propensity=propensity,
    )
    logger.debug("panel seed %d: %d children, %d events, %d deaths", dgp.seed, n, len(events_frame), int(died.sum()))
    return SyntheticPanel(children=children, events=events_frame, covariates=covariates, truth=truth)


def panel_sample(panel: SyntheticPanel, threshold) -> CohortSample:
    """Run a synthetic panel through the same ingestion and cohort path as survey data."""
    children, issues = cohort_builder.parse_birth_histories(panel.children)
    events, event_issues = cohort_builder.parse_events(panel.events)
    covars, covar_issues = cohort_builder.parse_country_year(panel.covariates)
    if issues or event_issues or covar_issues:
        raise PipelineError(f"synthetic panel failed ingestion: {(issues + event_issues + covar_issues)[0].message}")
    sample, _ = cohort_builder.build_threshold_sample(children, events, covars, threshold)
    return sample


def _truth_for(sample: CohortSample, truth: TruthBundle) -> tuple[np.ndarray, np.ndarray]:
    position = {child_id: index for index, child_id in enumerate(truth.child_ids.tolist())}
    rows = np.array([position[child_id] for child_id in sample.child_ids.tolist()], dtype=np.int64)
    return truth.tau[rows], truth.moderator_active[rows]


Estimator = Callable[[CohortSample, TruthBundle, PipelineSettings, DgpConfig], RepResult]


def oracle_estimator(sample: CohortSample, truth: TruthBundle, pipeline: PipelineSettings, dgp: DgpConfig) -> RepResult:
    """Reads the truth back; checks the harness itself."""
    return RepResult(rep=0, seed=dgp.seed, tau_hat=truth.ate, std_err=0.0, ci_low=truth.ate, ci_high=truth.ate)


def pipeline_estimator(sample: CohortSample, truth: TruthBundle, pipeline: PipelineSettings, dgp: DgpConfig) -> RepResult:
    forest = forest_engine.fit_causal_forest(
        sample.X, sample.y, sample.d, sample.clusters, pipeline.forest, sample.feature_names
    )
    propensity = effects.propensity_from_forest(forest, pipeline.inference.clamp)
    estimate = effects.estimate_ate(
        sample, forest, propensity, pipeline.inference.level, pipeline.inference.allow_unclustered
    )
    tau_hat = effects.oob_effects(forest, sample.X)
    _, active = _truth_for(sample, truth)
    result = RepResult(
        rep=0,
        seed=dgp.seed,
        tau_hat=estimate.tau_hat,
        std_err=estimate.std_err,
        ci_low=estimate.ci_low,
        ci_high=estimate.ci_high,
    )
    if dgp.moderator_spec:
        ranking = [name for name, _ in forest_engine.variable_importance(forest)]
        moderator = dgp.moderator_spec[0].covariate
        table = CateTable(child_ids=sample.child_ids, tau=tau_hat, variance=np.zeros(len(sample)), clusters=sample.clusters)
        result = result.model_copy(
            update={
                "moderator_rank": ranking.index(moderator) + 1 if moderator in ranking else None,
                "moderator_effect": float(tau_hat[active].mean()) if active.any() else None,
                "baseline_effect": float(tau_hat[~active].mean()) if (~active).any() else None,
                "n_modes": effects.count_modes(effects.cate_histogram(table, pipeline.inference.hist_bins)),
            }
        )
    return result


def rep_seed(dgp: DgpConfig, rep: int) -> int:
    return seeding.child_seed(dgp.seed, seeding.REP, rep)


def _run_rep(dgp: DgpConfig, pipeline: PipelineSettings, rep: int, estimator: Estimator) -> RepResult:
    seed = rep_seed(dgp, rep)
    rep_dgp = dgp.model_copy(update={"seed": seed})
    rep_pipeline = pipeline.model_copy(
        update={"forest": pipeline.forest.model_copy(update={"seed": seeding.child_seed(pipeline.forest.seed, seeding.REP, rep)})}
    )
    started = time.perf_counter()
    try:
        panel = generate_panel(rep_dgp)
        sample = panel_sample(panel, rep_dgp.threshold)
        tau, _ = _truth_for(sample, panel.truth)
        true_ate = float(np.mean(tau))
        outcome = estimator(sample, panel.truth, rep_pipeline, rep_dgp)
        covered = outcome.ci_low <= true_ate <= outcome.ci_high
        return outcome.model_copy(
            update={
                "rep": rep,
                "seed": seed,
                "true_ate": true_ate,
                "covered": covered,
                "wall_seconds": time.perf_counter() - started,
            }
        )
    except (PipelineError, PydanticValidationError) as exc:
        detail = exc.detail if isinstance(exc, PipelineError) else " ".join(str(exc).split())
        logger.warning("rep %d failed: %s", rep, detail)
        return RepResult(rep=rep, seed=seed, failed=True, error=detail, wall_seconds=time.perf_counter() - started)


def evaluate_estimator(
    dgp: DgpConfig,
    pipeline: PipelineSettings,
    n_reps: int,
    estimator: Estimator = pipeline_estimator,
    n_jobs: int = 1,
) -> MonteCarloReport:
    if n_reps < 2:
        raise ConfigRejected(f"n_reps must be >= 2, got {n_reps}")
    reps = Parallel(n_jobs=n_jobs)(delayed(_run_rep)(dgp, pipeline, rep, estimator) for rep in range(n_reps))
    failed = [rep for rep in reps if rep.failed]
    if len(failed) >= MAX_FAILURE_SHARE * n_reps:
        raise MonteCarloAborted(f"{len(failed)} of {n_reps} reps failed; first error: {failed[0].error}")

    done = [rep for rep in reps if not rep.failed]
    errors = np.array([rep.tau_hat - rep.true_ate for rep in done])
    report = MonteCarloReport(
        n_reps=n_reps,
        n_failed=len(failed),
        level=pipeline.inference.level,
        moderator=dgp.moderator_spec[0].covariate if dgp.moderator_spec else None,
        mean_true_ate=float(np.mean([rep.true_ate for rep in done])),
        bias=float(errors.mean()),
        rmse=float(np.sqrt(np.mean(errors**2))),
        coverage=float(np.mean([rep.covered for rep in done])),
        moderator_top_rate=(
            float(np.mean([rep.moderator_rank == 1 for rep in done])) if dgp.moderator_spec else None
        ),
        reps=reps,
    )
    logger.info(
        "monte carlo: %d reps (%d failed), bias=%.4f rmse=%.4f coverage=%.2f",
        n_reps, len(failed), report.bias, report.rmse, report.coverage,
    )
    return report
