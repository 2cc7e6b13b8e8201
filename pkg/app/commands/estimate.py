import logging
from pathlib import Path

import pandas as pd

from app import storage
from app.dependencies import load_cohort, load_config, load_forest_file, require_file
from app.errors import ContractError, EstimationError, UsageError
from app.models.forest import CausalForest
from app.schemas.run import InferenceSettings, RunConfig
from app.services import effects, forest_engine, inference
from app.utils import seeding

logger = logging.getLogger(__name__)

GROUP_FEATURE = "low_income"


def register(subparsers) -> None:
    parser = subparsers.add_parser("estimate", help="Estimate ATE and CATEs per threshold")
    parser.add_argument("--cohort", type=Path, action="append", required=True, help="Repeat once per threshold")
    parser.add_argument("--forest", type=Path, action="append", required=True, help="Forest fitted on the matching --cohort")
    parser.add_argument("--config", type=Path, help="RunConfig JSON; its inference block is used")
    parser.add_argument("--level", type=float)
    parser.add_argument("--bins", type=int, help="CATE histogram bins")
    parser.add_argument("--bootstrap", action="store_true", default=None, help="Add the cluster bootstrap cross-check")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=handle)


def resolve_settings(config_path: Path | None, level, bins, bootstrap, seed) -> tuple[InferenceSettings, int]:
    config = load_config(config_path, RunConfig, {"seed": seed})
    overrides = {"level": level, "hist_bins": bins, "bootstrap": bootstrap}
    settings = load_config(None, InferenceSettings, {**config.inference.model_dump(), **overrides})
    return settings, config.seed


def _load_pairs(cohorts: list[Path], forests: list[Path]):
    if len(cohorts) != len(forests):
        raise UsageError(f"{len(cohorts)} --cohort files but {len(forests)} --forest files")
    pairs = []
    for cohort_path, forest_path in zip(cohorts, forests):
        sample = load_cohort(cohort_path)
        forest = load_forest_file(forest_path)
        if not isinstance(forest, CausalForest):
            raise ContractError(f"{forest_path}: expected a causal forest")
        if forest.n_train != len(sample) or list(forest.feature_names) != list(sample.feature_names):
            raise ContractError(f"{forest_path} was not fitted on {cohort_path}")
        pairs.append((sample, forest))
    thresholds = [sample.threshold for sample, _ in pairs]
    if len(set(thresholds)) != len(thresholds):
        raise UsageError("each threshold may appear only once")
    return pairs


def _group_labels(sample) -> list[str]:
    return ["low_income" if value == 1 else "other" for value in sample.feature(GROUP_FEATURE)]


def estimate_thresholds(pairs, settings: InferenceSettings, seed: int, out: Path) -> tuple[list[Path], list[dict], dict]:
    """Write every per-threshold artifact; returns outputs, the ATE report rows and plot data."""
    outputs, report, groups = [], [], []
    figures = {"ate": [], "cate_hist": {}, "importance": {}}
    for index, (sample, forest) in enumerate(pairs):
        threshold = sample.threshold.value
        propensity = effects.propensity_from_forest(forest, settings.clamp)
        scores = effects.doubly_robust_scores(sample, propensity, forest)
        estimate = effects.estimate_ate(sample, forest, propensity, settings.level, settings.allow_unclustered, scores)
        estimate = estimate.model_copy(update={"config_echo": forest.config.model_dump(mode="json")})
        report.append(estimate.model_dump(mode="json"))

        table = effects.estimate_cate(sample, forest)
        histogram = effects.cate_histogram(table, settings.hist_bins, estimate.tau_hat)
        ranking = forest_engine.variable_importance(forest)
        outputs.append(storage.write_csv(table.to_frame(), out / f"cate_{threshold}.csv"))
        outputs.append(
            storage.write_csv(pd.DataFrame(histogram.rows(), columns=["bin_low", "bin_high", "count"]), out / f"cate_hist_{threshold}.csv")
        )
        outputs.append(
            storage.write_csv(
                pd.DataFrame(
                    [{"feature": name, "weight": weight, "rank": rank} for rank, (name, weight) in enumerate(ranking, start=1)],
                    columns=["feature", "weight", "rank"],
                ),
                out / f"importance_{threshold}.csv",
            )
        )

        try:
            by_group = effects.estimate_group_ate(
                sample, forest, propensity, _group_labels(sample), settings.level, settings.allow_unclustered
            )
            groups.extend(value.model_dump(mode="json") for value in by_group.values())
        except EstimationError as exc:
            logger.warning("%s: group effects skipped (%s)", threshold, exc.detail)

        if settings.bootstrap:
            replicates = inference.cluster_bootstrap(
                scores,
                effects.overlap_weights(propensity.oob_scores),
                sample.clusters,
                settings.bootstrap_reps,
                seeding.child_seed(seed, seeding.BOOTSTRAP, index),
            )
            variance = inference.bootstrap_variance(replicates, len(set(sample.clusters)))
            logger.info("%s: bootstrap se=%.4f vs sandwich se=%.4f", threshold, variance.std_err, estimate.std_err)
            frame = pd.DataFrame({"replicate": range(len(replicates)), "tau_hat": replicates})
            outputs.append(storage.write_csv(frame, out / f"bootstrap_ate_{threshold}.csv"))

        figures["ate"].append(
            {key: estimate.model_dump()[key] for key in ("threshold", "tau_hat", "std_err", "ci_low", "ci_high", "cate_std")}
        )
        figures["cate_hist"][threshold] = histogram.model_dump()
        figures["importance"][threshold] = [{"feature": name, "weight": weight} for name, weight in ranking]

    outputs.append(storage.write_json(report, out / "ate_report.json"))
    outputs.append(storage.write_json(groups, out / "group_ate.json"))
    return outputs, report, figures


def handle(args) -> list[Path]:
    inputs = [require_file(path) for path in [*args.cohort, *args.forest]]
    if args.config:
        inputs.append(require_file(args.config))
    settings, seed = resolve_settings(args.config, args.level, args.bins, args.bootstrap, args.seed)
    pairs = _load_pairs(args.cohort, args.forest)

    outputs, report, _ = estimate_thresholds(pairs, settings, seed, args.out)
    config = {
        "cohorts": [storage.path_from(args.out, path) for path in args.cohort],
        "forests": [storage.path_from(args.out, path) for path in args.forest],
        "inference": settings.model_dump(mode="json"),
        "seed": seed,
    }
    storage.write_manifest(args.out, "estimate", config, inputs, outputs)
    logger.info("estimate: %d thresholds -> %s", len(report), args.out)
    return outputs
