import logging
from pathlib import Path

from app import storage
from app.dependencies import load_cohort, load_config, require_file
from app.schemas.run import RunConfig
from app.services import forest_engine

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("fit", help="Fit a causal forest on a cohort file")
    parser.add_argument("--cohort", type=Path, required=True)
    parser.add_argument("--config", type=Path, help="RunConfig JSON (forest / inference / seed)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--n-jobs", type=int, help="Parallel tree workers")
    parser.add_argument("--out", type=Path, required=True, help="Forest file (.json or .json.gz)")
    parser.set_defaults(handler=handle)


def manifest_name(forest_path: Path) -> str:
    return f"{forest_path.name.split('.')[0]}.manifest.json"


def handle(args) -> Path:
    inputs = [require_file(args.cohort)] + ([require_file(args.config)] if args.config else [])
    config = load_config(args.config, RunConfig, {"seed": args.seed})
    if args.n_jobs is not None:
        config = config.model_copy(update={"forest": config.forest.model_copy(update={"n_jobs": args.n_jobs})})
    sample = load_cohort(args.cohort)

    forest = forest_engine.fit_causal_forest(
        sample.X, sample.y, sample.d, sample.clusters, config.forest, sample.feature_names
    )
    path = storage.save_forest(forest, args.out)
    storage.write_manifest(
        path.parent,
        "fit",
        {"threshold": sample.threshold.value, **config.model_dump(mode="json", include={"forest", "inference", "seed"})},
        inputs,
        [path],
        name=manifest_name(path),
    )
    return path
