import logging
from pathlib import Path

import pandas as pd

from app import storage
from app.config import settings
from app.dependencies import load_config, require_file
from app.schemas.run import PipelineSettings
from app.schemas.synth import DgpConfig
from app.services import synthlab

logger = logging.getLogger(__name__)

ESTIMATORS = {"pipeline": synthlab.pipeline_estimator, "oracle": synthlab.oracle_estimator}
TIMING_COLUMNS = ["rep", "wall_seconds"]


def register(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="Run a Monte Carlo study on synthetic panels")
    parser.add_argument("--dgp", type=Path, required=True, help="DgpConfig JSON")
    parser.add_argument("--config", type=Path, help="Pipeline settings JSON (forest / inference)")
    parser.add_argument("--reps", type=int, required=True)
    parser.add_argument("--estimator", choices=sorted(ESTIMATORS), default="pipeline")
    parser.add_argument("--n-jobs", type=int, default=settings.N_JOBS, help="Parallel reps")
    parser.add_argument("--emit-panel", action="store_true", help="Also write the first rep's input tables")
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=handle)


def handle(args) -> list[Path]:
    inputs = [require_file(args.dgp)] + ([require_file(args.config)] if args.config else [])
    dgp = load_config(args.dgp, DgpConfig)
    pipeline = load_config(args.config, PipelineSettings)
    out: Path = args.out

    report = synthlab.evaluate_estimator(dgp, pipeline, args.reps, ESTIMATORS[args.estimator], args.n_jobs)
    rows = [rep.model_dump(exclude={"wall_seconds"}) for rep in report.reps]
    outputs = [
        storage.write_json(report.model_dump(mode="json", exclude={"reps": {"__all__": {"wall_seconds"}}}), out / "montecarlo_report.json"),
        storage.write_csv(pd.DataFrame(rows, columns=[name for name in rows[0]]), out / "montecarlo_reps.csv"),
        storage.write_csv(pd.DataFrame([rep.model_dump(include=set(TIMING_COLUMNS)) for rep in report.reps], columns=TIMING_COLUMNS), out / "timings.csv"),
    ]

    if args.emit_panel:
        panel = synthlab.generate_panel(dgp.model_copy(update={"seed": synthlab.rep_seed(dgp, 0)}))
        panel_dir = out / "panel"
        outputs += [
            storage.write_csv(panel.children, panel_dir / "children.csv"),
            storage.write_csv(panel.events, panel_dir / "events.csv"),
            storage.write_csv(panel.covariates, panel_dir / "country_year.csv"),
            storage.write_csv(panel.truth.to_frame(), panel_dir / "truth.csv"),
            storage.write_csv(panel.truth.propensity, panel_dir / "truth_propensity.csv"),
        ]

    config = {
        "dgp": dgp.model_dump(mode="json"),
        "pipeline": pipeline.model_dump(mode="json"),
        "reps": args.reps,
        "estimator": args.estimator,
    }
    storage.write_manifest(out, "simulate", config, inputs, [path for path in outputs if path.name != "timings.csv"])
    return outputs
