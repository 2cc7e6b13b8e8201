import logging
from pathlib import Path

import pandas as pd

from app import storage
from app.dependencies import load_config, read_table, require_file
from app.errors import UsageError
from app.schemas.cohort import parse_thresholds
from app.schemas.run import RunConfig
from app.services import cohort_builder

logger = logging.getLogger(__name__)

ISSUE_COLUMNS = ["source", "row_number", "key", "message"]
EXCLUSION_COLUMNS = ["child_id", "threshold", "reason"]


def register(subparsers) -> None:
    parser = subparsers.add_parser("build-cohort", help="Build cohort_<threshold>.csv tables")
    parser.add_argument("--config", type=Path, help="RunConfig JSON; flags override its entries")
    parser.add_argument("--children", type=Path)
    parser.add_argument("--events", type=Path)
    parser.add_argument("--covars", type=Path)
    parser.add_argument("--thresholds", type=parse_thresholds, help="Comma list, default all six")
    parser.add_argument("--low-income-cutoff", type=float)
    parser.add_argument("--out", type=Path)
    parser.set_defaults(handler=handle)


def _issue_frame(source: str, issues) -> pd.DataFrame:
    return pd.DataFrame(
        [{"source": source, **issue.model_dump()} for issue in issues],
        columns=ISSUE_COLUMNS,
    )


def resolve_config(args) -> RunConfig:
    overrides = {
        "children": args.children,
        "events": args.events,
        "covars": args.covars,
        "thresholds": args.thresholds,
        "low_income_cutoff": args.low_income_cutoff,
        "out": args.out,
    }
    config = load_config(args.config, RunConfig, overrides)
    missing = [f"--{name}" for name in ("children", "events", "covars", "out") if getattr(config, name) is None]
    if missing:
        raise UsageError(f"build-cohort needs {', '.join(missing)} (as flags or in --config)")
    return config


def handle(args) -> list[Path]:
    config = resolve_config(args)
    sources = [config.children, config.events, config.covars]
    children_rows, event_rows, covar_rows = (read_table(path) for path in sources)
    inputs = sources + ([require_file(args.config)] if args.config else [])

    children, child_issues = cohort_builder.parse_birth_histories(children_rows)
    events, event_issues = cohort_builder.parse_events(event_rows)
    covars, covar_issues = cohort_builder.parse_country_year(covar_rows)

    out: Path = config.out
    outputs = []
    issues = pd.concat(
        [
            _issue_frame("children.csv", child_issues),
            _issue_frame("events.csv", event_issues),
            _issue_frame("country_year.csv", covar_issues),
        ],
        ignore_index=True,
    )
    outputs.append(storage.write_csv(issues, out / "row_issues.csv"))

    thresholds = sorted(config.thresholds, key=lambda threshold: threshold.months)
    exclusions, shortest = [], None
    for threshold in thresholds:
        sample, excluded = cohort_builder.build_threshold_sample(
            children, events, covars, threshold, config.low_income_cutoff
        )
        exclusions.extend(record.model_dump() for record in excluded)
        outputs.append(storage.write_csv(sample.to_frame(), out / f"cohort_{threshold.value}.csv"))
        if shortest is None:
            shortest = sample
    outputs.append(storage.write_csv(pd.DataFrame(exclusions, columns=EXCLUSION_COLUMNS), out / "exclusions.csv"))

    outputs.append(storage.write_csv(cohort_builder.event_time_histogram(children, events), out / "eventtime_hist.csv"))
    outputs.append(storage.write_csv(cohort_builder.survey_markers(children, events), out / "eventtime_surveys.csv"))
    if shortest is not None:
        frequency = cohort_builder.exposure_frequency_report(shortest)
        rows = [{"country": country, "count": count} for country, count in frequency.items()]
        rows.append({"country": "total", "count": sum(frequency.values())})
        outputs.append(storage.write_csv(pd.DataFrame(rows, columns=["country", "count"]), out / "exposure_frequency.csv"))

    echo = {
        "thresholds": [threshold.value for threshold in thresholds],
        "low_income_cutoff": config.low_income_cutoff,
    }
    storage.write_manifest(out, "build-cohort", echo, inputs, outputs)
    logger.info(
        "build-cohort: %d children, %d events, %d rejected rows, %d exclusions -> %s",
        len(children), len(events), len(issues), len(exclusions), out,
    )
    return outputs
