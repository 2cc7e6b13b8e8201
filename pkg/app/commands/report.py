import logging
from pathlib import Path

from app import storage
from app.commands.estimate import _load_pairs, estimate_thresholds
from app.dependencies import parse_model, read_json, require_file
from app.errors import ValidationError
from app.schemas.run import InferenceSettings, Manifest

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="Regenerate reports from an estimate output directory")
    parser.add_argument("--in", dest="source", type=Path, required=True, help="Directory written by estimate")
    parser.add_argument("--out", type=Path, required=True)
    parser.set_defaults(handler=handle)


def _cell(value, digits: int = 4) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def render_markdown(report: list[dict]) -> str:
    lines = [
        "# Effect of a sovereign debt crisis on child mortality",
        "",
        "Overlap-weighted doubly robust average effects; standard errors clustered by country and birth year.",
        "`cate_std` is the spread of the per-child effects, not an uncertainty measure.",
        "",
        "| threshold | tau_hat | std_err | ci_low | ci_high | level | cate_std | n_treated | n_control |",
        "|---|---|---|---|---|---|---|---|---|",
    ]
    for row in report:
        lines.append(
            f"| {row['threshold']} | {_cell(row['tau_hat'])} | {_cell(row['std_err'])} | {_cell(row['ci_low'])} "
            f"| {_cell(row['ci_high'])} | {row['level']:.2f} | {_cell(row.get('cate_std'))} "
            f"| {row['n_treated']} | {row['n_control']} |"
        )
    return "\n".join(lines) + "\n"


def handle(args) -> list[Path]:
    manifest_path = require_file(args.source / "manifest.json")
    manifest = parse_model(Manifest, read_json(manifest_path), str(manifest_path))
    if manifest.command != "estimate":
        raise ValidationError(f"{manifest_path}: expected an estimate manifest, found '{manifest.command}'")
    config = manifest.config
    settings = parse_model(InferenceSettings, config.get("inference", {}), f"{manifest_path} inference")
    # recorded relative to the estimate directory
    cohorts = [require_file(storage.path_in(args.source, path)) for path in config.get("cohorts", [])]
    forests = [require_file(storage.path_in(args.source, path)) for path in config.get("forests", [])]
    pairs = _load_pairs(cohorts, forests)

    outputs, report, figures = estimate_thresholds(pairs, settings, config.get("seed", 0), args.out)
    report_md = args.out / "report.md"
    report_md.write_text(render_markdown(report), encoding="utf-8")
    outputs.append(report_md)
    outputs.append(storage.write_json(figures, args.out / "figures.json"))

    echo = {
        **config,
        "cohorts": [storage.path_from(args.out, path) for path in cohorts],
        "forests": [storage.path_from(args.out, path) for path in forests],
    }
    storage.write_manifest(args.out, "report", echo, [manifest_path, *cohorts, *forests], outputs)
    logger.info("report: %d thresholds -> %s", len(report), args.out)
    return outputs
