import gzip
import json
import logging
import math
import os
from pathlib import Path

import numpy as np
import pandas as pd

from app.errors import ValidationError
from app.models.forest import CausalForest, Forest, RegressionForest
from app.models.tree import Tree
from app.schemas.forest import ForestFile, RegressionForestSchema, TreeSchema
from app.schemas.run import Manifest
from app.utils.hashing import checksums

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, Path):
        return str(value)
    return value


def dumps(data) -> str:
    return json.dumps(_jsonable(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(data, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data), encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def read_json(path: Path):
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rt", encoding="utf-8") as handle:
                return json.load(handle)
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: cannot read JSON ({exc})") from exc


def _floats(values) -> list[float | None]:
    return [None if math.isnan(value) else value for value in np.asarray(values, dtype=float).tolist()]


def _array(values, dtype=float) -> np.ndarray:
    if dtype is float:
        return np.array([np.nan if value is None else value for value in values], dtype=float)
    return np.array(values, dtype=dtype)


def _tree_schema(tree: Tree) -> TreeSchema:
    return TreeSchema(
        feature=tree.feature.tolist(),
        threshold=_floats(tree.threshold),
        left=tree.left.tolist(),
        right=tree.right.tolist(),
        value=_floats(tree.value),
        depth=tree.depth.tolist(),
        n_treated=tree.n_treated.tolist(),
        n_control=tree.n_control.tolist(),
        split_ids=tree.split_ids.tolist(),
        estimation_ids=tree.estimation_ids.tolist(),
        bag_clusters=tree.bag_clusters.tolist(),
        group=tree.group,
    )


def _tree(schema: TreeSchema) -> Tree:
    return Tree(
        feature=_array(schema.feature, np.int64),
        threshold=_array(schema.threshold),
        left=_array(schema.left, np.int64),
        right=_array(schema.right, np.int64),
        value=_array(schema.value),
        depth=_array(schema.depth, np.int64),
        n_treated=_array(schema.n_treated, np.int64),
        n_control=_array(schema.n_control, np.int64),
        split_ids=_array(schema.split_ids, np.int64),
        estimation_ids=_array(schema.estimation_ids, np.int64),
        bag_clusters=_array(schema.bag_clusters, np.int64),
        group=schema.group,
    )


def _forest_schema(forest: Forest) -> RegressionForestSchema:
    return RegressionForestSchema(
        config=forest.config,
        feature_names=list(forest.feature_names),
        cluster_labels=[str(label) for label in forest.cluster_labels],
        row_clusters=forest.row_clusters.tolist(),
        targets=_floats(forest.targets) if isinstance(forest, RegressionForest) else [],
        trees=[_tree_schema(tree) for tree in forest.trees],
    )


def _forest_parts(schema: RegressionForestSchema) -> dict:
    return {
        "trees": [_tree(tree) for tree in schema.trees],
        "config": schema.config,
        "feature_names": list(schema.feature_names),
        "cluster_labels": np.array(schema.cluster_labels, dtype=object),
        "row_clusters": _array(schema.row_clusters, np.int64),
    }


def forest_document(forest: Forest) -> ForestFile:
    config_echo = forest.config.model_dump(mode="json")
    if isinstance(forest, CausalForest):
        return ForestFile(
            kind="causal",
            config_echo=config_echo,
            feature_names=list(forest.feature_names),
            forest=_forest_schema(forest),
            centering_outcome=_forest_schema(forest.centering_outcome),
            centering_treatment=_forest_schema(forest.centering_treatment),
            outcome=_floats(forest.outcome),
            treatment=_floats(forest.treatment),
            outcome_hat=_floats(forest.outcome_hat),
            treatment_hat=_floats(forest.treatment_hat),
        )
    return ForestFile(
        kind="regression",
        config_echo=config_echo,
        feature_names=list(forest.feature_names),
        forest=_forest_schema(forest),
    )


def forest_from_document(document: ForestFile) -> Forest:
    if document.kind == "regression":
        return RegressionForest(**_forest_parts(document.forest), targets=_array(document.forest.targets))
    if document.centering_outcome is None or document.centering_treatment is None:
        raise ValidationError("causal forest file lacks its centering forests")
    return CausalForest(
        **_forest_parts(document.forest),
        centering_outcome=forest_from_document(
            ForestFile(kind="regression", config_echo={}, feature_names=document.feature_names, forest=document.centering_outcome)
        ),
        centering_treatment=forest_from_document(
            ForestFile(kind="regression", config_echo={}, feature_names=document.feature_names, forest=document.centering_treatment)
        ),
        outcome=_array(document.outcome),
        treatment=_array(document.treatment),
        outcome_hat=_array(document.outcome_hat),
        treatment_hat=_array(document.treatment_hat),
    )


def save_forest(forest: Forest, path: Path) -> Path:
    """Write ``forest`` as structured JSON, gzip-compressed when ``path`` ends in ``.gz``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps(forest_document(forest).model_dump(mode="json"))
    if path.suffix == ".gz":
        with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as handle:
            handle.write(text.encode("utf-8"))
    else:
        path.write_text(text, encoding="utf-8")
    logger.info("saved %s forest (%d trees) to %s", type(forest).__name__, len(forest.trees), path)
    return path


def load_forest(path: Path) -> Forest:
    data = read_json(path)
    if not isinstance(data, dict) or data.get("format") != "sdc-grf-forest":
        raise ValidationError(f"{path}: not a forest file")
    try:
        document = ForestFile.model_validate(data)
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed forest file ({exc})") from exc
    forest = forest_from_document(document)
    logger.info("loaded %s forest (%d trees) from %s", document.kind, len(forest.trees), path)
    return forest


def write_manifest(
    out_dir: Path, command: str, config: dict, inputs: list[Path], outputs: list[Path], name: str = "manifest.json"
) -> Path:
    out_dir = Path(out_dir)
    manifest = Manifest(
        command=command,
        config=config,
        inputs=checksums(inputs),
        outputs=sorted(str(Path(path).relative_to(out_dir)) if Path(path).is_relative_to(out_dir) else str(path) for path in outputs),
    )
    return write_json(manifest.model_dump(mode="json"), out_dir / name)


def path_from(directory: Path, path: Path) -> str:
    """``path`` as recorded in a manifest written to ``directory``."""
    return Path(os.path.relpath(Path(path).resolve(), Path(directory).resolve())).as_posix()


def path_in(directory: Path, recorded: str) -> Path:
    return Path(directory) / recorded
