import logging
from pathlib import Path
from typing import TypeVar

import pandas as pd
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from app.errors import ValidationError
from app.models.cohort import ID_COLUMNS, CohortSample
from app.schemas.cohort import Threshold
from app.storage import load_forest, read_json

logger = logging.getLogger(__name__)

Model = TypeVar("Model", bound=BaseModel)

TEXT_COLUMNS = {"child_id": str, "country": str, "sex": str, "residence": str, "cluster": str}


def require_file(path: Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    return path


def read_table(path: Path) -> pd.DataFrame:
    path = require_file(path)
    try:
        frame = pd.read_csv(
            path, dtype=TEXT_COLUMNS, keep_default_na=False, na_values=[""], float_precision="round_trip"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: cannot parse CSV ({exc})") from exc
    logger.debug("read %s: %d rows", path, len(frame))
    return frame


def _model_errors(exc: PydanticValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(item) for item in error['loc']) or 'config'}: {error['msg']}" for error in exc.errors()
    )


def parse_model(model: type[Model], data, source: str) -> Model:
    try:
        return model.model_validate(data)
    except PydanticValidationError as exc:
        raise ValidationError(f"{source}: {_model_errors(exc)}") from exc


def load_config(path: Path | None, model: type[Model], overrides: dict | None = None) -> Model:
    """Validate a JSON config file (or just ``overrides``) against ``model``."""
    data = {}
    if path is not None:
        data = read_json(require_file(path))
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
    data = {**data, **{key: value for key, value in (overrides or {}).items() if value is not None}}
    return parse_model(model, data, str(path or "config"))


def cohort_threshold(path: Path) -> Threshold:
    stem = Path(path).name.split(".")[0]
    token = stem.removeprefix("cohort_")
    try:
        return Threshold(token)
    except ValueError as exc:
        raise ValidationError(f"{path}: cannot tell the threshold from the file name (expected cohort_<threshold>.csv)") from exc


def load_cohort(path: Path) -> CohortSample:
    threshold = cohort_threshold(path)
    frame = read_table(path)
    missing = [column for column in ID_COLUMNS if column not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: missing mandatory column '{missing[0]}'")
    sample = CohortSample.from_frame(threshold, frame)
    logger.info("loaded %s: %d rows, %d features", path, len(sample), len(sample.feature_names))
    return sample


def load_forest_file(path: Path):
    return load_forest(require_file(path))
