"""Birth histories and crisis events into exposure-indexed cohort samples.

Births are dated by century-month code (months since January 1900) and
crises by calendar year. A crisis occupies its whole calendar year; a child
is exposed when that year overlaps the window from conception (nine months
before birth) to the threshold age.
"""
import logging
from collections import defaultdict

import numpy as np
import pandas as pd
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from app.config import settings
from app.errors import SchemaError
from app.models.cohort import CohortSample
from app.schemas.child import (
    ChildRecord,
    CountryYearCovariates,
    CrisisEvent,
    ExclusionRecord,
    RowIssue,
    cmc_year,
    to_cmc,
)
from app.schemas.cohort import FEATURE_NAMES, THRESHOLD_MONTHS, ExclusionReason, Threshold

logger = logging.getLogger(__name__)

GESTATION_MONTHS = 9

CHILDREN_COLUMNS = (
    "child_id",
    "country",
    "birth_cmc",
    "survey_year",
    "died",
    "age_at_death_months",
    "sex",
    "mother_age",
    "mother_edu",
    "residence",
    "birth_order",
    "multiple_birth",
)
EVENTS_COLUMNS = ("country", "year")
COVARIATES_COLUMNS = ("country", "year", "gdp_per_capita", "population")


def _require_columns(frame: pd.DataFrame, columns, source: str) -> None:
    for column in columns:
        if column not in frame.columns:
            raise SchemaError(column, source)


def _issue_message(exc: PydanticValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(item) for item in error["loc"])
        parts.append(f"{location}: {error['msg']}" if location else error["msg"])
    return "; ".join(parts)


def _parse_rows(frame: pd.DataFrame, columns, model: type[BaseModel], source: str, key: str):
    """Validated records as (input row number, record) pairs, plus the rejected rows."""
    _require_columns(frame, columns, source)
    frame = frame.astype(object).where(frame.notna(), None)
    records, issues = [], []
    for row_number, row in enumerate(frame[list(columns)].to_dict(orient="records"), start=1):
        row = {column: (None if value == "" else value) for column, value in row.items()}
        try:
            records.append((row_number, model.model_validate(row)))
        except PydanticValidationError as exc:
            issues.append(RowIssue(row_number=row_number, key=None if row.get(key) is None else str(row[key]), message=_issue_message(exc)))
    if issues:
        logger.warning("%s: %d of %d rows rejected", source, len(issues), len(frame))
    return records, issues


def parse_birth_histories(rows: pd.DataFrame) -> tuple[list[ChildRecord], list[RowIssue]]:
    """Validate ``children.csv`` rows; malformed rows go to the issue report."""
    numbered, issues = _parse_rows(rows, CHILDREN_COLUMNS, ChildRecord, "children.csv", "child_id")
    records = [record for _, record in numbered]
    logger.info("parsed %d birth histories", len(records))
    return records, issues


def parse_events(rows: pd.DataFrame) -> tuple[list[CrisisEvent], list[RowIssue]]:
    numbered, issues = _parse_rows(rows, EVENTS_COLUMNS, CrisisEvent, "events.csv", "country")
    unique, seen = [], set()
    for row_number, event in numbered:
        if (event.country, event.year) in seen:
            issues.append(RowIssue(row_number=row_number, key=event.country, message=f"duplicate event {event.country} {event.year}"))
            continue
        seen.add((event.country, event.year))
        unique.append(event)
    issues.sort(key=lambda issue: issue.row_number)
    return unique, issues


def parse_country_year(rows: pd.DataFrame) -> tuple[list[CountryYearCovariates], list[RowIssue]]:
    numbered, issues = _parse_rows(rows, COVARIATES_COLUMNS, CountryYearCovariates, "country_year.csv", "country")
    return [record for _, record in numbered], issues


def events_by_country(events: list[CrisisEvent]) -> dict[str, list[int]]:
    table = defaultdict(list)
    for event in events:
        table[event.country].append(event.year)
    return {country: sorted(years) for country, years in table.items()}


def exposure_window(child: ChildRecord, threshold_months: int) -> tuple[int, int]:
    """First and last month (CMC) of the conception-to-threshold window."""
    return child.birth_month - GESTATION_MONTHS, child.birth_month + threshold_months


def exposure_years(child: ChildRecord, threshold_months: int) -> tuple[int, int]:
    first, last = exposure_window(child, threshold_months)
    return cmc_year(first), cmc_year(last)


def _check_threshold(threshold_months: int) -> int:
    if threshold_months not in THRESHOLD_MONTHS.values():
        raise ValueError(f"threshold must be one of {sorted(THRESHOLD_MONTHS.values())} months, got {threshold_months}")
    return threshold_months


def build_exposure(child: ChildRecord, events: list[CrisisEvent], threshold: int | Threshold) -> bool:
    months = _check_threshold(threshold.months if isinstance(threshold, Threshold) else int(threshold))
    first, last = exposure_window(child, months)
    for event in events:
        if event.country != child.country:
            continue
        if to_cmc(event.year, 1) <= last and to_cmc(event.year, 12) >= first:
            return True
    return False


def event_time(child: ChildRecord, events: list[CrisisEvent]) -> int | None:
    """Birth year minus the nearest crisis year of the child's country; ties pick the earlier crisis."""
    years = sorted(event.year for event in events if event.country == child.country)
    if not years:
        return None
    nearest = min(years, key=lambda year: (abs(child.birth_year - year), year))
    return child.birth_year - nearest


def is_censored(child: ChildRecord, threshold_months: int) -> bool:
    """Outcome not yet observable at survey time.

    The survey is dated by year only, so observation is taken to end in
    January of the survey year.
    """
    if child.died:
        return False
    return to_cmc(child.survey_year, 1) - child.birth_month < threshold_months


def outcome(child: ChildRecord, threshold_months: int) -> int:
    return int(child.died and child.age_at_death_months <= threshold_months)


def covariate_lookup(covars: list[CountryYearCovariates]) -> dict[tuple[str, int], CountryYearCovariates]:
    return {(row.country, row.year): row for row in covars}


def feature_vector(child: ChildRecord, covariates: CountryYearCovariates, low_income_cutoff: float) -> list[float]:
    return [
        float(child.sex.value == "F"),
        child.mother_age_at_birth,
        float(child.mother_education),
        float(child.residence.value == "urban"),
        float(child.birth_order),
        float(child.multiple_birth),
        float(covariates.gdp_per_capita < low_income_cutoff),
        covariates.gdp_per_capita,
        covariates.population,
    ]


def build_threshold_sample(
    children: list[ChildRecord],
    events: list[CrisisEvent],
    covars: list[CountryYearCovariates],
    threshold: Threshold,
    low_income_cutoff: float = settings.LOW_INCOME_GDP_CUTOFF,
) -> tuple[CohortSample, list[ExclusionRecord]]:
    threshold = Threshold(threshold)
    months = threshold.months
    lookup = covariate_lookup(covars)
    country_events = defaultdict(list)
    for event in events:
        country_events[event.country].append(event)

    rows, exclusions, seen = [], [], set()
    for child in children:
        if child.child_id in seen:
            exclusions.append(ExclusionRecord(child_id=child.child_id, threshold=threshold.value, reason=ExclusionReason.duplicate_id.value))
            continue
        seen.add(child.child_id)
        covariates = lookup.get((child.country, child.birth_year))
        if covariates is None:
            exclusions.append(ExclusionRecord(child_id=child.child_id, threshold=threshold.value, reason=ExclusionReason.missing_covariates.value))
            continue
        if is_censored(child, months):
            exclusions.append(ExclusionRecord(child_id=child.child_id, threshold=threshold.value, reason=ExclusionReason.censored.value))
            continue
        rows.append(
            (
                child,
                feature_vector(child, covariates, low_income_cutoff),
                outcome(child, months),
                int(build_exposure(child, country_events[child.country], months)),
            )
        )

    duplicates = sum(record.reason == ExclusionReason.duplicate_id.value for record in exclusions)
    if duplicates:
        logger.warning("%s: %d rows repeat an earlier child_id and were excluded", threshold.value, duplicates)

    if not rows:
        logger.info("%s: empty sample (%d exclusions)", threshold.value, len(exclusions))
        return CohortSample.empty(threshold), exclusions

    sample = CohortSample(
        threshold=threshold,
        feature_names=FEATURE_NAMES,
        X=np.array([features for _, features, _, _ in rows], dtype=float),
        y=np.array([y for _, _, y, _ in rows], dtype=float),
        d=np.array([d for _, _, _, d in rows], dtype=float),
        clusters=np.array([child.cluster for child, *_ in rows], dtype=object),
        child_ids=np.array([child.child_id for child, *_ in rows], dtype=object),
        countries=np.array([child.country for child, *_ in rows], dtype=object),
        birth_years=np.array([child.birth_year for child, *_ in rows], dtype=np.int64),
    )
    logger.info(
        "%s: %d rows (%d exposed, %d died), %d exclusions",
        threshold.value, len(sample), sample.n_treated, int(sample.y.sum()), len(exclusions),
    )
    return sample, exclusions


def exposure_frequency_report(sample: CohortSample) -> dict[str, int]:
    """Children exposed in utero or early life who also died, per country."""
    counts = defaultdict(int)
    for country, y, d in zip(sample.countries, sample.y, sample.d):
        if y == 1 and d == 1:
            counts[str(country)] += 1
    return {country: counts[country] for country in sorted(counts)}


def event_time_histogram(children: list[ChildRecord], events: list[CrisisEvent]) -> pd.DataFrame:
    tallies = defaultdict(lambda: [0, 0])
    for child in children:
        offset = event_time(child, events)
        if offset is None:
            continue
        tallies[offset][1 if child.died else 0] += 1
    rows = [(offset, alive, died) for offset, (alive, died) in sorted(tallies.items())]
    return pd.DataFrame(rows, columns=["event_time", "alive_count", "died_count"])


def survey_markers(children: list[ChildRecord], events: list[CrisisEvent]) -> pd.DataFrame:
    """Where each (country, survey year) falls relative to the country's nearest crisis."""
    by_country = events_by_country(events)
    surveys = sorted({(child.country, child.survey_year) for child in children if child.country in by_country})
    tallies = defaultdict(int)
    for country, year in surveys:
        nearest = min(by_country[country], key=lambda event_year: (abs(year - event_year), event_year))
        tallies[year - nearest] += 1
    return pd.DataFrame(sorted(tallies.items()), columns=["event_time", "survey_count"])
