from enum import Enum


class Threshold(str, Enum):
    neo = "neo"
    u1 = "u1"
    u2 = "u2"
    u3 = "u3"
    u4 = "u4"
    u5 = "u5"

    @property
    def months(self) -> int:
        return THRESHOLD_MONTHS[self.value]


# neonatal is 28 days; birth histories are monthly so it is one month
THRESHOLD_MONTHS = {"neo": 1, "u1": 12, "u2": 24, "u3": 36, "u4": 48, "u5": 60}

ALL_THRESHOLDS = tuple(Threshold)


class ExclusionReason(str, Enum):
    missing_covariates = "MISSING_COVARIATES"
    censored = "CENSORED"
    duplicate_id = "DUPLICATE_ID"


FEATURE_NAMES = (
    "sex_female",
    "mother_age",
    "mother_edu",
    "residence_urban",
    "birth_order",
    "multiple_birth",
    # country-year covariates; the indicator precedes the gdp it is cut from
    "low_income",
    "gdp_per_capita",
    "population",
)

# binary indicators a synthetic moderator can switch on without a cut
INDICATOR_FEATURES = ("sex_female", "residence_urban", "multiple_birth", "low_income")


def parse_thresholds(text: str) -> list[Threshold]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    try:
        return [Threshold(name) for name in names]
    except ValueError as exc:
        raise ValueError(f"unknown threshold in '{text}'; expected neo,u1,u2,u3,u4,u5") from exc
