import numpy as np
import pytest

from app.schemas.child import ChildRecord, CrisisEvent, CountryYearCovariates, to_cmc
from app.schemas.forest import ForestConfig
from app.schemas.run import InferenceSettings, PipelineSettings
from app.schemas.synth import DgpConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte Carlo studies")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_child(
    child_id="c1",
    country="PE",
    year=1995,
    month=1,
    survey_year=2005,
    died=False,
    age=None,
    **extra,
) -> ChildRecord:
    return ChildRecord(
        child_id=child_id,
        country=country,
        birth_cmc=to_cmc(year, month),
        survey_year=survey_year,
        died=died,
        age_at_death_months=age,
        sex=extra.get("sex", "F"),
        mother_age=extra.get("mother_age", 27.0),
        mother_edu=extra.get("mother_edu", 1),
        residence=extra.get("residence", "rural"),
        birth_order=extra.get("birth_order", 1),
        multiple_birth=extra.get("multiple_birth", False),
    )


def make_event(country="PE", year=1995) -> CrisisEvent:
    return CrisisEvent(country=country, year=year)


def make_covars(country="PE", years=range(1980, 2010), gdp=800.0, population=2.0e7) -> list[CountryYearCovariates]:
    return [CountryYearCovariates(country=country, year=year, gdp_per_capita=gdp, population=population) for year in years]


@pytest.fixture
def small_forest_config() -> ForestConfig:
    return ForestConfig(n_trees=40, ci_group_size=2, min_leaf_size=5, seed=7)


@pytest.fixture
def fast_pipeline(small_forest_config) -> PipelineSettings:
    return PipelineSettings(forest=small_forest_config, inference=InferenceSettings())


@pytest.fixture
def small_dgp() -> DgpConfig:
    return DgpConfig(n_countries=8, years_span=5, children_per_country_year=20, true_ate=0.13, seed=11)


@pytest.fixture
def regression_data():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(400, 3))
    y = np.where(X[:, 0] > 0.5, 1.0, 0.0) + rng.normal(0, 0.1, 400)
    clusters = np.array([f"g{i % 40}" for i in range(400)], dtype=object)
    return X, y, clusters


@pytest.fixture
def causal_data():
    """Constant effect 0.3 with treatment independent of covariates."""
    rng = np.random.default_rng(5)
    n = 800
    X = rng.uniform(size=(n, 3))
    d = (rng.uniform(size=n) < 0.5).astype(float)
    y = 0.5 * X[:, 1] + 0.3 * d + rng.normal(0, 0.1, n)
    clusters = np.array([f"g{i % 80}" for i in range(n)], dtype=object)
    return X, y, d, clusters
