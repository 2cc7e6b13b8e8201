from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    APP_NAME: str = "sdc-mortality-grf"
    VERSION: str = "1.0.0"

    LOG_LEVEL: str = "INFO"
    N_JOBS: int = 1
    DEFAULT_SEED: int = 20201220

    PROPENSITY_CLAMP_LOW: float = 0.01
    PROPENSITY_CLAMP_HIGH: float = 0.99

    CI_GROUP_SIZE: int = 10
    BOOTSTRAP_REPS: int = 500
    HIST_BINS: int = 40

    # constant-price GDP per capita below which a country-year is low income
    LOW_INCOME_GDP_CUTOFF: float = 1045.0

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    def echo(self) -> dict:
        return self.model_dump()


settings = Settings()
