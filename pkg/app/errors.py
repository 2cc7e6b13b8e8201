class PipelineError(Exception):
    status_code: int = 1

    def __init__(self, detail: str, status_code: int | None = None):
        super().__init__(detail)
        self.detail = " ".join(str(detail).split())
        if status_code is not None:
            self.status_code = status_code

    def to_dict(self) -> dict:
        return {
            "status": self.status_code,
            "error": type(self).__name__,
            "detail": self.detail,
        }


class UsageError(PipelineError):
    status_code = 2


class ValidationError(PipelineError):
    status_code = 3


class SchemaError(ValidationError):
    def __init__(self, column: str, source: str = "input"):
        super().__init__(f"{source}: missing mandatory column '{column}'")
        self.column = column


class ConfigRejected(ValidationError):
    pass


class EstimationError(PipelineError):
    status_code = 4


class InferenceError(EstimationError):
    pass


class MonteCarloAborted(EstimationError):
    pass


class ContractError(PipelineError):
    status_code = 4


class DegenerateForestWarning(UserWarning):
    pass
