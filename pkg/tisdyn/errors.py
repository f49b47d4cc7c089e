from typing import List, Optional


class TisdynError(RuntimeError):
    exit_code = 1

    def __init__(self, message):
        super().__init__(message)
        self.message = message


class ConfigValidationError(TisdynError):
    exit_code = 2

    def __init__(self, message, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.errors = errors if errors is not None else [message]


class InsufficientDataError(TisdynError):
    exit_code = 2


class MissingMarketYearError(TisdynError):
    exit_code = 2


class NonFiniteValueError(TisdynError):
    exit_code = 3


class NumericalBlowUpError(TisdynError):
    exit_code = 3

    def __init__(self, message, step: int, component: str):
        super().__init__(message)
        self.step = step
        self.component = component


class CalibrationError(TisdynError):
    exit_code = 3


class OutputError(TisdynError):
    exit_code = 4
