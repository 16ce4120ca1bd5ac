from typing import Any, Optional


class FoodshockException(Exception):
    exit_code: int = 1
    message: str
    path: Optional[str]
    line: Optional[int]

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line

    def fields(self) -> dict[str, Any]:
        fields = {}
        if self.path is not None:
            fields["path"] = self.path
        if self.line is not None:
            fields["line"] = self.line
        return fields

    def as_dict(self) -> dict[str, Any]:
        """
        Machine-readable form written to stderr by the command line.
        :return:
        """
        return {"error": type(self).__name__, "message": self.message, **self.fields()}


class ValidationException(FoodshockException):
    """
    Input is readable but breaks a structural rule of the model (duplicate codes, conflicting parameters, bad
    configuration values).
    """
    exit_code = 1


class DataException(FoodshockException):
    """
    Input is missing or cannot be resolved against the catalog.
    """
    exit_code = 2


class MissingYearsException(DataException):
    years: list[int]

    def __init__(self, years: list[int], path: Optional[str] = None):
        listing = ", ".join(str(year) for year in years)
        super().__init__(f"missing parameter years: {listing}", path=path)
        self.years = years

    def fields(self) -> dict[str, Any]:
        return {**super().fields(), "years": self.years}


class ScenarioException(ValidationException):
    scenario: Optional[str]

    def __init__(self, message: str, scenario: Optional[str] = None):
        super().__init__(message)
        self.scenario = scenario

    def fields(self) -> dict[str, Any]:
        if self.scenario is None:
            return super().fields()
        return {**super().fields(), "scenario": self.scenario}
