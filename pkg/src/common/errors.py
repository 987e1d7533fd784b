from typing import Optional


class TbrmError(Exception):
    """Base class for every error raised by the simulator."""


class InvalidArgumentError(TbrmError, ValueError):
    pass


class UnsupportedDimensionError(InvalidArgumentError):
    pass


class EmptyReportError(TbrmError, ValueError):
    pass


class InputFormatError(TbrmError, ValueError):
    """A file could not be parsed; `line` is 1-based when known."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class ScenarioError(InputFormatError):
    def __init__(self, message: str, field: str, path: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        super().__init__(f"{field}: {message}", path=path, line=line)
