class ApproxCtlError(Exception):
    """Base class for library errors."""


class DiagnosticError(ApproxCtlError, RuntimeError):
    """A numerical self-check failed (instability, envelope violation, non-finite data)."""


class ScenarioError(ApproxCtlError, ValueError):
    """Scenario file could not be parsed or failed validation."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = []
        if path:
            where.append(path)
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
