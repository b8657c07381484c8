"""Exception hierarchy shared across the package."""


class SynthselError(Exception):
    """Base class for all package errors."""


class SingularityError(SynthselError):
    """A linear-algebra block that must be invertible is numerically singular."""

    def __init__(self, block: str, detail: str = ""):
        self.block = block
        msg = f"singular block: {block}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class ConvergenceError(SynthselError):
    """The active-set solver failed to certify a KKT point."""

    def __init__(self, message: str, stationarity: float, complementarity: float):
        self.stationarity = stationarity
        self.complementarity = complementarity
        super().__init__(
            f"{message} (stationarity={stationarity:.3e}, "
            f"complementarity={complementarity:.3e})"
        )


class ConfigurationError(SynthselError):
    """Invalid user-supplied configuration (grids, splits, windows, flags)."""


class PanelParseError(SynthselError):
    """Malformed input panel file; carries the offending location."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)
