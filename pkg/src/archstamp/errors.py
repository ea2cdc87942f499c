"""Exception hierarchy shared by every archstamp module."""


class ArchstampError(Exception):
    """Base class for all toolkit errors."""


class InvalidSupernetError(ArchstampError):
    pass


class InvalidArchitectureError(ArchstampError):
    pass


class ShapeUnderflowError(ArchstampError):
    pass


class InvalidShapeError(ArchstampError):
    pass


class InvalidStampSizeError(ArchstampError):
    pass


class SearchInfeasibleError(ArchstampError):
    pass


class TraceParseError(ArchstampError):
    """Raised on malformed trace files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class NotANASModelError(ArchstampError):
    """The trace shows no cell-window structure."""
