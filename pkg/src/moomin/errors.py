"""Exception hierarchy shared across the package."""


class MoominError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MoominError, ValueError):
    pass


class EmptyPoolError(MoominError, ValueError):
    pass


class LookupFailure(MoominError, KeyError):
    """Unknown vertex, drug, protein or cell identifier."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "lookup failed"


class BipartitenessError(MoominError, ValueError):
    pass


class ParseError(MoominError, ValueError):
    """Malformed input text; carries an offset or line number when known."""

    def __init__(self, reason: str, *, offset: int | None = None, line: int | None = None,
                 source: str | None = None):
        self.reason = reason
        self.offset = offset
        self.line = line
        self.source = source
        where = []
        if source:
            where.append(source)
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {reason}" if prefix else reason)


class DataError(MoominError, ValueError):
    """Inputs that parse but are inconsistent (missing features, dangling IDs)."""


class DegenerateDataError(DataError):
    pass


class UndefinedMetricError(MoominError, ValueError):
    pass


class CheckpointError(MoominError, ValueError):
    pass
