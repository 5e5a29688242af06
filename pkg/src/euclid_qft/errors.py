"""Exception hierarchy for the workbench."""


class EuclidError(Exception):
    """Base class for every error raised by euclid_qft."""


class GeometryError(EuclidError, ValueError):
    """Invalid lattice, region, isometry, or a vector on the wrong lattice."""


class BudgetError(EuclidError, ValueError):
    """A problem size exceeds the desk-scale budget of an exact method."""


class ConvergenceError(EuclidError, RuntimeError):
    """A numerical method failed to reach its tolerance."""


class DegenerateWeightsError(EuclidError, RuntimeError):
    """Reweighting collapsed onto a handful of samples."""


class CheckpointError(EuclidError, OSError):
    """A checkpoint file is truncated, corrupt, or from another format version."""


class ConfigError(EuclidError, ValueError):
    """A run config is malformed.

    Carries the line number and ``section.key`` when they are known so the CLI
    can point at the offending line.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.message = message
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(f"{prefix}{message}")


class ReportFormatError(EuclidError, ValueError):
    """A report cannot be written in the requested format."""
