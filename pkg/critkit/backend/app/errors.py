from typing import Any, Optional


class CritkitError(Exception):
    """Base class for every error raised by critkit"""


class DimensionError(CritkitError, ValueError):
    pass


class SparseIndexError(CritkitError, IndexError):
    pass


class MatrixFormatError(CritkitError, ValueError):
    pass


class CrossSectionError(CritkitError, ValueError):
    pass


class InfeasiblePartitionError(CritkitError, ValueError):
    pass


class SingularDiagonalError(CritkitError, ArithmeticError):
    pass


class DegenerateFissionError(CritkitError, ArithmeticError):
    pass


class DegenerateFluxError(CritkitError, ArithmeticError):
    pass


class StagnationError(CritkitError):
    """Line search exhausted; `best` is the best iterate seen so far"""

    def __init__(self, message: str, best: Any):
        super().__init__(message)
        self.best = best


class SolverFailure(CritkitError):
    """A linear or nonlinear solve did not converge"""

    def __init__(self, message: str, report: Any = None, partial: Any = None):
        super().__init__(message)
        self.report = report
        self.partial = partial


class ConfigError(CritkitError, ValueError):
    def __init__(
        self,
        message: str,
        section: Optional[str] = None,
        key: Optional[str] = None,
        line: Optional[int] = None,
    ):
        self.section = section
        self.key = key
        self.line = line
        where = []
        if section:
            where.append(f"[{section}]")
        if key:
            where.append(key)
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{' '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class QuadratureError(CritkitError, ValueError):
    pass
