"""Exception hierarchy shared by every dpc package.

Each error carries the exit status the command line reports for it.
"""
from typing import Iterable, List


class DPCError(Exception):
    exit_code = 1


class ContractViolation(DPCError, ValueError):
    """A precondition on shapes, sizes or call order was not met."""


class ConfigError(DPCError):
    def __init__(self, problems: Iterable[str]):
        self.problems: List[str] = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class ManifestError(DPCError):
    def __init__(self, problems: Iterable[str]):
        self.problems: List[str] = list(problems)
        super().__init__("invalid manifest:\n  " + "\n  ".join(self.problems))


class ArchiveError(DPCError):
    def __init__(self, message: str, names: Iterable[str] = ()):
        self.names: List[str] = list(names)
        if self.names:
            message = f"{message}: {', '.join(self.names)}"
        super().__init__(message)


class DigestMismatch(DPCError):
    def __init__(self, what: str, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} digest mismatch: checkpoint has {expected}, runtime has {actual}")


class ImageReadError(DPCError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"cannot read image {path}: {reason}")


class SyntheticDataError(DPCError):
    pass


class NumericError(DPCError, ArithmeticError):
    exit_code = 2


class NonDeterministicError(NumericError):
    pass


class GradCheckFailed(DPCError):
    exit_code = 3

    def __init__(self, report):
        self.report = report
        super().__init__(
            f"gradient check failed: max relative error {report.max_rel_error:.3e} "
            f"exceeds tolerance {report.tolerance:.1e}"
        )
