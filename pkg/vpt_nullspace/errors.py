# -*- coding: utf-8 -*-


class VptNullspaceError(Exception):
    """
    The base class of all errors raised by the package.
    """


class ContractViolation(VptNullspaceError, ValueError):
    """
    Raised when an operation is called with arguments that break its contract (shapes, ranges, symmetry).
    """


class LnShiftPreconditionError(ContractViolation):
    """
    The prompts before and after an update do not share their row statistics.
    """

    def __init__(self, drift: float) -> None:
        self.drift = drift
        super().__init__(f"The row statistics of P and P+dP differ by {drift:.3e}; the LayerNorm shift identity does not apply.")


class ConfigError(VptNullspaceError):
    """
    Invalid run configuration. `key` and `line` point to the offending entry when known.
    """

    def __init__(self, message: str, key: str = None, line: int = None) -> None:
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class TrainingError(VptNullspaceError, RuntimeError):
    """
    Training diverged. `diagnostics` holds the values observed when it happened.
    """

    def __init__(self, message: str, diagnostics: dict = None) -> None:
        self.diagnostics = diagnostics or {}
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message}: {details}" if details else message)


class CheckFailure(VptNullspaceError):
    """
    One or more properties of the check suite failed.
    """

    def __init__(self, failures: list) -> None:
        self.failures = failures
        names = ", ".join(f"{name} (residual {value:.3e})" for name, value in failures)
        super().__init__(f"{len(failures)} properties failed: {names}")
