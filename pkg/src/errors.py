"""Exception hierarchy for the Design Loop Bench harness.

ConfigError maps to CLI exit code 1, every DataError to exit code 2.
"""


class HarnessError(Exception):
    """Base class for all harness errors."""


class ConfigError(HarnessError):
    """Invalid settings file, flag combination, or plan."""


class DataError(HarnessError, ValueError):
    """Invalid or unusable input data."""


# =============================================================================
# SPACE
# =============================================================================

class InvalidSpace(DataError):
    """Parameter space violates its invariants."""


class UnknownParameter(DataError):
    """Design names a parameter that is not in the space."""


class UnknownOption(DataError):
    """Categorical value is not one of the declared options."""


class InvalidValue(DataError):
    """Value has the wrong type for its parameter kind."""


class CardinalityOverflow(DataError):
    """Categorical has more options than the masking alphabet covers."""


# =============================================================================
# ORACLE
# =============================================================================

class TooFewRows(DataError):
    """Dataset has fewer than three rows."""


class DegenerateTarget(DataError):
    """All targets are equal, so R² is undefined."""


# =============================================================================
# OPTIMIZERS AND AGENTS
# =============================================================================

class SingularGram(DataError):
    """GP Gram matrix could not be factorized even after jitter escalation."""


class ReplayExhausted(DataError):
    """Stored design sequence is shorter than the requested iterations."""


class AgentFailure(HarnessError):
    """Agent did not produce a usable design."""

    def __init__(self, message: str, retries_used: int = 0):
        super().__init__(message)
        self.retries_used = retries_used


class ParseFailure(AgentFailure):
    """Agent replies could not be parsed into a design after all retries."""


class TransportFailure(AgentFailure):
    """Agent transport could not deliver the request or receive a reply."""


# =============================================================================
# RUNNER AND TASKS
# =============================================================================

class TaskLoadError(DataError):
    """Task assets could not be loaded."""


class ManifestInvalid(TaskLoadError):
    """Task manifest failed validation."""

    def __init__(self, path: str, problems: list[str]):
        self.path = path
        self.problems = problems
        super().__init__(f"{path}: " + "; ".join(problems))


class CorruptRecord(DataError):
    """Trajectory store line could not be decoded."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")


# =============================================================================
# METRICS
# =============================================================================

class EmptyTrajectory(DataError):
    """Trajectory has no steps."""


class DegenerateRange(DataError):
    """Task optimum equals task worst."""


class GroupSizeMismatch(DataError):
    """GRPO group has the wrong size or mixes tasks / lengths."""


class NoNumericParameters(DataError):
    """Proximity needs at least one numeric parameter."""


# =============================================================================
# STATS
# =============================================================================

class AllZeroDiffs(DataError):
    """Every paired difference is zero."""


class DegenerateTable(DataError):
    """Contingency table has a zero margin."""


class ZeroVariance(DataError):
    """Correlation input has no variation."""


# =============================================================================
# AUDIT AND ANALYSIS
# =============================================================================

class NoObservedValues(DataError):
    """Column has no non-missing values."""


class NoCategoricalColumns(DataError):
    """Space has no categorical parameters."""


class NoUsableColumn(DataError):
    """Published-best row is missing every categorical value."""


class DegenerateScores(DataError):
    """All oracle predictions over the dataset are equal."""


class SingleValueColumn(DataError):
    """Column has a single observed value."""


class MissingBaseline(DataError):
    """Baseline cell is missing for a task."""
