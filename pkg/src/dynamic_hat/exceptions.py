"""
Custom exception classes for Dynamic-HAT.

Every failure mode of the pipeline maps onto one class below, so callers (and
the CLI's machine-readable error line) can tell a bad design space from a
diverged training run or an infeasible latency constraint.

Exception Hierarchy:
    DynamicHatError (base)
    ├── DesignSpaceError
    │   ├── InvalidSpaceError
    │   └── InvalidConfigError
    ├── ModelError
    │   ├── VocabularyError
    │   ├── EmptyInputError
    │   └── CheckpointError
    ├── TrainingError
    │   └── TrainingDivergedError
    ├── LatencyError
    │   ├── MeasurementError
    │   └── PredictorError
    ├── SearchError
    │   ├── InfeasibleConstraintError
    │   └── SpaceTooLargeError
    ├── RuntimeControlError
    │   ├── EmptyLibraryError
    │   └── UnknownOperatingPointError
    ├── MetricError
    ├── CorpusError
    ├── ArtifactError
    │   ├── ArtifactLoadError
    │   └── ArtifactSaveError
    └── ConfigurationError
        └── InvalidSettingError

Usage:
    from dynamic_hat.exceptions import InfeasibleConstraintError

    try:
        best = exhaustive_search(space, 300.0, predictor, loss_fn)
    except InfeasibleConstraintError as e:
        logger.warning(f"No operating point: {e}")
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional


class DynamicHatError(Exception):
    """
    Base exception for all Dynamic-HAT errors.

    Attributes:
        message: Human-readable error message
        context: Dictionary with additional error context
    """

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.context = context or {}
        super().__init__(message)

    def __str__(self) -> str:
        if self.context:
            context_str = ", ".join(f"{k}={v}" for k, v in self.context.items())
            return f"{self.message} ({context_str})"
        return self.message

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form used by the CLI error line."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "context": {k: _plain(v) for k, v in self.context.items()},
        }


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return str(value)


def _context(**items: Any) -> Dict[str, Any]:
    return {k: v for k, v in items.items() if v is not None}


# ============================================================================
# Design space
# ============================================================================

class DesignSpaceError(DynamicHatError):
    """Base class for design-space and configuration errors."""
    pass


class InvalidSpaceError(DesignSpaceError):
    """Raised when a DesignSpace breaks one of its invariants."""

    def __init__(self, message: str, problems: Optional[List[str]] = None):
        super().__init__(message, _context(problem_count=len(problems) if problems else None))
        self.problems = problems or []


class InvalidConfigError(DesignSpaceError):
    """Raised when a SubConfig does not validate against a space or bank."""

    def __init__(self, message: str, violations: Optional[list] = None):
        super().__init__(message, _context(violation_count=len(violations) if violations else None))
        self.violations = violations or []


# ============================================================================
# Elastic model
# ============================================================================

class ModelError(DynamicHatError):
    """Base class for weight-bank and inference errors."""
    pass


class VocabularyError(ModelError):
    """Raised for a vocabulary that is too small or an out-of-vocabulary id."""

    def __init__(self, message: str, vocab_size: Optional[int] = None, token_id: Optional[int] = None):
        super().__init__(message, _context(vocab_size=vocab_size, token_id=token_id))


class EmptyInputError(ModelError):
    """Raised when a source sentence (or corpus) is empty."""
    pass


class CheckpointError(ModelError):
    """Raised when a bank checkpoint cannot be read or written."""

    def __init__(self, message: str, file_path: Optional[str] = None):
        super().__init__(message, _context(file_path=file_path))


# ============================================================================
# Training
# ============================================================================

class TrainingError(DynamicHatError):
    """Base class for training failures."""
    pass


class TrainingDivergedError(TrainingError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, message: str, step: Optional[int] = None,
                 config_hash: Optional[str] = None, loss: Optional[float] = None):
        super().__init__(message, _context(step=step, config_hash=config_hash, loss=loss))


# ============================================================================
# Latency
# ============================================================================

class LatencyError(DynamicHatError):
    """Base class for latency measurement and prediction errors."""
    pass


class MeasurementError(LatencyError):
    """Raised when a timing run fails or its inputs are invalid."""
    pass


class PredictorError(LatencyError):
    """Raised when a latency predictor cannot be fitted or applied."""

    def __init__(self, message: str, n_samples: Optional[int] = None, n_features: Optional[int] = None):
        super().__init__(message, _context(n_samples=n_samples, n_features=n_features))


# ============================================================================
# Search
# ============================================================================

class SearchError(DynamicHatError):
    """Base class for architecture search errors."""
    pass


class InfeasibleConstraintError(SearchError):
    """Raised when no configuration meets a latency constraint."""

    def __init__(self, message: str, constraint_ms: Optional[float] = None):
        super().__init__(message, _context(constraint_ms=constraint_ms))


class SpaceTooLargeError(SearchError):
    """Raised when exhaustive enumeration is requested on a huge space."""

    def __init__(self, message: str, cardinality: Optional[int] = None, limit: Optional[int] = None):
        super().__init__(message, _context(cardinality=cardinality, limit=limit))


# ============================================================================
# Runtime controller
# ============================================================================

class RuntimeControlError(DynamicHatError):
    """Base class for run-time controller errors."""
    pass


class EmptyLibraryError(RuntimeControlError):
    """Raised when an operating library holds no points."""
    pass


class UnknownOperatingPointError(RuntimeControlError):
    """Raised when switching to a point that is not in the library."""

    def __init__(self, message: str, config_hash: Optional[str] = None):
        super().__init__(message, _context(config_hash=config_hash))


# ============================================================================
# Metrics, corpus
# ============================================================================

class MetricError(DynamicHatError):
    """Raised for malformed metric inputs (length mismatch, empty corpus)."""
    pass


class CorpusError(DynamicHatError):
    """Raised for invalid corpus parameters or contents."""
    pass


# ============================================================================
# Artifacts
# ============================================================================

class ArtifactError(DynamicHatError):
    """Base class for artifact file errors."""
    pass


class ArtifactLoadError(ArtifactError):
    """Raised when an artifact file cannot be loaded."""

    def __init__(self, message: str, file_path: Optional[str] = None):
        super().__init__(message, _context(file_path=file_path))


class ArtifactSaveError(ArtifactError):
    """Raised when an artifact file cannot be saved."""

    def __init__(self, message: str, file_path: Optional[str] = None):
        super().__init__(message, _context(file_path=file_path))


# ============================================================================
# Configuration
# ============================================================================

class ConfigurationError(DynamicHatError):
    """Base class for settings errors."""
    pass


class InvalidSettingError(ConfigurationError):
    """Raised when a settings value is invalid."""

    def __init__(self, message: str, config_key: Optional[str] = None):
        super().__init__(message, _context(config_key=config_key))
