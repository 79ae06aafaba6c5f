"""
Tests for the custom exceptions module.
"""

import json

import pytest

from dynamic_hat import exceptions


def test_base_exception():
    """DynamicHatError keeps its message and an empty context."""
    exc = exceptions.DynamicHatError("Test error")
    assert str(exc) == "Test error"
    assert exc.message == "Test error"
    assert exc.context == {}
    assert isinstance(exc, Exception)


def test_base_exception_with_context():
    """Context items appear in the string form."""
    exc = exceptions.DynamicHatError("Bad step", context={"step": 12, "loss": "nan"})
    assert str(exc) == "Bad step (step=12, loss=nan)"


def test_to_dict_is_json_ready():
    """to_dict names the class and converts context values to plain JSON types."""
    exc = exceptions.DynamicHatError("x", context={"shape": (2, 3), "obj": object(), "ok": True})
    payload = exc.to_dict()
    assert payload["error"] == "DynamicHatError"
    assert payload["context"]["shape"] == [2, 3]
    assert isinstance(payload["context"]["obj"], str)
    json.dumps(payload)


@pytest.mark.parametrize("cls, parent", [
    (exceptions.InvalidSpaceError, exceptions.DesignSpaceError),
    (exceptions.InvalidConfigError, exceptions.DesignSpaceError),
    (exceptions.VocabularyError, exceptions.ModelError),
    (exceptions.EmptyInputError, exceptions.ModelError),
    (exceptions.CheckpointError, exceptions.ModelError),
    (exceptions.TrainingDivergedError, exceptions.TrainingError),
    (exceptions.MeasurementError, exceptions.LatencyError),
    (exceptions.PredictorError, exceptions.LatencyError),
    (exceptions.InfeasibleConstraintError, exceptions.SearchError),
    (exceptions.SpaceTooLargeError, exceptions.SearchError),
    (exceptions.EmptyLibraryError, exceptions.RuntimeControlError),
    (exceptions.UnknownOperatingPointError, exceptions.RuntimeControlError),
    (exceptions.ArtifactLoadError, exceptions.ArtifactError),
    (exceptions.ArtifactSaveError, exceptions.ArtifactError),
    (exceptions.InvalidSettingError, exceptions.ConfigurationError),
])
def test_hierarchy(cls, parent):
    """Every concrete error sits under its family and the package base."""
    assert issubclass(cls, parent)
    assert issubclass(cls, exceptions.DynamicHatError)


def test_training_diverged_context():
    """TrainingDivergedError records the step, config hash and loss."""
    exc = exceptions.TrainingDivergedError("Non-finite loss", step=7, config_hash="abc123", loss=float("inf"))
    assert exc.context == {"step": 7, "config_hash": "abc123", "loss": float("inf")}


def test_optional_context_items_dropped():
    """Unset keyword context values are left out."""
    exc = exceptions.CheckpointError("Truncated bank")
    assert exc.context == {}
    assert str(exc) == "Truncated bank"


def test_invalid_config_carries_violations():
    """The violation list is kept on the exception, its size in the context."""
    exc = exceptions.InvalidConfigError("Invalid config", ["a", "b"])
    assert exc.violations == ["a", "b"]
    assert exc.context == {"violation_count": 2}


def test_infeasible_constraint_context():
    """InfeasibleConstraintError names the constraint."""
    exc = exceptions.InfeasibleConstraintError("No config fits", constraint_ms=300.0)
    assert "constraint_ms=300.0" in str(exc)


def test_exception_can_be_raised_and_caught_by_base():
    """Catching DynamicHatError catches every subclass."""
    with pytest.raises(exceptions.DynamicHatError):
        raise exceptions.SpaceTooLargeError("Too many configs", cardinality=10**9, limit=10**6)
