"""
Tests for the centralized logging configuration system.
"""

import logging

import pytest

import dynamic_hat.app_core.logging_config as lc
from dynamic_hat.app_core.logging_config import (
    configure_logging,
    get_logger,
    is_debug_enabled,
    set_log_level,
)


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger(lc.ROOT_LOGGER_NAME)
    level, handlers = root.level, list(root.handlers)
    yield
    root.setLevel(level)
    root.handlers[:] = handlers
    lc._logging_configured = True


def test_get_logger_returns_namespaced_logger():
    """Names outside the package are prefixed with dynamic_hat."""
    logger = get_logger("test_module")
    assert isinstance(logger, logging.Logger)
    assert logger.name == "dynamic_hat.test_module"


def test_get_logger_keeps_package_names():
    """Module names already under dynamic_hat are kept."""
    assert get_logger("dynamic_hat.search").name == "dynamic_hat.search"


def test_configure_logging_sets_level():
    """configure_logging applies the requested level."""
    lc._logging_configured = False
    configure_logging(level=logging.WARNING, console_output=False)
    assert get_logger("test_module").getEffectiveLevel() == logging.WARNING


def test_configure_logging_from_environment(monkeypatch):
    """DHAT_LOG_LEVEL selects the level when none is passed."""
    lc._logging_configured = False
    monkeypatch.setenv("DHAT_LOG_LEVEL", "DEBUG")
    configure_logging(console_output=False)
    assert get_logger("test_module").getEffectiveLevel() == logging.DEBUG
    assert is_debug_enabled()


def test_unknown_environment_level_falls_back(monkeypatch):
    """An unknown DHAT_LOG_LEVEL uses the default level."""
    lc._logging_configured = False
    monkeypatch.setenv("DHAT_LOG_LEVEL", "CHATTY")
    configure_logging(console_output=False)
    assert logging.getLogger(lc.ROOT_LOGGER_NAME).level == lc.DEFAULT_LOG_LEVEL


def test_second_configure_call_ignored():
    """Only the first configure_logging call takes effect."""
    lc._logging_configured = False
    configure_logging(level=logging.ERROR, console_output=False)
    configure_logging(level=logging.DEBUG, console_output=False)
    assert logging.getLogger(lc.ROOT_LOGGER_NAME).level == logging.ERROR


def test_set_log_level_changes_level():
    """set_log_level changes the level at runtime."""
    lc._logging_configured = False
    configure_logging(level=logging.INFO, console_output=False)
    set_log_level(logging.DEBUG)
    assert get_logger("test_module").isEnabledFor(logging.DEBUG)


def test_log_file_written(tmp_path):
    """A log file receives records."""
    lc._logging_configured = False
    log_file = tmp_path / "logs" / "dhat.log"
    configure_logging(level=logging.INFO, log_file=log_file, console_output=False)
    get_logger("test_module").info("search finished")
    for handler in logging.getLogger(lc.ROOT_LOGGER_NAME).handlers:
        handler.flush()
    assert "search finished" in log_file.read_text(encoding="utf-8")


def test_console_handler_writes_to_stderr(capsys):
    """Console output goes to stderr and leaves stdout clean."""
    lc._logging_configured = False
    configure_logging(level=logging.INFO)
    get_logger("test_module").warning("constraint flagged")
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "constraint flagged" in captured.err
