"""
Centralized pipeline settings.

One INI file (default ``dhat.ini``) holds the defaults for every pipeline
stage; each section maps onto the settings dataclass of the module that uses
it:

    [corpus]   -> dynamic_hat.corpus.CorpusSettings
    [train]    -> dynamic_hat.training.TrainSettings
    [latency]  -> dynamic_hat.latency.LatencySettings
    [search]   -> dynamic_hat.search.SearchSettings
    [meta]     version

Any key can be overridden from the environment as DHAT_<SECTION>_<KEY>
(or DHAT_<SECTION>__<KEY>). Command-line flags override both.
"""

import configparser
import dataclasses
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type

from dynamic_hat.app_core.logging_config import get_logger
from dynamic_hat.corpus import CorpusSettings
from dynamic_hat.exceptions import ConfigurationError, InvalidSettingError
from dynamic_hat.latency import LatencySettings
from dynamic_hat.search import SearchSettings
from dynamic_hat.training import TrainSettings

logger = get_logger(__name__)

# Environment variable prefix
ENV_PREFIX = "DHAT_"

CONFIG_VERSION = "1"
DEFAULT_CONFIG_PATH = "dhat.ini"

_TRUE = ("true", "1", "yes", "on")
_FALSE = ("false", "0", "no", "off")


@dataclass
class PipelineSettings:
    """Complete pipeline settings."""
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    latency: LatencySettings = field(default_factory=LatencySettings)
    search: SearchSettings = field(default_factory=SearchSettings)


SECTIONS: Dict[str, Type] = {
    "corpus": CorpusSettings,
    "train": TrainSettings,
    "latency": LatencySettings,
    "search": SearchSettings,
}


def _coerce(section: str, key: str, raw: str, default: Any) -> Any:
    """Convert an INI/env string to the type of the dataclass default."""
    text = raw.strip().strip('"\'')
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as e:
        raise InvalidSettingError(f"{section}.{key}: {e}", config_key=f"{section}.{key}") from e


class ConfigManager:
    """
    Reads and writes pipeline settings.

    Usage:
        config = ConfigManager("dhat.ini")
        settings = config.load()
        settings.train.steps = 500
        config.save(settings)
    """

    def __init__(self, config_path: str = DEFAULT_CONFIG_PATH, use_env_vars: bool = True):
        self.config_path = Path(config_path)
        self.use_env_vars = use_env_vars

    def _get_env_var(self, *keys: str) -> Optional[str]:
        """
        Get a value from the environment.

        Tries DHAT_TRAIN_STEPS, then DHAT_TRAIN__STEPS.
        """
        if not self.use_env_vars:
            return None

        env_key = ENV_PREFIX + "_".join(k.upper() for k in keys)
        value = os.getenv(env_key)
        if value is not None:
            logger.debug(f"Using environment variable: {env_key}")
            return value

        env_key = ENV_PREFIX + "__".join(k.upper() for k in keys)
        value = os.getenv(env_key)
        if value is not None:
            logger.debug(f"Using environment variable: {env_key}")
            return value

        return None

    def _read_parser(self) -> configparser.ConfigParser:
        parser = configparser.ConfigParser()
        if not self.config_path.exists():
            logger.debug(f"Config file not found, using defaults: {self.config_path}")
            return parser
        try:
            parser.read(self.config_path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigurationError(f"Failed to parse config file: {e}",
                                     {"file_path": str(self.config_path)}) from e
        return parser

    def _load_section(self, parser: configparser.ConfigParser, section: str, cls: Type) -> Any:
        defaults = cls()
        values: Dict[str, Any] = {}
        for f in dataclasses.fields(cls):
            default = getattr(defaults, f.name)
            value = default
            if parser.has_option(section, f.name):
                value = _coerce(section, f.name, parser.get(section, f.name), default)
            env_value = self._get_env_var(section, f.name)
            if env_value is not None:
                value = _coerce(section, f.name, env_value, default)
            values[f.name] = value
        return cls(**values)

    def load(self) -> PipelineSettings:
        """
        Load all settings: dataclass defaults, then the INI file, then the environment.

        Raises:
            ConfigurationError: the file cannot be parsed
            InvalidSettingError: a value has the wrong type
        """
        parser = self._read_parser()
        return PipelineSettings(**{name: self._load_section(parser, name, cls) for name, cls in SECTIONS.items()})

    def save(self, settings: PipelineSettings) -> None:
        """Write every section (existing unrelated sections are preserved)."""
        parser = self._read_parser()
        if not parser.has_section("meta"):
            parser.add_section("meta")
        parser.set("meta", "version", CONFIG_VERSION)
        for name in SECTIONS:
            if not parser.has_section(name):
                parser.add_section(name)
            for key, value in asdict(getattr(settings, name)).items():
                parser.set(name, key, str(value).lower() if isinstance(value, bool) else str(value))
        try:
            self.config_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_path, "w", encoding="utf-8") as f:
                parser.write(f)
            logger.debug(f"Saved configuration to {self.config_path}")
        except OSError as e:
            raise ConfigurationError(f"Failed to write config file: {e}",
                                     {"file_path": str(self.config_path)}) from e

    def validate(self) -> List[Tuple[str, str]]:
        """
        Validate configuration and return a list of issues.

        Returns:
            List of (severity, message) tuples where severity is 'ERROR' or 'WARNING'.
            Empty list if all valid.
        """
        issues: List[Tuple[str, str]] = []
        try:
            parser = self._read_parser()
            settings = self.load()
        except (ConfigurationError, InvalidSettingError) as e:
            return [("ERROR", e.message)]

        version = parser.get("meta", "version", fallback=None)
        if version is None:
            issues.append(("WARNING", "Meta: no version recorded (expected version = 1)"))
        elif version != CONFIG_VERSION:
            issues.append(("WARNING", f"Meta: unknown config version {version!r} (expected {CONFIG_VERSION})"))

        for section in parser.sections():
            if section == "meta":
                continue
            if section not in SECTIONS:
                issues.append(("WARNING", f"Unknown section [{section}]"))
                continue
            known = {f.name for f in dataclasses.fields(SECTIONS[section])}
            for key in parser.options(section):
                if key not in known:
                    issues.append(("WARNING", f"{section.capitalize()}: unknown key '{key}'"))

        for name in SECTIONS:
            for message in getattr(settings, name).validate():
                issues.append(("ERROR", f"{name.capitalize()}: {message}"))

        if settings.latency.repeats != 300:
            issues.append(("WARNING", f"Latency: repeats={settings.latency.repeats} differs from the 300-run protocol"))
        if settings.latency.hardware == "real" and settings.latency.warmup == 0:
            issues.append(("WARNING", "Latency: real-hardware timing without warm-up runs is noisy"))
        if settings.search.max_workers > 1 and settings.latency.hardware == "real":
            issues.append(("WARNING", "Search: concurrent fitness evaluation while timing real hardware"))
        return issues

    def validate_and_report(self) -> bool:
        """
        Validate configuration and log the issues.

        Returns:
            True if validation passed (no errors), False if errors found
        """
        issues = self.validate()

        if not issues:
            logger.info("Configuration validation passed")
            return True

        has_errors = False
        for severity, message in issues:
            if severity == "ERROR":
                logger.error(message)
                has_errors = True
            else:
                logger.warning(message)

        return not has_errors

    def export_dict(self) -> Dict[str, Any]:
        settings = self.load()
        return {name: asdict(getattr(settings, name)) for name in SECTIONS}

    def get_supported_env_vars(self) -> Dict[str, str]:
        """Map every supported environment variable to its default value."""
        env = {}
        for name, cls in SECTIONS.items():
            defaults = cls()
            for f in dataclasses.fields(cls):
                env[f"{ENV_PREFIX}{name.upper()}_{f.name.upper()}"] = str(getattr(defaults, f.name))
        return env
