import logging
import os
from typing import Any

from dynsnake.errors import ConfigError

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _getenv(name: str, default: Any = None) -> Any:
    value = os.environ.get(name)
    if value is None or value == "":
        return default
    return value


def load_settings(overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """
    Load runtime settings from environment variables.

    Env vars:
      - SNAKE_OUT_DIR
      - SNAKE_LOG_LEVEL
      - SNAKE_SEED (reserved; read but not used by the CLI)
    """
    settings: dict[str, Any] = {
        "out_dir": _getenv("SNAKE_OUT_DIR", "./out"),
        "log_level": str(_getenv("SNAKE_LOG_LEVEL", "WARNING")).upper(),
        "seed": _getenv("SNAKE_SEED", None),
    }
    if overrides:
        settings.update({k: v for k, v in overrides.items() if v not in (None, "")})
    if settings["seed"] is not None:
        try:
            settings["seed"] = int(settings["seed"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"SNAKE_SEED must be an integer, got {settings['seed']!r}", key="seed") from exc
    return settings


def require_settings(settings: dict[str, Any], required_keys: list[str], source_hint: str) -> None:
    missing = [k for k in required_keys if not settings.get(k)]
    if not missing:
        return

    missing_str = ", ".join(missing)
    raise ConfigError(
        f"Missing required configuration values: {missing_str}. "
        f"Set them via environment variables ({source_hint}) or CLI flags.",
        key=missing[0],
    )


def configure_logging(level: str) -> None:
    """Configure root logging once for the command-line entry point."""
    name = str(level).upper()
    if name not in LOG_LEVELS:
        raise ConfigError(f"unknown log level {level!r}; expected one of {', '.join(LOG_LEVELS)}", key="log_level")
    logging.basicConfig(level=getattr(logging, name), format="%(levelname)s %(name)s: %(message)s")
