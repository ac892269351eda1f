"""Service configuration: JSON file, environment overrides, code defaults.

Precedence, highest first: explicit overrides (CLI flags), PADDYBOT_*
environment variables, the config file, then built-in defaults.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from ..detector.backends import (
    BACKEND_KINDS,
    BackendConfig,
    fixture_config,
    remote_config,
    synthetic_config,
)


class ConfigError(ValueError):
    pass


# First line renders once per detected class; the rest renders once per reply.
DEFAULT_REPLY_TEMPLATE = (
    "Detected: {class} ({confidence})\n"
    "Job {job_ref}. Reply /confirm {job_ref} or /correct {job_ref}"
    " <class or none> to verify."
)


@dataclass(frozen=True)
class GatewayConfig:
    """Everything the chat gateway needs to run.

    Attributes:
        channel_secret: shared secret for webhook signature checks.
        channel_token: bearer token sent on outbound platform calls.
        platform_base_url: messaging platform API root (content fetch, replies).
        public_base_url: externally reachable root of this service, used to
            build image URLs embedded in replies.
        data_dir: where raw and annotated images and the database live.
        store_path: SQLite database path; defaults under data_dir.
        backend_kind: one of mock_fixture, mock_synthetic, remote.
        backend_endpoint: detector service root for the remote kind.
        fixture_path: canned-detections JSON for the fixture kind.
        reply_threshold: minimum confidence for a detection to be reported.
        reply_template: diagnosis text layout; the first line repeats per
            class with {class} and {confidence}, later lines render once
            with {job_ref}.
        verbose_replies: when true, images with nothing to report get a
            short text reply instead of silence. Debugging aid.
        workers: inference worker thread count.
        queue_limit: pending-job cap; beyond it new jobs fail fast.
        specialists: user ids allowed to issue verdict commands.
        admins: user ids with specialist powers plus administrative ones.
        request_timeout_s: timeout for platform and detector HTTP calls.
    """

    channel_secret: str = ""
    channel_token: str = ""
    platform_base_url: str = "http://localhost:9000"
    public_base_url: str = "http://localhost:8000"
    data_dir: Path = Path("./data")
    store_path: Path | None = None
    backend_kind: str = "mock_synthetic"
    backend_endpoint: str | None = None
    fixture_path: Path | None = None
    reply_threshold: float = 0.25
    reply_template: str = DEFAULT_REPLY_TEMPLATE
    verbose_replies: bool = False
    workers: int = 2
    queue_limit: int = 64
    specialists: tuple[str, ...] = ()
    admins: tuple[str, ...] = ()
    request_timeout_s: float = 10.0

    def __post_init__(self) -> None:
        if self.backend_kind not in BACKEND_KINDS:
            raise ConfigError(
                f"backend_kind must be one of {BACKEND_KINDS}, got {self.backend_kind!r}"
            )
        if not 0.0 <= self.reply_threshold <= 1.0:
            raise ConfigError("reply_threshold must be within [0, 1]")
        if not self.reply_template.strip():
            raise ConfigError("reply_template must not be empty")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.queue_limit < 1:
            raise ConfigError("queue_limit must be at least 1")

    @property
    def database_path(self) -> Path:
        return self.store_path if self.store_path else self.data_dir / "paddybot.db"

    def backend_config(self) -> BackendConfig:
        if self.backend_kind == "remote":
            if not self.backend_endpoint:
                raise ConfigError("remote backend requires backend_endpoint")
            return remote_config(self.backend_endpoint)
        if self.backend_kind == "mock_fixture":
            if not self.fixture_path:
                raise ConfigError("fixture backend requires fixture_path")
            return fixture_config(self.fixture_path)
        return synthetic_config()


_PATH_FIELDS = {"data_dir", "store_path", "fixture_path"}
_INT_FIELDS = {"workers", "queue_limit"}
_FLOAT_FIELDS = {"reply_threshold", "request_timeout_s"}
_TUPLE_FIELDS = {"specialists", "admins"}
_BOOL_FIELDS = {"verbose_replies"}

ENV_PREFIX = "PADDYBOT_"


def _coerce(name: str, value: object) -> object:
    if value is None:
        return None
    if name in _PATH_FIELDS:
        return Path(str(value))
    if name in _INT_FIELDS:
        return int(value)
    if name in _FLOAT_FIELDS:
        return float(value)
    if name in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name} must be a boolean, got {value!r}")
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return tuple(str(item) for item in value)
    return str(value)


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> GatewayConfig:
    """Build the effective configuration from file, environment, overrides."""
    env = os.environ if env is None else env
    known = {f.name for f in fields(GatewayConfig)}
    values: dict[str, object] = {}

    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            values[key] = _coerce(key, value)

    for name in known:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = _coerce(name, env[env_key])

    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config override {key!r}")
        if value is not None:
            values[key] = _coerce(key, value)

    try:
        return GatewayConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def with_updates(config: GatewayConfig, **changes: object) -> GatewayConfig:
    coerced = {name: _coerce(name, value) for name, value in changes.items()}
    return replace(config, **coerced)
