"""Webhook-facing chat gateway: signature checks, job queue, replies."""

from .app import create_app
from .commands import Command, CommandError, parse_command
from .config import GatewayConfig, load_config
from .lineclient import PlatformClient, PlatformError
from .service import (
    GatewayService,
    reply_text,
    summarize_classes,
    surviving_detections,
)

__all__ = [
    "Command",
    "CommandError",
    "GatewayConfig",
    "GatewayService",
    "PlatformClient",
    "PlatformError",
    "create_app",
    "load_config",
    "parse_command",
    "reply_text",
    "summarize_classes",
    "surviving_detections",
]
