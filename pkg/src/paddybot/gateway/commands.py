"""Chat command grammar for specialist verdicts.

Two commands, always addressed to a job by its short reference:

    /confirm J12          the reported classes were right
    /correct J12 blast    the image shows blast instead
    /correct J12 none     the image shows no target disease at all

Text that does not start with a known command word is not a command and
returns None; a command word with a malformed remainder raises CommandError
with a usage hint suitable for a chat reply.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

USAGE = "Usage: /confirm J<number> or /correct J<number> <class or none>"

_REF = re.compile(r"^[Jj](\d+)$")


class CommandError(ValueError):
    pass


@dataclass(frozen=True)
class Command:
    """A parsed verdict command.

    kind is confirm, wrong_class, or not_disease; ref is the numeric job
    reference; corrected_class is set only for wrong_class.
    """

    kind: str
    ref: int
    corrected_class: str | None = None


def _parse_ref(token: str) -> int:
    match = _REF.match(token)
    if match is None:
        raise CommandError(f"{token!r} is not a job reference. {USAGE}")
    return int(match.group(1))


def parse_command(text: str) -> Command | None:
    tokens = text.strip().split()
    if not tokens or not tokens[0].startswith("/"):
        return None
    word = tokens[0].lower()
    if word == "/confirm":
        if len(tokens) != 2:
            raise CommandError(USAGE)
        return Command(kind="confirm", ref=_parse_ref(tokens[1]))
    if word == "/correct":
        if len(tokens) != 3:
            raise CommandError(USAGE)
        ref = _parse_ref(tokens[1])
        label = tokens[2].strip().lower()
        if label == "none":
            return Command(kind="not_disease", ref=ref)
        return Command(kind="wrong_class", ref=ref, corrected_class=label)
    return None
