"""Prompt templates shipped as versioned text assets, plus their builders.

Each builder returns a ``(system, user)`` message pair. Providers that match
on keywords (the deterministic mock) look only at the user message, so every
builder keeps the distinguishing content there.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .director import CommandContext
    from .dramaturgy import ClarificationQuestion, DramaturgicalProfile


def _template(name: str) -> str:
    return (
        resources.files("stagehand")
        .joinpath(f"assets/prompts/{name}")
        .read_text(encoding="utf-8")
    )


def extraction_prompt(framing: str) -> tuple[str, str]:
    return "", _template("extract_profile.txt").replace("{FRAMING}", framing)


def clarify_prompt(
    profile: "DramaturgicalProfile", question: "ClarificationQuestion", answer: str
) -> tuple[str, str]:
    from .dramaturgy import profile_to_dict

    text = (
        _template("clarify_profile.txt")
        .replace("{PROFILE}", json.dumps(profile_to_dict(profile), indent=2))
        .replace("{QUESTION}", question.text)
        .replace("{FIELD}", question.field)
        .replace("{ANSWER}", answer)
    )
    return "", text


def command_translation_prompt(command: str, ctx: "CommandContext") -> tuple[str, str]:
    text = (
        _template("translate_command.txt")
        .replace("{ZONES}", ", ".join(z.id for z in ctx.zones) or "(none)")
        .replace("{ACTUATORS}", ", ".join(ctx.actuator_ids) or "(none)")
        .replace("{COLORS}", ", ".join(c.name for c in ctx.colors))
        .replace("{COMMAND}", command)
    )
    return "", text


def summarize_prompt(note: str) -> tuple[str, str]:
    return "", _template("summarize_note.txt").replace("{NOTE}", note)
