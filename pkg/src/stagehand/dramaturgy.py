"""Turn open-ended framing text into a structured behavioural profile.

The provider extracts five features (what the environment wants, its tone,
its spatial metaphor, the leading actuation channel, and how reactions
unfold). Anything the framing does not support becomes a clarification
question instead of an invented value; the engine can run with an
unclarified profile, so at most three questions are kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .core import Modality
from .prompts import clarify_prompt, extraction_prompt
from .providers import LanguageModelProvider, parse_json_reply

UNSPECIFIED = "(unspecified)"
MAX_QUESTIONS = 3

SCHEMA_FIELDS = ("intention", "affect", "metaphor", "primary_modality", "reaction_pattern")

_FIELD_QUESTIONS = {
    "intention": "What should the environment be trying to do?",
    "affect": "What affective tone should the environment hold?",
    "metaphor": "Is there a spatial metaphor guiding the behaviour?",
    "primary_modality": "Which modality should lead the response: light, sound, or motion?",
    "reaction_pattern": "How should the response unfold when its trigger appears?",
}

_FORMAT_REMINDER = (
    "Format reminder: reply with exactly one JSON object using the keys "
    "intention, affect, metaphor, primary_modality, reaction_pattern, "
    "questions - nothing else."
)


class ExtractionError(ValueError):
    """Provider reply stayed unparseable after the format-reminder retry."""

    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


@dataclass(frozen=True)
class DramaturgicalProfile:
    intention: str
    affect: str
    metaphor: str
    primary_modality: Modality
    reaction_pattern: str
    source_text: str
    created_at: int = 0

    def __post_init__(self) -> None:
        for name in ("intention", "affect", "reaction_pattern"):
            if not getattr(self, name).strip():
                raise ValueError(f"profile field '{name}' must be non-empty")


@dataclass(frozen=True)
class ClarificationQuestion:
    id: str
    text: str
    field: str  # the profile field the answer merges into
    options: tuple[str, ...] | None = None


def profile_to_dict(profile: DramaturgicalProfile) -> dict:
    return {
        "intention": profile.intention,
        "affect": profile.affect,
        "metaphor": profile.metaphor,
        "primary_modality": profile.primary_modality.value,
        "reaction_pattern": profile.reaction_pattern,
        "source_text": profile.source_text,
        "created_at": profile.created_at,
    }


def profile_from_dict(obj: dict) -> DramaturgicalProfile:
    return DramaturgicalProfile(
        intention=obj["intention"],
        affect=obj["affect"],
        metaphor=obj["metaphor"],
        primary_modality=Modality(obj["primary_modality"]),
        reaction_pattern=obj["reaction_pattern"],
        source_text=obj["source_text"],
        created_at=int(obj.get("created_at", 0)),
    )


def _question_field(text: str) -> str:
    """Attach a provider-authored question to the profile field it most
    plausibly refines; expression questions land on reaction_pattern."""
    lowered = text.lower()
    if "intention" in lowered or "objective" in lowered:
        return "intention"
    if "affect" in lowered or "tone" in lowered or "mood" in lowered:
        return "affect"
    if "metaphor" in lowered:
        return "metaphor"
    if "modality" in lowered or "channel" in lowered:
        return "primary_modality"
    return "reaction_pattern"


def _complete_object(
    provider: LanguageModelProvider, system: str, user: str, contract: str
) -> dict:
    raw = provider.complete(system, user, contract)
    try:
        return parse_json_reply(raw)
    except ValueError:
        raw = provider.complete(system, f"{user}\n\n{_FORMAT_REMINDER}", contract)
        try:
            return parse_json_reply(raw)
        except ValueError as exc:
            raise ExtractionError(str(exc), raw_reply=raw) from exc


def interpret_framing(
    text: str, provider: LanguageModelProvider, now_ms: int = 0
) -> tuple[DramaturgicalProfile, list[ClarificationQuestion]]:
    """Extract a profile from framing text, plus any open questions.

    Transport errors propagate (retriable by the caller); a reply that stays
    out of contract after one format reminder raises ExtractionError with
    the raw reply attached.
    """
    if not text.strip():
        raise ValueError("framing text must be non-empty")
    system, user = extraction_prompt(text)
    obj = _complete_object(provider, system, user, "profile")

    questions: list[ClarificationQuestion] = []

    def take(name: str) -> str:
        value = obj.get(name)
        if isinstance(value, str) and value.strip():
            return value.strip()
        questions.append(
            ClarificationQuestion(id=name, text=_FIELD_QUESTIONS[name], field=name)
        )
        return UNSPECIFIED

    # the modality question goes first so the question cap never drops it:
    # the enum value must stay either derived or openly in question
    modality_raw = obj.get("primary_modality")
    try:
        modality = Modality(modality_raw)
    except ValueError:
        # never fabricated: light is the only fully-actuated channel, so it
        # stands in while the question is open
        modality = Modality.LIGHT
        questions.append(
            ClarificationQuestion(
                id="primary_modality",
                text=_FIELD_QUESTIONS["primary_modality"],
                field="primary_modality",
                options=tuple(m.value for m in Modality),
            )
        )

    intention = take("intention")
    affect = take("affect")
    metaphor = take("metaphor")
    reaction = take("reaction_pattern")

    seen_fields = {q.field for q in questions}
    for i, raw_q in enumerate(obj.get("questions") or []):
        if not isinstance(raw_q, str) or not raw_q.strip():
            continue
        target = _question_field(raw_q)
        if target in seen_fields:
            continue
        seen_fields.add(target)
        questions.append(ClarificationQuestion(id=f"q{i}", text=raw_q.strip(), field=target))

    profile = DramaturgicalProfile(
        intention=intention,
        affect=affect,
        metaphor=metaphor,
        primary_modality=modality,
        reaction_pattern=reaction,
        source_text=text,
        created_at=now_ms,
    )
    return profile, questions[:MAX_QUESTIONS]


def apply_clarification(
    profile: DramaturgicalProfile,
    question: ClarificationQuestion,
    answer: str,
    provider: LanguageModelProvider,
) -> DramaturgicalProfile:
    """Merge a director's answer; only the question's field changes.

    The revision record is the caller's to log (the engine appends it to the
    session log alongside the provider exchange).
    """
    if not answer.strip():
        raise ValueError("clarification answer must be non-empty")
    if question.field not in SCHEMA_FIELDS:
        raise ValueError(f"question targets unknown field '{question.field}'")
    system, user = clarify_prompt(profile, question, answer)
    obj = _complete_object(provider, system, user, "clarify")
    value = obj.get(question.field)
    if not isinstance(value, str) or not value.strip():
        raise ExtractionError(
            f"clarify reply lacks field '{question.field}'", raw_reply=json.dumps(obj)
        )
    if question.field == "primary_modality":
        try:
            return replace(profile, primary_modality=Modality(value.strip().lower()))
        except ValueError as exc:
            raise ExtractionError(
                f"'{value}' is not a modality", raw_reply=json.dumps(obj)
            ) from exc
    return replace(profile, **{question.field: value.strip()})


def render_context_section(profile: DramaturgicalProfile) -> str:
    """Render the dramaturgical block of the composed prompt (deterministic)."""
    return "\n".join(
        [
            "[DRAMATURGICAL CONTEXT]",
            profile.source_text,
            f"intention: {profile.intention}",
            f"affect: {profile.affect}",
            f"metaphor: {profile.metaphor}",
            f"primary modality: {profile.primary_modality.value}",
            f"reaction pattern: {profile.reaction_pattern}",
        ]
    )
