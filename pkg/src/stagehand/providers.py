"""Language-model providers: remote chat endpoint, deterministic mock, script.

Every provider exposes ``complete(system, user, contract) -> reply text``.
The ``contract`` names the reply shape the caller will parse ("profile",
"clarify", "command", "decision", "summarize"); the remote transport uses it
to append a format hint, the mock to pick its synthesis path.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import requests


class ProviderError(Exception):
    pass


class ProviderTransportError(ProviderError):
    """The provider could not be reached or answered abnormally; retriable."""


class ScriptExhaustedError(ProviderError):
    """The scripted provider ran out of replies."""


class LanguageModelProvider(Protocol):
    def complete(self, system: str, user: str, contract: str) -> str: ...


_CONTRACT_HINTS = {
    "decision": (
        'Reply with exactly one JSON object: {"actions": [{"target": str, '
        '"light": {"on": bool, "bri": int, "hue": int, "sat": int, '
        '"transition_ms": int}} | {"target": str, "relay": bool}], '
        '"reasoning": str} and nothing else.'
    ),
}


@dataclass
class RemoteProvider:
    """Chat-completion HTTP endpoint (OpenAI-style wire shape).

    Temperature defaults to 0 so real-provider runs are as repeatable as the
    vendor allows.
    """

    base_url: str
    model: str
    api_key_env: str = ""
    temperature: float = 0.0
    timeout_s: float = 30.0

    def complete(self, system: str, user: str, contract: str) -> str:
        hint = _CONTRACT_HINTS.get(contract)
        if hint:
            user = f"{user}\n\n{hint}"
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            response = requests.post(
                self.base_url.rstrip("/") + "/chat/completions",
                json={
                    "model": self.model,
                    "temperature": self.temperature,
                    "messages": messages,
                },
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise ProviderTransportError(f"provider unreachable: {exc}") from exc
        if response.status_code != 200:
            raise ProviderTransportError(
                f"provider returned HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderTransportError(f"malformed completion payload: {exc}") from exc


@dataclass(frozen=True)
class MockEntry:
    match: tuple[str, ...]
    reply: str  # reply text, already serialized


@dataclass
class MockProvider:
    """Keyword table lookup against the user message; first match wins.

    The table is a JSON list of ``{"match": [keywords], "reply": object|str}``
    entries. The final entry must have an empty match list (the default).
    An entry matches when every keyword occurs case-insensitively in the user
    message. Clarification prompts bypass the table: the answer is copied
    verbatim into the targeted field, which keeps rehearsal dialogue exact.
    """

    entries: Sequence[MockEntry]

    def __post_init__(self) -> None:
        if not self.entries or self.entries[-1].match:
            raise ValueError("mock table must end with a default entry (empty match)")

    @classmethod
    def from_file(cls, path: str) -> "MockProvider":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        entries = [
            MockEntry(
                match=tuple(e.get("match", [])),
                reply=e["reply"] if isinstance(e["reply"], str) else json.dumps(e["reply"]),
            )
            for e in doc
        ]
        return cls(entries)

    def complete(self, system: str, user: str, contract: str) -> str:
        if contract == "clarify":
            return self._clarify_reply(user)
        haystack = user.lower()
        for entry in self.entries:
            if all(keyword.lower() in haystack for keyword in entry.match):
                return entry.reply
        raise AssertionError("unreachable: default entry matches everything")

    @staticmethod
    def _clarify_reply(user: str) -> str:
        field_m = re.search(r"^FIELD: (.+)$", user, re.MULTILINE)
        answer_m = re.search(r"^ANSWER: (.+)$", user, re.MULTILINE)
        if not (field_m and answer_m):
            raise ProviderTransportError("clarify prompt missing FIELD/ANSWER lines")
        return json.dumps({field_m.group(1).strip(): answer_m.group(1).strip()})


@dataclass
class ScriptedProvider:
    """Replays a fixed reply sequence in load order; errors when exhausted."""

    replies: list[str]
    cursor: int = 0
    calls: list[tuple[str, str, str]] = field(default_factory=list)

    @classmethod
    def from_file(cls, path: str) -> "ScriptedProvider":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls([r if isinstance(r, str) else json.dumps(r) for r in doc])

    def complete(self, system: str, user: str, contract: str) -> str:
        self.calls.append((system, user, contract))
        if self.cursor >= len(self.replies):
            raise ScriptExhaustedError(
                f"scripted provider exhausted after {len(self.replies)} replies"
            )
        reply = self.replies[self.cursor]
        self.cursor += 1
        return reply


def parse_json_reply(raw: str) -> dict:
    """Parse a reply that must be a single JSON object."""
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValueError(f"reply is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValueError("reply must be a single JSON object")
    return obj
