"""Completion backends behind one tiny contract: complete(prompt) -> text.

Three implementations:

- ScriptedBackend: an ordered rule table (pattern -> JSON reply) that is a pure
  function of the prompt text. Deterministic; drives all tests and scenarios.
- RemoteBackend: a chat-completions-compatible HTTP endpoint, configured via
  LLM_BASE_URL / LLM_API_KEY / LLM_MODEL.
- FaultInjectingBackend: wraps another backend and injects extra slot fills
  into intent-detection replies, to exercise the grounding filter.
"""

from __future__ import annotations

import copy
import json
import os
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol

import httpx

from .errors import BackendFailure, BackendUnavailable, InvalidConfig

DEFAULT_REMOTE_TIMEOUT = 30.0


class CompletionBackend(Protocol):
    """Anything that can turn a prompt into a completion."""

    identity: str
    deterministic: bool

    def complete(self, prompt: str) -> str: ...


@dataclass
class ScriptedRule:
    """One entry of the rule table.

    A rule fires when the prompt carries the rule's template tag, contains all
    ``contains`` phrases (case-insensitive), none of ``not_contains``, and all
    ``regex`` patterns match. Named groups captured by the patterns substitute
    into ``{name}`` markers anywhere in the reply (keys and values alike).
    """

    reply: Any
    template: str | None = None
    contains: list[str] = field(default_factory=list)
    not_contains: list[str] = field(default_factory=list)
    regex: list[str] = field(default_factory=list)
    _compiled: list[re.Pattern] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        try:
            self._compiled = [re.compile(p) for p in self.regex]
        except re.error as exc:
            raise InvalidConfig(f"bad rule regex: {exc}") from exc

    @classmethod
    def from_obj(cls, obj: object) -> "ScriptedRule":
        if not isinstance(obj, dict) or "reply" not in obj:
            raise InvalidConfig("each rule must be an object with a 'reply' field")
        unknown = set(obj) - {"reply", "template", "contains", "not_contains", "regex"}
        if unknown:
            raise InvalidConfig(f"unknown rule fields: {sorted(unknown)}")
        return cls(
            reply=obj["reply"],
            template=obj.get("template"),
            contains=[str(c) for c in obj.get("contains", [])],
            not_contains=[str(c) for c in obj.get("not_contains", [])],
            regex=[str(r) for r in obj.get("regex", [])],
        )

    def match(self, prompt: str) -> dict[str, str] | None:
        """Captured groups when the rule fires, else None."""
        if self.template is not None and f"TASK: {self.template}" not in prompt:
            return None
        folded = prompt.casefold()
        if any(c.casefold() not in folded for c in self.contains):
            return None
        if any(c.casefold() in folded for c in self.not_contains):
            return None
        groups: dict[str, str] = {}
        for pattern in self._compiled:
            found = pattern.search(prompt)
            if found is None:
                return None
            groups.update({k: v for k, v in found.groupdict().items() if v is not None})
        return groups

    def render_reply(self, groups: Mapping[str, str]) -> str:
        def substitute(value: Any) -> Any:
            if isinstance(value, str):
                for key, captured in groups.items():
                    value = value.replace("{" + key + "}", captured)
                return value
            if isinstance(value, list):
                return [substitute(v) for v in value]
            if isinstance(value, dict):
                return {substitute(k): substitute(v) for k, v in value.items()}
            return value

        return json.dumps(substitute(copy.deepcopy(self.reply)), ensure_ascii=False)


class ScriptedBackend:
    """Deterministic backend: first matching rule wins; no rule yields ''."""

    deterministic = True

    def __init__(self, rules: list[ScriptedRule], identity: str = "scripted") -> None:
        self.rules = list(rules)
        self.identity = identity

    @classmethod
    def from_obj(cls, obj: object, identity: str = "scripted") -> "ScriptedBackend":
        if isinstance(obj, dict):
            obj = obj.get("rules")
        if not isinstance(obj, list):
            raise InvalidConfig("rules file must hold a JSON array (or {'rules': [...]})")
        return cls([ScriptedRule.from_obj(entry) for entry in obj], identity=identity)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedBackend":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                obj = json.load(handle)
        except OSError as exc:
            raise InvalidConfig(f"cannot read rules file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"rules file {path} is not valid JSON: {exc}") from exc
        return cls.from_obj(obj, identity=f"scripted:{os.fspath(path)}")

    @classmethod
    def default(cls) -> "ScriptedBackend":
        from .resources import default_rules_text

        return cls.from_obj(json.loads(default_rules_text()), identity="scripted:default")

    def complete(self, prompt: str) -> str:
        for rule in self.rules:
            groups = rule.match(prompt)
            if groups is not None:
                return rule.render_reply(groups)
        return ""


class RemoteBackend:
    """Chat-completions-compatible HTTP backend."""

    deterministic = False

    def __init__(self, base_url: str, api_key: str = "", model: str = "gpt-4",
                 timeout: float = DEFAULT_REMOTE_TIMEOUT) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.identity = f"remote:{model}"
        self._client = httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "RemoteBackend":
        env = os.environ if env is None else env
        base_url = env.get("LLM_BASE_URL", "")
        if not base_url:
            raise BackendUnavailable("LLM_BASE_URL is not set")
        return cls(
            base_url=base_url,
            api_key=env.get("LLM_API_KEY", ""),
            model=env.get("LLM_MODEL", "gpt-4"),
        )

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        try:
            response = self._client.post(
                f"{self.base_url}/chat/completions", json=body, headers=headers
            )
        except httpx.HTTPError as exc:
            raise BackendFailure(f"completion request failed: {exc}") from exc
        if response.status_code != 200:
            raise BackendFailure(
                f"completion endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendFailure(f"unexpected completion response shape: {exc}") from exc
        if not isinstance(content, str):
            raise BackendFailure("completion content is not text")
        return content

    def close(self) -> None:
        self._client.close()


class FaultInjectingBackend:
    """Wrapper that corrupts intent-detection replies with extra slot fills.

    Used to simulate a backend hallucinating slot values that were never said,
    so the grounding filter can be exercised end to end.
    """

    def __init__(self, inner: CompletionBackend, extra_fills: Mapping[str, str]) -> None:
        self.inner = inner
        self.extra_fills = dict(extra_fills)
        self.identity = f"fault({inner.identity})"
        self.deterministic = inner.deterministic

    def complete(self, prompt: str) -> str:
        completion = self.inner.complete(prompt)
        if "TASK: DetectIntent" not in prompt:
            return completion
        try:
            obj = json.loads(completion)
        except json.JSONDecodeError:
            return completion
        if isinstance(obj, dict) and obj.get("intent") not in (None, "", "unknown"):
            slots = obj.get("slots")
            if not isinstance(slots, dict):
                slots = {}
            slots.update(self.extra_fills)
            obj["slots"] = slots
            return json.dumps(obj, ensure_ascii=False)
        return completion
