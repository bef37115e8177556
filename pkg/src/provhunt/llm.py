"""Minimal client for OpenAI-compatible chat-completion endpoints.

The endpoint URL and key come from ``PROVHUNT_LLM_URL`` / ``PROVHUNT_LLM_KEY``.
Request body::

    {"model": ..., "messages": [{"role": "system"|"user", "content": ...}], "temperature": ...}

and the completion text is read from ``choices[0].message.content``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Protocol

import requests

from provhunt.errors import ProvHuntError

URL_ENV = "PROVHUNT_LLM_URL"
KEY_ENV = "PROVHUNT_LLM_KEY"


class LlmTransportError(ProvHuntError):
    """The endpoint could not be reached or returned an unusable reply."""


class Completer(Protocol):
    def complete(self, prompt: str, system: str | None = None) -> str: ...


@dataclass
class LlmClient:
    url: str
    api_key: str | None = None
    model: str = "llama3-8b"
    temperature: float = 0.2
    timeout: float = 120.0
    max_concurrency: int = 4

    @classmethod
    def from_env(cls, **kwargs) -> "LlmClient | None":
        url = os.environ.get(URL_ENV)
        if not url:
            return None
        return cls(url=url, api_key=os.environ.get(KEY_ENV) or None, **kwargs)

    @property
    def params(self) -> dict:
        return {"model": self.model, "temperature": self.temperature}

    def request_body(self, prompt: str, system: str | None = None) -> dict:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        return {"model": self.model, "messages": messages, "temperature": self.temperature}

    def complete(self, prompt: str, system: str | None = None) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(self.url, json=self.request_body(prompt, system),
                                 headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            text = resp.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmTransportError(f"LLM request to {self.url} failed: {exc}") from exc
        if not isinstance(text, str) or not text.strip():
            raise LlmTransportError("LLM returned an empty completion")
        return text.strip()
