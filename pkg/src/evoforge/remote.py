"""Minimal client for OpenAI-compatible chat-completion servers."""

from __future__ import annotations

import logging
import os
import time

import httpx

from .errors import BackendUnavailable

log = logging.getLogger(__name__)

ENV_URL = "EVOFORGE_BACKEND_URL"


class ChatClient:
    """POSTs ``{model, messages, temperature}`` to ``<base_url>/chat/completions``.

    Transport errors, 5xx/429 replies and unparseable bodies are retried with
    exponential backoff; after ``retries`` attempts ``BackendUnavailable`` is
    raised. Temperature defaults to 0 so replies are as reproducible as the
    server allows. The client is safe to share between threads.
    """

    def __init__(self, base_url=None, model="default", api_key=None, timeout=60.0,
                 retries=3, backoff=0.5, temperature=0.0, transport=None):
        base_url = os.environ.get(ENV_URL) or base_url
        if not base_url:
            raise BackendUnavailable(f"no backend URL configured (set {ENV_URL} or backend_url)")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.retries = max(1, retries)
        self.backoff = backoff
        self.temperature = temperature
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def chat(self, messages) -> str:
        payload = {"model": self.model, "messages": list(messages), "temperature": self.temperature}
        last = None
        for attempt in range(self.retries):
            try:
                resp = self._http.post(f"{self.base_url}/chat/completions", json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise BackendUnavailable(f"backend rejected request: HTTP {resp.status_code}")
                else:
                    return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
                last = f"{type(exc).__name__}: {exc}"
            log.warning("chat request failed (attempt %d/%d): %s", attempt + 1, self.retries, last)
            if attempt + 1 < self.retries and self.backoff:
                time.sleep(self.backoff * 2 ** attempt)
        raise BackendUnavailable(f"backend unavailable after {self.retries} attempts: {last}")

    def close(self):
        self._http.close()
