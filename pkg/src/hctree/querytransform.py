"""Optional LLM query rewriting before embedding.

In ``identity`` mode the query passes through untouched. In ``llm_extract``
mode the query is substituted into a prompt template, sent to a
chat-completions endpoint, and the reply text (treated as opaque) replaces
the query.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass
from importlib import resources

import httpx

from hctree._http import post_json
from hctree.errors import ProviderError, TemplateError

PLACEHOLDER = "{query}"
MODES = ("identity", "llm_extract")
_FIELD = re.compile(r"\{(\w+)\}")

SHIPPED_TEMPLATES = {
    "task-oriented": "task_oriented.txt",
    "chain-of-thought": "chain_of_thought.txt",
    "query-extraction": "query_extraction.txt",
}


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    def __post_init__(self):
        count = self.body.count(PLACEHOLDER)
        if count != 1:
            raise TemplateError(f"template {self.name!r} must contain exactly one {PLACEHOLDER} "
                                f"placeholder, found {count}")

    def render(self, query: str, **extra: str) -> str:
        """Plain substitution of ``{query}`` (and any ``{name}`` in ``extra``)."""
        values = {**extra, "query": query}
        return _FIELD.sub(lambda m: values.get(m.group(1), m.group(0)), self.body)


def load_template(name: str) -> PromptTemplate:
    """Load a shipped template by name, or any UTF-8 file by path."""
    if name in SHIPPED_TEMPLATES:
        body = resources.files("hctree").joinpath("prompts", SHIPPED_TEMPLATES[name]).read_text("utf-8")
    else:
        try:
            with open(name, encoding="utf-8") as fh:
                body = fh.read()
        except OSError as exc:
            raise TemplateError(f"no shipped template or readable file named {name!r}") from exc
    return PromptTemplate(name, body)


@dataclass(frozen=True)
class TransformConfig:
    mode: str = "identity"
    template: PromptTemplate | None = None
    endpoint_url: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout: float = 60.0
    attempts: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


class ChatClient:
    """Minimal chat-completions client; returns the first choice's content."""

    def __init__(self, cfg: TransformConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep):
        headers = {}
        if cfg.api_key_env and os.environ.get(cfg.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[cfg.api_key_env]}"
        self.cfg = cfg
        self._sleep = sleep
        self._client = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)
        self.requests = 0

    def complete(self, prompt: str) -> str:
        self.requests += 1
        body = post_json(self._client, self.cfg.endpoint_url,
                         {"model": self.cfg.model, "messages": [{"role": "user", "content": prompt}]},
                         attempts=self.cfg.attempts, backoff=self.cfg.backoff, sleep=self._sleep)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {exc}") from exc
        if not isinstance(content, str):
            raise ProviderError("chat response content is not a string")
        return content

    def close(self):
        self._client.close()


def transform(query: str, cfg: TransformConfig, client: ChatClient | None = None) -> str:
    if not query:
        raise ValueError("query must be non-empty")
    if cfg.mode == "identity":
        return query
    if cfg.template is None:
        raise TemplateError("llm_extract mode needs a prompt template")
    if not cfg.endpoint_url:
        raise ProviderError("llm_extract mode needs a chat endpoint", query=query)
    prompt = cfg.template.render(query)
    own = client is None
    client = client or ChatClient(cfg)
    try:
        return client.complete(prompt)
    except ProviderError as exc:
        exc.query = query
        raise
    finally:
        if own:
            client.close()
