"""Chat-completion client, answer generation and multi-aspect query generation.

The wire contract is the common chat-completion one: POST
``{"model", "messages": [{"role", "content"}], <sampling params>}`` and read
``choices[0].message.content`` from the reply. Completions are cached on disk
keyed by template, prompt, model and sampling parameters.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import httpx

from .conversation import Conversation, context_at, render_context, render_ptkb, turn_key
from .prompts import render_prompt

log = logging.getLogger(__name__)

QUERY_VARIANTS = ("mq4cs", "mq4cs_ans", "qr", "aq")
MAX_PHI = 5

# "1." "2)" "-" "•" "*" and the same after indentation
_MARKER_RE = re.compile(r"^\s*(?:\d+\s*[.)]|[-•*])\s*")


class LlmError(RuntimeError):
    pass


@dataclass
class LlmConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-4"
    temperature: float | None = None
    top_p: float | None = None
    top_k: int | None = None
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: float = 1.0
    cache_dir: str | None = None
    fewshot: bool = False
    context_style: str | None = None
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.context_style not in (None, "full", "last_response_only"):
            raise ValueError(f"unknown context_style {self.context_style!r}")

    def sampling_params(self) -> dict:
        params = {"temperature": self.temperature, "top_p": self.top_p, "top_k": self.top_k}
        return {k: v for k, v in params.items() if v is not None}


@dataclass(frozen=True)
class QuerySet:
    conv_id: str
    turn_id: str
    phi: int
    queries: tuple[str, ...]
    variant: str
    answer: str | None = None
    prompt_hash: str = ""

    def __post_init__(self):
        if self.variant not in QUERY_VARIANTS:
            raise ValueError(f"unknown query variant {self.variant!r}")
        if not 1 <= self.phi <= MAX_PHI:
            raise ValueError(f"phi must be in 1..{MAX_PHI}, got {self.phi}")
        if not 1 <= len(self.queries) <= self.phi:
            raise ValueError(f"expected 1..{self.phi} queries, got {len(self.queries)}")
        if self.variant in ("qr", "aq") and len(self.queries) != 1:
            raise ValueError(f"variant {self.variant} takes exactly one query")
        for q in self.queries:
            if not q.strip() or "\n" in q:
                raise ValueError(f"queries must be non-empty single lines, got {q!r}")

    def to_masq(self, phi_star: int | None = None) -> dict:
        row = {
            "conv_id": self.conv_id,
            "turn_id": self.turn_id,
            "phi": self.phi,
            "queries": list(self.queries),
            "variant": self.variant,
        }
        if self.answer is not None:
            row["answer"] = self.answer
        if self.prompt_hash:
            row["prompt_hash"] = self.prompt_hash
        if phi_star is not None:
            row["phi_star"] = phi_star
        return row

    @classmethod
    def from_masq(cls, row: dict) -> "QuerySet":
        return cls(
            conv_id=row["conv_id"],
            turn_id=str(row["turn_id"]),
            phi=int(row["phi"]),
            queries=tuple(row["queries"]),
            variant=row["variant"],
            answer=row.get("answer"),
            prompt_hash=row.get("prompt_hash", ""),
        )


def parse_query_lines(raw: str, phi: int) -> list[str]:
    """Split a completion into queries: one per line, enumeration markers and
    ``#`` header lines dropped, truncated to ``phi``."""
    if phi < 1:
        raise ValueError("phi must be >= 1")
    out = []
    for line in raw.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        line = _MARKER_RE.sub("", line, count=1).strip()
        if line:
            out.append(line)
        if len(out) == phi:
            break
    return out


class CompletionCache:
    """One file per key; writes go through a temp file and an atomic rename."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.txt"

    def get(self, key: str) -> str | None:
        try:
            return self._path(key).read_text(encoding="utf-8")
        except FileNotFoundError:
            return None

    def put(self, key: str, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=".txt")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, self._path(key))


class LlmClient:
    """Chat-completion client with retries and an optional completion cache.

    ``transport`` is any ``httpx`` transport; tests pass ``httpx.MockTransport``.
    """

    def __init__(self, config: LlmConfig, transport: httpx.BaseTransport | None = None, use_cache: bool = True):
        self.config = config
        self.cache = CompletionCache(config.cache_dir) if (use_cache and config.cache_dir) else None
        headers = {}
        key = os.environ.get(config.api_key_env) if config.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(transport=transport, timeout=config.timeout, headers=headers)
        self._lock = threading.Lock()
        self.transport_calls = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def cache_key(self, template: str, messages: list[dict]) -> str:
        material = json.dumps(
            {
                "template": template,
                "messages": messages,
                "model": self.config.model_name,
                "params": self.config.sampling_params(),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(material.encode("utf-8")).hexdigest()

    def complete(self, template: str, messages: list[dict]) -> tuple[str, str]:
        """Return ``(completion text, prompt hash)``."""
        key = self.cache_key(template, messages)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit, key
        text = self._post(messages)
        if self.cache is not None:
            self.cache.put(key, text)
        return text, key

    def _post(self, messages: list[dict]) -> str:
        payload = {"model": self.config.model_name, "messages": messages, **self.config.sampling_params()}
        attempts = self.config.max_retries + 1
        last_err: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.config.retry_backoff * 2 ** (attempt - 1))
            with self._lock:
                self.transport_calls += 1
            try:
                resp = self._http.post(self.config.endpoint, json=payload)
            except httpx.TransportError as e:
                last_err = e
                log.warning("LLM transport error (attempt %d/%d): %s", attempt + 1, attempts, e)
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_err = LlmError(f"HTTP {resp.status_code}")
                log.warning("LLM endpoint returned %d (attempt %d/%d)", resp.status_code, attempt + 1, attempts)
                continue
            if resp.status_code >= 400:
                raise LlmError(f"LLM endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise LlmError(f"malformed chat-completion response: {e!r}") from None
        raise LlmError(f"LLM call failed after {attempts} attempts: {last_err}")


def _context_style(config: LlmConfig, fewshot_template: bool) -> str:
    if config.context_style:
        return config.context_style
    return "last_response_only" if fewshot_template else "full"


def _prompt_inputs(client: LlmClient, conv: Conversation, i: int, fewshot_template: bool) -> dict:
    ctx = render_context(context_at(conv, i), _context_style(client.config, fewshot_template))
    return {"ptkb": render_ptkb(conv.ptkb), "ctx_text": ctx, "utterance": conv.turn(i).utterance}


def _answer_messages(client: LlmClient, conv: Conversation, i: int) -> list[dict]:
    prompt = render_prompt("mq4cs_ans_stage1", **_prompt_inputs(client, conv, i, False))
    return [{"role": "user", "content": prompt}]


def generate_answer(client: LlmClient, conv: Conversation, i: int) -> str:
    """The LLM's own answer to turn ``i`` given its context and persona."""
    text, _ = client.complete("mq4cs_ans_stage1", _answer_messages(client, conv, i))
    text = text.strip()
    if not text:
        raise LlmError("empty answer")
    return text


def generate_queries(
    client: LlmClient,
    conv: Conversation,
    i: int,
    phi: int,
    variant: str,
    answer: str | None = None,
) -> QuerySet:
    if variant not in QUERY_VARIANTS:
        raise ValueError(f"unknown query variant {variant!r}")
    if not 1 <= phi <= MAX_PHI:
        raise ValueError(f"phi must be in 1..{MAX_PHI}")
    turn = conv.turn(i)
    fewshot = client.config.fewshot

    if variant == "aq":
        if answer is None:
            answer = generate_answer(client, conv, i)
        messages = _answer_messages(client, conv, i)
        queries = [" ".join(answer.split())]
        return QuerySet(conv.conv_id, turn.turn_id, 1, tuple(queries), "aq", answer, client.cache_key("aq_answer", messages))

    if variant == "qr":
        template = "qr"
        phi = 1
        messages = [{"role": "user", "content": render_prompt("qr", **_prompt_inputs(client, conv, i, False))}]
    elif variant == "mq4cs":
        template = "mq4cs_fewshot" if fewshot else "mq4cs"
        prompt = render_prompt(template, phi=phi, **_prompt_inputs(client, conv, i, fewshot))
        messages = [{"role": "user", "content": prompt}]
    else:
        if not answer:
            raise ValueError("variant mq4cs_ans requires the generated answer")
        if fewshot:
            template = "mq4cs_ans_fewshot"
            prompt = render_prompt(template, phi=phi, response=answer, **_prompt_inputs(client, conv, i, True))
            messages = [{"role": "user", "content": prompt}]
        else:
            # second stage continues the answer exchange
            template = "mq4cs_ans_stage2"
            messages = _answer_messages(client, conv, i) + [
                {"role": "assistant", "content": answer},
                {"role": "user", "content": render_prompt(template, phi=phi)},
            ]

    raw, key = client.complete(template, messages)
    queries = parse_query_lines(raw, phi)
    if not queries:
        raise LlmError(f"no queries parsed for {conv.conv_id}/{turn.turn_id}")
    return QuerySet(conv.conv_id, turn.turn_id, phi, tuple(queries), variant, answer, key)


def write_masq(query_sets: Iterable[QuerySet], path, phi_star: dict[str, int] | None = None) -> None:
    """Export query sets as JSONL, one row per (turn, phi).

    ``phi_star`` maps turn keys to the oracle-selected phi, added to each row.
    """
    lines = []
    for qs in query_sets:
        star = None if phi_star is None else phi_star.get(turn_key(qs.conv_id, qs.turn_id))
        lines.append(json.dumps(qs.to_masq(star), ensure_ascii=False))
    _atomic_write_text(Path(path), "".join(line + "\n" for line in lines))


def read_masq(path) -> list[QuerySet]:
    out = []
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(QuerySet.from_masq(json.loads(line)))
            except (ValueError, KeyError) as e:
                raise ValueError(f"{path}: line {lineno}: {e}") from None
    return out


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


@dataclass
class ScriptedReply:
    match: tuple[str, ...]
    reply: str


@dataclass
class ScriptedLlm:
    """Offline stand-in for a chat-completion endpoint.

    Each rule lists substrings that must all occur in the concatenated message
    contents; the first matching rule's reply is returned. Unmatched requests
    get HTTP 422.
    """

    rules: list[ScriptedReply]
    calls: list[dict] = field(default_factory=list)

    @classmethod
    def from_file(cls, path) -> "ScriptedLlm":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([ScriptedReply(tuple(r["match"]), r["reply"]) for r in data["rules"]])

    def handle(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        self.calls.append(body)
        text = "\n".join(m["content"] for m in body["messages"])
        for rule in self.rules:
            if all(s in text for s in rule.match):
                message = {"role": "assistant", "content": rule.reply}
                return httpx.Response(200, json={"choices": [{"message": message}]})
        return httpx.Response(422, json={"error": "no scripted reply matches this prompt"})

    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)
