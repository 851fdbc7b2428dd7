"""Second-stage rerankers behind one contract.

``passthrough`` keeps the first-stage order, ``lexical`` scores by query-term
overlap (an offline stand-in, not equivalent to a neural cross-encoder) and
``http`` posts ``{"pairs": [{"query", "text"}]}`` to an external scoring
service that answers ``{"scores": [...]}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import httpx

from .corpus import PassageCollection, RankedList, tokenize

RERANKER_KINDS = ("passthrough", "lexical", "http")


class RerankError(RuntimeError):
    pass


@dataclass(frozen=True)
class RerankerContract:
    kind: str = "passthrough"
    endpoint: str | None = None
    max_text_length: int = 512
    batch_size: int = 32
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in RERANKER_KINDS:
            raise ValueError(f"unknown reranker kind {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http reranker needs an endpoint")
        if self.max_text_length <= 0:
            raise ValueError("max_text_length must be > 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be > 0")


def truncate_text(text: str, max_tokens: int) -> str:
    words = text.split()
    if len(words) <= max_tokens:
        return text
    return " ".join(words[:max_tokens])


def lexical_overlap(query: str, text: str) -> float:
    """|tokens(q) & tokens(d)| / |tokens(q)| over token sets."""
    q = set(tokenize(query))
    if not q:
        return 0.0
    return len(q & set(tokenize(text))) / len(q)


class Reranker:
    def __init__(self, contract: RerankerContract, transport: httpx.BaseTransport | None = None):
        self.contract = contract
        self._http = None
        if contract.kind == "http":
            self._http = httpx.Client(transport=transport, timeout=contract.timeout)

    @property
    def kind(self) -> str:
        return self.contract.kind

    def close(self) -> None:
        if self._http is not None:
            self._http.close()

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        texts = [truncate_text(t, self.contract.max_text_length) for t in texts]
        if self.kind == "lexical":
            return [lexical_overlap(query, t) for t in texts]
        if self.kind == "http":
            return self._score_http(query, texts)
        return [0.0] * len(texts)

    def _score_http(self, query: str, texts: list[str]) -> list[float]:
        scores: list[float] = []
        size = self.contract.batch_size
        for start in range(0, len(texts), size):
            batch = texts[start : start + size]
            try:
                resp = self._http.post(
                    self.contract.endpoint, json={"pairs": [{"query": query, "text": t} for t in batch]}
                )
                resp.raise_for_status()
                got = resp.json()["scores"]
            except (httpx.HTTPError, ValueError, KeyError, TypeError) as e:
                raise RerankError(f"reranker request failed: {e}") from e
            if len(got) != len(batch):
                raise RerankError(f"reranker returned {len(got)} scores for {len(batch)} pairs")
            scores.extend(float(s) for s in got)
        return scores


TextLookup = PassageCollection | Mapping[str, str] | Callable[[str], str]


def _resolve(texts: TextLookup, pid: str) -> str:
    try:
        if isinstance(texts, PassageCollection):
            return texts.text(pid)
        if callable(texts):
            return texts(pid)
        return texts[pid]
    except KeyError:
        raise RerankError(f"no text for passage {pid!r}") from None


def rerank(reranker: Reranker, query: str, candidates: RankedList, texts: TextLookup) -> RankedList:
    """Reorder candidates by reranker score; equal scores keep first-stage order."""
    if reranker.kind == "passthrough":
        return candidates
    ids = candidates.ids
    scores = reranker.score(query, [_resolve(texts, pid) for pid in ids])
    order = sorted(range(len(ids)), key=lambda j: -scores[j])
    entries = tuple((ids[j], scores[j]) for j in order)
    return RankedList(candidates.query_label, entries, candidates.stages + (f"rerank:{reranker.kind}",))
