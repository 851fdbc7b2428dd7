"""Per-turn retrieval flows: generate queries, retrieve, rerank, fuse."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, TypeVar

from .conversation import Conversation
from .corpus import InvertedIndex, RankedList, retrieve
from .fusion import FusedList, answer_rerank_fuse, interleave
from .llm import LlmClient, QuerySet, generate_answer, generate_queries
from .rerank import Reranker, RerankerContract, TextLookup, rerank

PIPELINE_VARIANTS = ("mq4cs", "mq4cs_ans", "mq4cs_ans_rerank", "qr", "aq")

T = TypeVar("T")


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    variant: str = "mq4cs"
    phi: int = 5
    first_stage_depth: int = 1000
    rerank_depth: int = 1000
    fusion_limit: int = 1000
    reranker: RerankerContract = field(default_factory=RerankerContract)

    def __post_init__(self):
        if self.variant not in PIPELINE_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant in ("qr", "aq"):
            self.phi = 1
        if not 1 <= self.phi <= 5:
            raise ValueError("phi must be in 1..5")
        for name in ("first_stage_depth", "rerank_depth", "fusion_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def query_variant(self) -> str:
        return "mq4cs_ans" if self.variant == "mq4cs_ans_rerank" else self.variant

    @property
    def reranks_per_query(self) -> bool:
        return self.variant != "mq4cs_ans_rerank"


@dataclass(frozen=True)
class StageTimings:
    generation_ms: float = 0.0
    retrieval_ms: float = 0.0
    rerank_ms: float = 0.0
    fusion_ms: float = 0.0
    total_ms: float = 0.0

    def as_dict(self) -> dict:
        return {
            "generation_ms": self.generation_ms,
            "retrieval_ms": self.retrieval_ms,
            "rerank_ms": self.rerank_ms,
            "fusion_ms": self.fusion_ms,
            "total_ms": self.total_ms,
        }


@dataclass(frozen=True)
class TurnResult:
    query_set: QuerySet
    lists: tuple[RankedList, ...]
    fused: FusedList
    timings: StageTimings


def _map(fn: Callable[[int], T], n: int, workers: int) -> list[T]:
    # results come back in index order whatever the completion order
    if workers <= 1 or n <= 1:
        return [fn(k) for k in range(n)]
    with ThreadPoolExecutor(max_workers=min(workers, n)) as pool:
        return list(pool.map(fn, range(n)))


def _check_query_set(config: PipelineConfig, conv: Conversation, i: int, qs: QuerySet) -> None:
    turn = conv.turn(i)
    if (qs.conv_id, qs.turn_id) != (conv.conv_id, turn.turn_id):
        raise PipelineError(
            f"query set is for {qs.conv_id}/{qs.turn_id}, not {conv.conv_id}/{turn.turn_id}"
        )
    if qs.variant != config.query_variant:
        raise PipelineError(f"query set variant {qs.variant!r} does not fit pipeline variant {config.variant!r}")
    if len(qs.queries) > config.phi:
        raise PipelineError(f"{len(qs.queries)} queries exceed phi={config.phi}")
    if config.variant == "mq4cs_ans_rerank" and not qs.answer:
        raise PipelineError("mq4cs_ans_rerank needs the generated answer in the query set")


def _first_stage(config, index, qs: QuerySet, key: str, workers: int) -> list[RankedList]:
    def one(k: int) -> RankedList:
        try:
            return retrieve(index, qs.queries[k], config.first_stage_depth, label=f"{key}#q{k + 1}")
        except Exception as e:
            raise PipelineError(f"query {k + 1}: retrieval failed: {e}") from e

    return _map(one, len(qs.queries), workers)


def _rerank_stage(config, reranker, qs: QuerySet, lists, texts, workers: int) -> list[RankedList]:
    def one(k: int) -> RankedList:
        cands = lists[k]
        if len(cands) > config.rerank_depth:
            cands = RankedList(cands.query_label, cands.entries[: config.rerank_depth], cands.stages)
        try:
            return rerank(reranker, qs.queries[k], cands, texts)
        except Exception as e:
            raise PipelineError(f"query {k + 1}: rerank failed: {e}") from e

    return _map(one, len(lists), workers)


def run_turn(
    config: PipelineConfig,
    index: InvertedIndex,
    conv: Conversation,
    i: int,
    query_set: QuerySet,
    texts: TextLookup,
    reranker: Reranker | None = None,
    workers: int = 1,
) -> list[RankedList]:
    """One ranked list per generated query, in query order.

    Every variant except ``mq4cs_ans_rerank`` reranks each query's first-stage
    list; that one leaves reranking to answer-guided fusion.
    """
    _check_query_set(config, conv, i, query_set)
    reranker = reranker or Reranker(config.reranker)
    key = conv.turn_key(i)
    lists = _first_stage(config, index, query_set, key, workers)
    if config.reranks_per_query:
        lists = _rerank_stage(config, reranker, query_set, lists, texts, workers)
    return lists


def fuse(config: PipelineConfig, lists, query_set: QuerySet, reranker: Reranker, texts, key: str) -> FusedList:
    if config.variant == "mq4cs_ans_rerank":
        return answer_rerank_fuse(lists, query_set.answer, reranker, texts, config.fusion_limit, key)
    return interleave(lists, config.fusion_limit, key)


def make_query_set(config: PipelineConfig, client: LlmClient, conv: Conversation, i: int) -> QuerySet:
    variant = config.query_variant
    if variant == "mq4cs_ans":
        answer = generate_answer(client, conv, i)
        return generate_queries(client, conv, i, config.phi, variant, answer=answer)
    return generate_queries(client, conv, i, config.phi, variant)


def process_turn(
    config: PipelineConfig,
    index: InvertedIndex,
    texts: TextLookup,
    conv: Conversation,
    i: int,
    client: LlmClient | None = None,
    query_set: QuerySet | None = None,
    reranker: Reranker | None = None,
    workers: int = 1,
) -> TurnResult:
    """Full flow for one utterance with wall-clock timing of each stage.

    Either an LLM client (to generate queries) or a ready query set is needed.
    """
    clock = time.perf_counter
    reranker = reranker or Reranker(config.reranker)
    key = conv.turn_key(i)
    start = clock()

    t0 = clock()
    if query_set is None:
        if client is None:
            raise PipelineError("need an LLM client or a query set")
        query_set = make_query_set(config, client, conv, i)
    t1 = clock()
    _check_query_set(config, conv, i, query_set)
    lists = _first_stage(config, index, query_set, key, workers)
    t2 = clock()
    if config.reranks_per_query:
        lists = _rerank_stage(config, reranker, query_set, lists, texts, workers)
    t3 = clock()
    fused = fuse(config, lists, query_set, reranker, texts, key)
    t4 = clock()

    timings = StageTimings(
        generation_ms=(t1 - t0) * 1e3,
        retrieval_ms=(t2 - t1) * 1e3,
        rerank_ms=(t3 - t2) * 1e3,
        fusion_ms=(t4 - t3) * 1e3,
        total_ms=(t4 - start) * 1e3,
    )
    return TurnResult(query_set, tuple(lists), fused, timings)


def time_stages(config, index, texts, conv, i, client=None, query_set=None, reranker=None) -> StageTimings:
    return process_turn(config, index, texts, conv, i, client, query_set, reranker).timings
