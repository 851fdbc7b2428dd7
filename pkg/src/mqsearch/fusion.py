"""Merging per-query rankings into one ranking per turn."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import RankedList
from .rerank import Reranker, TextLookup, rerank


@dataclass(frozen=True)
class FusedList:
    """Final ranking for a turn.

    ``provenance[r]`` is ``(query index, rank in that query's list)`` for the
    r-th entry, both 0-based and 1-based respectively.
    """

    turn_key: str
    entries: tuple[tuple[str, float], ...]
    provenance: tuple[tuple[int, int], ...]
    stages: tuple[str, ...] = ("interleave",)

    @property
    def ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def interleave(lists: Sequence[RankedList], limit: int, turn_key: str = "") -> FusedList:
    """Round-robin over rank positions, lists in query order, keeping the first
    occurrence of each passage. The r-th kept entry scores 1/r."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    if not lists:
        raise ValueError("need at least one ranked list")
    seen: set[str] = set()
    ids: list[str] = []
    prov: list[tuple[int, int]] = []
    depth = max(len(lst) for lst in lists)
    for pos in range(depth):
        for q, lst in enumerate(lists):
            if pos >= len(lst):
                continue
            pid = lst.entries[pos][0]
            if pid in seen:
                continue
            seen.add(pid)
            ids.append(pid)
            prov.append((q, pos + 1))
            if len(ids) == limit:
                break
        if len(ids) == limit:
            break
    entries = tuple((pid, 1.0 / r) for r, pid in enumerate(ids, 1))
    return FusedList(turn_key, entries, tuple(prov))


def answer_rerank_fuse(
    first_stage_lists: Sequence[RankedList],
    answer: str,
    reranker: Reranker,
    texts: TextLookup,
    limit: int,
    turn_key: str = "",
) -> FusedList:
    """Interleave first-stage lists, keep the top ``limit``, rerank them against
    the LLM answer. Scores are the reranker's; ties keep interleaved order."""
    if not answer or not answer.strip():
        raise ValueError("answer-guided fusion needs a non-empty answer")
    fused = interleave(first_stage_lists, limit, turn_key)
    if reranker.kind == "passthrough":
        return FusedList(turn_key, fused.entries, fused.provenance, ("interleave", "rerank:passthrough"))
    reranked = rerank(reranker, answer, RankedList("answer", fused.entries), texts)
    prov_by_id = dict(zip(fused.ids, fused.provenance))
    return FusedList(
        turn_key,
        reranked.entries,
        tuple(prov_by_id[pid] for pid in reranked.ids),
        ("interleave", f"rerank:{reranker.kind}"),
    )
