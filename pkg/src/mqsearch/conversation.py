"""Conversations, turns, persona statements and the per-turn context view.

The canonical dataset file is JSONL with one conversation per line::

    {"conv_id": "c1", "ptkb": ["I live in Utrecht"], "turns": [
        {"turn_id": "1", "utterance": "...", "response": "...",
         "topic_shift": false, "human_rewrite": "..."}]}

``ptkb``, ``response``, ``topic_shift`` and ``human_rewrite`` are optional.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PtkbStatement:
    index: int
    text: str

    def __post_init__(self):
        if self.index < 1:
            raise DatasetError("ptkb statement index must be >= 1")
        if not self.text.strip():
            raise DatasetError("ptkb statement text must be non-empty")


@dataclass(frozen=True)
class Turn:
    turn_id: str
    utterance: str
    canonical_response: str | None = None
    topic_shift: bool | None = None
    human_rewrite: str | None = None


@dataclass(frozen=True)
class Conversation:
    conv_id: str
    turns: tuple[Turn, ...]
    ptkb: tuple[PtkbStatement, ...] = ()

    def __post_init__(self):
        if not self.turns:
            raise DatasetError(f"conversation {self.conv_id!r} has no turns")
        seen = set()
        for t in self.turns:
            if not t.utterance or not t.utterance.strip():
                raise DatasetError(f"conversation {self.conv_id!r} turn {t.turn_id!r}: missing utterance")
            if t.turn_id in seen:
                raise DatasetError(f"conversation {self.conv_id!r}: duplicate turn_id {t.turn_id!r}")
            seen.add(t.turn_id)

    def turn(self, i: int) -> Turn:
        """1-based turn access."""
        if not 1 <= i <= len(self.turns):
            raise IndexError(f"turn {i} out of range for conversation {self.conv_id!r} ({len(self.turns)} turns)")
        return self.turns[i - 1]

    def turn_key(self, i: int) -> str:
        return turn_key(self.conv_id, self.turn(i).turn_id)


def turn_key(conv_id: str, turn_id: str) -> str:
    """Identifier used for a turn in run and qrels files."""
    return f"{conv_id}_{turn_id}"


@dataclass(frozen=True)
class ContextView:
    pairs: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.pairs)


def context_at(conv: Conversation, i: int) -> ContextView:
    """(utterance, response) pairs of the turns before turn ``i`` (1-based).

    A prior turn without a stored response contributes an empty response.
    """
    if not 1 <= i <= len(conv.turns):
        raise IndexError(f"turn {i} out of range for conversation {conv.conv_id!r}")
    return ContextView(tuple((t.utterance, t.canonical_response or "") for t in conv.turns[: i - 1]))


def render_context(ctx: ContextView, style: str = "full") -> str:
    """Render as ``user:``/``system:`` lines.

    ``full`` alternates every utterance and response; ``last_response_only``
    lists all utterances followed by the final system response.
    """
    if not ctx.pairs:
        return ""
    if style == "full":
        lines = []
        for u, r in ctx.pairs:
            lines.append(f"user: {u}")
            lines.append(f"system: {r}")
    elif style == "last_response_only":
        lines = [f"user: {u}" for u, _ in ctx.pairs]
        lines.append(f"system: {ctx.pairs[-1][1]}")
    else:
        raise ValueError(f"unknown context style {style!r}")
    return "\n".join(lines)


def render_ptkb(ptkb: Iterable[PtkbStatement]) -> str:
    return ", ".join(f"{s.index}: {s.text}" for s in ptkb)


def conversation_from_dict(rec: dict, where: str = "") -> Conversation:
    prefix = f"{where}: " if where else ""
    conv_id = rec.get("conv_id")
    if not isinstance(conv_id, str) or not conv_id:
        raise DatasetError(f"{prefix}missing conv_id")
    turns = []
    for n, t in enumerate(rec.get("turns") or [], 1):
        turn_id = str(t.get("turn_id", n))
        utt = t.get("utterance")
        if not isinstance(utt, str) or not utt.strip():
            raise DatasetError(f"{prefix}conversation {conv_id!r} turn {turn_id!r}: missing utterance")
        turns.append(
            Turn(
                turn_id=turn_id,
                utterance=utt,
                canonical_response=t.get("response"),
                topic_shift=t.get("topic_shift"),
                human_rewrite=t.get("human_rewrite"),
            )
        )
    ptkb = tuple(PtkbStatement(k, s) for k, s in enumerate(rec.get("ptkb") or [], 1))
    return Conversation(conv_id, tuple(turns), ptkb)


def conversation_to_dict(conv: Conversation) -> dict:
    out: dict = {"conv_id": conv.conv_id}
    if conv.ptkb:
        out["ptkb"] = [s.text for s in conv.ptkb]
    turns = []
    for t in conv.turns:
        d: dict = {"turn_id": t.turn_id, "utterance": t.utterance}
        if t.canonical_response is not None:
            d["response"] = t.canonical_response
        if t.topic_shift is not None:
            d["topic_shift"] = t.topic_shift
        if t.human_rewrite is not None:
            d["human_rewrite"] = t.human_rewrite
        turns.append(d)
    out["turns"] = turns
    return out


def load_dataset(path) -> list[Conversation]:
    convs = []
    seen = set()
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {lineno}: invalid JSON ({e.msg})") from None
            conv = conversation_from_dict(rec, where=f"line {lineno}")
            if conv.conv_id in seen:
                raise DatasetError(f"line {lineno}: duplicate conv_id {conv.conv_id!r}")
            seen.add(conv.conv_id)
            convs.append(conv)
    return convs


def dumps_dataset(conversations: Iterable[Conversation]) -> str:
    return "".join(json.dumps(conversation_to_dict(c), ensure_ascii=False) + "\n" for c in conversations)


def save_dataset(conversations: Iterable[Conversation], path) -> None:
    Path(path).write_text(dumps_dataset(conversations), encoding="utf-8")
