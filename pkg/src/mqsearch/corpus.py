"""Passage collections, the analyzer, and BM25 retrieval over an inverted index."""

from __future__ import annotations

import hashlib
import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from nltk.stem.porter import PorterStemmer

ANALYZER_NAME = "lowercase+split-nonalnum+porter-original"
INDEX_FORMAT_VERSION = 1
INDEX_MAGIC = b"MQIX"
DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_SPLIT = re.compile(r"[^0-9a-z]+")
_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


class CollectionError(ValueError):
    pass


@dataclass(frozen=True)
class Passage:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise CollectionError("passage id must be non-empty")
        if not self.text.strip():
            raise CollectionError(f"passage {self.id!r} has empty text")


class PassageCollection(Sequence[Passage]):
    """Ordered, id-unique list of passages with lookup by id."""

    def __init__(self, passages: Iterable[Passage]):
        self._passages = list(passages)
        self._by_id: dict[str, Passage] = {}
        for p in self._passages:
            if p.id in self._by_id:
                raise CollectionError(f"duplicate passage id {p.id!r}")
            self._by_id[p.id] = p

    def __getitem__(self, i):
        return self._passages[i]

    def __len__(self) -> int:
        return len(self._passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._passages)

    def __contains__(self, pid) -> bool:
        return pid in self._by_id

    def text(self, pid: str) -> str:
        return self._by_id[pid].text

    def get(self, pid: str) -> Passage | None:
        return self._by_id.get(pid)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self._passages:
            h.update(p.id.encode("utf-8"))
            h.update(b"\t")
            h.update(p.text.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def ingest_collection(path, format: str | None = None) -> PassageCollection:
    """Read passages from a JSONL (``id``/``contents``) or TSV (``id<TAB>text``) file.

    ``format`` defaults to the file suffix. Errors name the offending line.
    """
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() == ".tsv" else "jsonl"
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown collection format {format!r}")

    passages = []
    seen = set()
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if format == "jsonl":
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise CollectionError(f"line {lineno}: invalid JSON ({e.msg})") from None
                if not isinstance(rec, dict):
                    raise CollectionError(f"line {lineno}: expected a JSON object")
                pid = rec.get("id")
                text = rec.get("contents", rec.get("text"))
            else:
                pid, sep, text = line.partition("\t")
                if not sep:
                    raise CollectionError(f"line {lineno}: expected 'id<TAB>text'")
            if not isinstance(pid, str) or not pid or not isinstance(text, str) or not text.strip():
                raise CollectionError(f"line {lineno}: record needs non-empty id and text")
            if pid in seen:
                raise CollectionError(f"line {lineno}: duplicate passage id {pid!r}")
            seen.add(pid)
            passages.append(Passage(pid, text))
    if not passages:
        raise CollectionError("empty collection")
    return PassageCollection(passages)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, Porter-stem. Stopwords are kept."""
    return [_stemmer.stem(t, to_lowercase=False) for t in _SPLIT.split(text.lower()) if t]


@dataclass(frozen=True)
class RankedList:
    """Ranked (passage id, score) pairs for one query.

    ``stages`` records what produced the ordering, e.g. ``("bm25", "rerank:lexical")``.
    """

    query_label: str
    entries: tuple[tuple[str, float], ...]
    stages: tuple[str, ...] = ()

    @property
    def ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class InvertedIndex:
    ids: list[str]
    doc_lengths: np.ndarray
    postings: dict[str, tuple[np.ndarray, np.ndarray]]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    corpus_checksum: str = ""
    analyzer: str = ANALYZER_NAME
    _id_rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.ids))

    @property
    def num_docs(self) -> int:
        return len(self.ids)

    @property
    def avg_doc_length(self) -> float:
        return float(self.doc_lengths.sum()) / self.num_docs

    def doc_freq(self, term: str) -> int:
        p = self.postings.get(term)
        return 0 if p is None else len(p[0])

    def idf(self, term: str) -> float:
        df = self.doc_freq(term)
        if df == 0:
            return 0.0
        n = self.num_docs
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def manifest(self) -> str:
        lines = [
            f"format_version: {INDEX_FORMAT_VERSION}",
            f"analyzer: {self.analyzer}",
            f"k1: {self.k1!r}",
            f"b: {self.b!r}",
            f"num_docs: {self.num_docs}",
            f"avg_doc_length: {self.avg_doc_length!r}",
            f"num_terms: {len(self.postings)}",
            f"corpus_sha256: {self.corpus_checksum}",
        ]
        return "\n".join(lines) + "\n"

    def to_bytes(self) -> bytes:
        terms = sorted(self.postings)
        header = json.dumps(
            {
                "analyzer": self.analyzer,
                "k1": self.k1,
                "b": self.b,
                "corpus_sha256": self.corpus_checksum,
                "ids": self.ids,
                "terms": terms,
            },
            sort_keys=True,
            ensure_ascii=False,
        ).encode("utf-8")
        offsets = np.zeros(len(terms) + 1, dtype="<i8")
        for i, t in enumerate(terms):
            offsets[i + 1] = offsets[i] + len(self.postings[t][0])
        docs = [self.postings[t][0] for t in terms]
        tfs = [self.postings[t][1] for t in terms]
        empty = np.zeros(0, dtype="<i4")
        parts = [
            INDEX_MAGIC,
            struct.pack("<IQ", INDEX_FORMAT_VERSION, len(header)),
            header,
            self.doc_lengths.astype("<i4").tobytes(),
            offsets.tobytes(),
            np.concatenate(docs or [empty]).astype("<i4").tobytes(),
            np.concatenate(tfs or [empty]).astype("<i4").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InvertedIndex":
        if data[:4] != INDEX_MAGIC:
            raise ValueError("not an index file")
        version, hlen = struct.unpack_from("<IQ", data, 4)
        if version != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index version {version}")
        pos = 4 + 12
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        n = len(header["ids"])
        terms = header["terms"]
        doc_lengths = np.frombuffer(data, dtype="<i4", count=n, offset=pos).astype(np.int64)
        pos += 4 * n
        offsets = np.frombuffer(data, dtype="<i8", count=len(terms) + 1, offset=pos)
        pos += 8 * (len(terms) + 1)
        total = int(offsets[-1])
        docs = np.frombuffer(data, dtype="<i4", count=total, offset=pos).astype(np.int64)
        pos += 4 * total
        tfs = np.frombuffer(data, dtype="<i4", count=total, offset=pos).astype(np.int64)
        postings = {
            t: (docs[offsets[i] : offsets[i + 1]], tfs[offsets[i] : offsets[i + 1]])
            for i, t in enumerate(terms)
        }
        return cls(
            ids=list(header["ids"]),
            doc_lengths=doc_lengths,
            postings=postings,
            k1=header["k1"],
            b=header["b"],
            corpus_checksum=header["corpus_sha256"],
            analyzer=header["analyzer"],
        )

    def save(self, directory) -> Path:
        """Write ``index.bin`` and ``manifest.txt`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        _atomic_write_bytes(directory / "index.bin", self.to_bytes())
        _atomic_write_bytes(directory / "manifest.txt", self.manifest().encode("utf-8"))
        return directory

    @classmethod
    def load(cls, directory) -> "InvertedIndex":
        return cls.from_bytes((Path(directory) / "index.bin").read_bytes())


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def build_index(collection: PassageCollection, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> InvertedIndex:
    if len(collection) == 0:
        raise CollectionError("empty collection")
    doc_lengths = np.zeros(len(collection), dtype=np.int64)
    acc: dict[str, tuple[list[int], list[int]]] = {}
    for ordinal, passage in enumerate(collection):
        tokens = tokenize(passage.text)
        doc_lengths[ordinal] = len(tokens)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        for t, tf in counts.items():
            docs, tfs = acc.setdefault(t, ([], []))
            docs.append(ordinal)
            tfs.append(tf)
    postings = {
        t: (np.asarray(acc[t][0], dtype=np.int64), np.asarray(acc[t][1], dtype=np.int64))
        for t in sorted(acc)
    }
    if doc_lengths.sum() == 0:
        raise CollectionError("collection has no indexable tokens")
    return InvertedIndex(
        ids=[p.id for p in collection],
        doc_lengths=doc_lengths,
        postings=postings,
        k1=k1,
        b=b,
        corpus_checksum=collection.checksum(),
    )


def _query_terms(query_tokens: Iterable[str]) -> list[str]:
    # set semantics, fixed order so float sums are reproducible
    return sorted(set(query_tokens))


def bm25_score(index: InvertedIndex, query_tokens: Sequence[str], doc: int) -> float:
    """BM25 score of one document; each distinct query term counts once."""
    if not 0 <= doc < index.num_docs:
        raise IndexError(f"doc ordinal {doc} out of range")
    k1, b, avgdl = index.k1, index.b, index.avg_doc_length
    dl = float(index.doc_lengths[doc])
    score = 0.0
    for term in _query_terms(query_tokens):
        p = index.postings.get(term)
        if p is None:
            continue
        docs, tfs = p
        pos = int(np.searchsorted(docs, doc))
        if pos == len(docs) or docs[pos] != doc:
            continue
        tf = float(tfs[pos])
        score += index.idf(term) * tf / (tf + k1 * (1 - b + b * dl / avgdl))
    return score


def score_all(index: InvertedIndex, query_tokens: Sequence[str]) -> np.ndarray:
    """BM25 scores for every document, as a dense array indexed by ordinal."""
    k1, b, avgdl = index.k1, index.b, index.avg_doc_length
    scores = np.zeros(index.num_docs, dtype=np.float64)
    for term in _query_terms(query_tokens):
        p = index.postings.get(term)
        if p is None:
            continue
        docs, tfs = p
        tf = tfs.astype(np.float64)
        dl = index.doc_lengths[docs].astype(np.float64)
        scores[docs] += index.idf(term) * tf / (tf + k1 * (1 - b + b * dl / avgdl))
    return scores


def retrieve(index: InvertedIndex, query: str, k: int, label: str | None = None) -> RankedList:
    """Top-``k`` documents by BM25, ties broken by passage id ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    label = query if label is None else label
    tokens = tokenize(query)
    if not tokens:
        return RankedList(label, (), ("bm25",))
    scores = score_all(index, tokens)
    cand = np.flatnonzero(scores > 0)
    order = np.lexsort((index._id_rank[cand], -scores[cand]))[:k]
    entries = tuple((index.ids[int(d)], float(scores[d])) for d in cand[order])
    return RankedList(label, entries, ("bm25",))
