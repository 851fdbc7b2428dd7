"""trec_eval-style evaluation of run files against graded qrels.

Gains for nDCG are the raw grades with a log2(rank + 1) discount and the ideal
ranking built from every judged document of the turn. Binary metrics (recall,
MRR, MAP) count a document as relevant when its grade reaches the qrels'
``relevance_threshold``. Turns that are in the run but not in the qrels are
skipped and listed in the report; turns with no relevant document score 0 for
nDCG/MRR/MAP and are left out of recall.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .fusion import FusedList

DEFAULT_METRICS = ("ndcg@3", "recall@100", "mrr", "map", "ndcg")
_METRIC_RE = re.compile(r"^(ndcg|recall|mrr|map)(?:@(\d+))?$")


class FormatError(ValueError):
    pass


def natural_key(s: str):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", s)]


@dataclass
class QrelSet:
    judgments: dict[str, dict[str, int]]
    relevance_threshold: int = 1

    def grades(self, turn: str) -> dict[str, int]:
        return self.judgments.get(turn, {})

    def relevant(self, turn: str) -> set[str]:
        return {d for d, g in self.grades(turn).items() if g >= self.relevance_threshold}

    def __contains__(self, turn: str) -> bool:
        return turn in self.judgments


@dataclass
class RunFile:
    """Per-turn ``(passage_id, score, rank)`` entries in rank order."""

    turns: dict[str, list[tuple[str, float, int]]]
    tag: str = "run"

    def ranking(self, turn: str) -> list[str]:
        return [d for d, _, _ in self.turns.get(turn, [])]

    def turn_keys(self) -> list[str]:
        return sorted(self.turns, key=natural_key)


def load_qrels(path, relevance_threshold: int = 1) -> QrelSet:
    judgments: dict[str, dict[str, int]] = {}
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 4:
                raise FormatError(f"{path}: line {lineno}: expected 'turn 0 doc grade', got {len(cols)} columns")
            turn, _, doc, grade_s = cols
            try:
                grade = int(grade_s)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: grade {grade_s!r} is not an integer") from None
            if grade < 0:
                raise FormatError(f"{path}: line {lineno}: negative grade {grade}")
            per_turn = judgments.setdefault(turn, {})
            if doc in per_turn:
                raise FormatError(f"{path}: line {lineno}: second judgment for ({turn}, {doc})")
            per_turn[doc] = grade
    return QrelSet(judgments, relevance_threshold)


def load_run(path) -> RunFile:
    turns: dict[str, list[tuple[str, float, int]]] = {}
    tag = None
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 6:
                raise FormatError(f"{path}: line {lineno}: expected 6 columns, got {len(cols)}")
            turn, q0, doc, rank_s, score_s, run_tag = cols
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: bad rank or score") from None
            entries = turns.setdefault(turn, [])
            if rank != len(entries) + 1:
                raise FormatError(f"{path}: line {lineno}: rank {rank} for {turn}, expected {len(entries) + 1}")
            if entries and score > entries[-1][1]:
                raise FormatError(f"{path}: line {lineno}: score increases with rank for {turn}")
            if any(d == doc for d, _, _ in entries):
                raise FormatError(f"{path}: line {lineno}: {doc} listed twice for {turn}")
            entries.append((doc, score, rank))
            tag = tag or run_tag
    return RunFile(turns, tag or "run")


def format_score(score: float) -> str:
    # shortest digits that read back to the same float, never in exponent form
    return np.format_float_positional(score, unique=True, trim="0")


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    tmp.replace(path)


def fused_to_run(fused_lists: Iterable[FusedList], tag: str) -> RunFile:
    """Ranks 1..n with synthetic scores 1/rank, so score order equals fused order."""
    turns = {}
    for fl in fused_lists:
        if fl.turn_key in turns:
            raise ValueError(f"two fused lists for turn {fl.turn_key}")
        turns[fl.turn_key] = [(pid, 1.0 / r, r) for r, pid in enumerate(fl.ids, 1)]
    return RunFile(turns, tag)


def write_run_file(run: RunFile, path) -> None:
    if not run.tag or any(c.isspace() for c in run.tag):
        raise ValueError(f"run tag must be a non-empty token, got {run.tag!r}")
    lines = []
    for turn in run.turn_keys():
        for doc, score, rank in run.turns[turn]:
            lines.append(f"{turn} Q0 {doc} {rank} {format_score(score)} {run.tag}")
    _write_lines(Path(path), lines)


def write_run(fused_lists: Iterable[FusedList], tag: str, path) -> RunFile:
    run = fused_to_run(fused_lists, tag)
    write_run_file(run, path)
    return run


def write_qrels(qrels: QrelSet, path) -> None:
    lines = []
    for turn in sorted(qrels.judgments, key=natural_key):
        for doc, grade in qrels.judgments[turn].items():
            lines.append(f"{turn} 0 {doc} {grade}")
    _write_lines(Path(path), lines)


# -- per-turn metrics -------------------------------------------------------


def _evaluated_turns(run: RunFile, qrels: QrelSet) -> list[str]:
    return [t for t in run.turn_keys() if t in qrels]


def _dcg(gains: Sequence[float]) -> float:
    return sum(g / math.log2(r + 1) for r, g in enumerate(gains, 1))


def ndcg_turn(ranking: Sequence[str], grades: Mapping[str, int], k: int | None = None) -> float:
    depth = len(ranking) if k is None else k
    gains = [grades.get(d, 0) for d in ranking[:depth]]
    ideal = sorted((g for g in grades.values() if g > 0), reverse=True)
    ideal = ideal if k is None else ideal[:k]
    idcg = _dcg(ideal)
    return _dcg(gains) / idcg if idcg > 0 else 0.0


def recall_turn(ranking: Sequence[str], relevant: set[str], k: int | None = None) -> float | None:
    if not relevant:
        return None
    top = ranking if k is None else ranking[:k]
    return len(relevant.intersection(top)) / len(relevant)


def rr_turn(ranking: Sequence[str], relevant: set[str]) -> float:
    for r, d in enumerate(ranking, 1):
        if d in relevant:
            return 1.0 / r
    return 0.0


def ap_turn(ranking: Sequence[str], relevant: set[str]) -> float:
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for r, d in enumerate(ranking, 1):
        if d in relevant:
            hits += 1
            total += hits / r
    return total / len(relevant)


def ndcg_at_k(run: RunFile, qrels: QrelSet, k: int | None = None) -> dict[str, float]:
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    return {t: ndcg_turn(run.ranking(t), qrels.grades(t), k) for t in _evaluated_turns(run, qrels)}


def recall_at_k(run: RunFile, qrels: QrelSet, k: int | None = None) -> dict[str, float]:
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    out = {}
    for t in _evaluated_turns(run, qrels):
        v = recall_turn(run.ranking(t), qrels.relevant(t), k)
        if v is not None:
            out[t] = v
    return out


def mrr(run: RunFile, qrels: QrelSet) -> dict[str, float]:
    return {t: rr_turn(run.ranking(t), qrels.relevant(t)) for t in _evaluated_turns(run, qrels)}


def mean_average_precision(run: RunFile, qrels: QrelSet) -> dict[str, float]:
    return {t: ap_turn(run.ranking(t), qrels.relevant(t)) for t in _evaluated_turns(run, qrels)}


def parse_metric(name: str) -> tuple[str, int | None]:
    m = _METRIC_RE.match(name.strip().lower())
    if not m:
        raise ValueError(f"unknown metric {name!r}")
    kind, k = m.group(1), m.group(2)
    if k is not None and kind in ("mrr", "map"):
        raise ValueError(f"metric {kind} takes no cutoff")
    return kind, None if k is None else int(k)


def metric_values(run: RunFile, qrels: QrelSet, name: str) -> dict[str, float]:
    kind, k = parse_metric(name)
    if kind == "ndcg":
        return ndcg_at_k(run, qrels, k)
    if kind == "recall":
        return recall_at_k(run, qrels, k)
    if kind == "mrr":
        return mrr(run, qrels)
    return mean_average_precision(run, qrels)


def _mean(values: Iterable[float]) -> float | None:
    values = list(values)
    return sum(values) / len(values) if values else None


@dataclass
class MetricReport:
    tag: str
    metrics: tuple[str, ...]
    per_turn: dict[str, dict[str, float]]
    relevance_threshold: int = 1
    missing_turns: tuple[str, ...] = ()

    @property
    def aggregates(self) -> dict[str, float | None]:
        return {m: _mean(self.per_turn[m].values()) for m in self.metrics}

    @property
    def counts(self) -> dict[str, int]:
        return {m: len(self.per_turn[m]) for m in self.metrics}

    def turn_keys(self) -> list[str]:
        keys = set()
        for m in self.metrics:
            keys.update(self.per_turn[m])
        return sorted(keys, key=natural_key)

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "relevance_threshold": self.relevance_threshold,
            "metrics": list(self.metrics),
            "evaluated_turns": self.counts,
            "missing_turns": list(self.missing_turns),
            "aggregate": self.aggregates,
            "per_turn": {
                m: {t: self.per_turn[m][t] for t in sorted(self.per_turn[m], key=natural_key)}
                for m in self.metrics
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        head = f"# run={self.tag} relevance_threshold={self.relevance_threshold}"
        if self.missing_turns:
            head += f" missing_turns={len(self.missing_turns)}"
        width = max(len("metric"), *(len(m) for m in self.metrics))
        lines = [head, f"{'metric':<{width}}  {'value':>8}  {'turns':>5}"]
        aggs, counts = self.aggregates, self.counts
        for m in self.metrics:
            v = aggs[m]
            shown = "     n/a" if v is None else f"{v:8.4f}"
            lines.append(f"{m:<{width}}  {shown}  {counts[m]:>5d}")
        return "\n".join(lines) + "\n"


def evaluate(run: RunFile, qrels: QrelSet, metrics: Sequence[str] = DEFAULT_METRICS) -> MetricReport:
    metrics = tuple(metrics)
    for m in metrics:
        parse_metric(m)
    missing = tuple(t for t in run.turn_keys() if t not in qrels)
    per_turn = {m: metric_values(run, qrels, m) for m in metrics}
    return MetricReport(run.tag, metrics, per_turn, qrels.relevance_threshold, missing)


# -- oracle phi selection ---------------------------------------------------


@dataclass
class OracleSelection:
    metric: str
    phi_star: dict[str, int]
    values: dict[str, float]

    def to_dict(self) -> dict:
        keys = sorted(self.phi_star, key=natural_key)
        return {
            "metric": self.metric,
            "turns": {t: {"phi_star": self.phi_star[t], "value": self.values[t]} for t in keys},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def oracle_select(
    runs_by_phi: Mapping[int, RunFile], qrels: QrelSet, metric: str = "ndcg@3", tag: str = "oracle"
) -> tuple[OracleSelection, RunFile]:
    """Pick, per turn, the phi whose run scores best on ``metric`` (smallest phi
    on ties) and stitch those rankings into one run."""
    if not runs_by_phi:
        raise ValueError("need at least one run")
    values = {phi: metric_values(run, qrels, metric) for phi, run in runs_by_phi.items()}
    turns = set()
    for v in values.values():
        turns.update(v)
    phi_star, best = {}, {}
    stitched = {}
    for t in sorted(turns, key=natural_key):
        choice = None
        for phi in sorted(values):
            v = values[phi].get(t)
            if v is not None and (choice is None or v > best[t]):
                choice, best[t] = phi, v
        phi_star[t] = choice
        stitched[t] = list(runs_by_phi[choice].turns[t])
    return OracleSelection(metric, phi_star, best), RunFile(stitched, tag)


@dataclass(frozen=True)
class PhiDistribution:
    histogram: dict[int, int]
    mean: float
    n: int

    @property
    def fraction_multi_query(self) -> float:
        return sum(c for phi, c in self.histogram.items() if phi > 1) / self.n

    def to_dict(self) -> dict:
        return {
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "mean": self.mean,
            "n": self.n,
            "fraction_multi_query": self.fraction_multi_query,
        }


def phi_distribution(selection: OracleSelection | Mapping[str, int]) -> PhiDistribution:
    stars = selection.phi_star if isinstance(selection, OracleSelection) else selection
    if not stars:
        raise ValueError("empty selection")
    hist: dict[int, int] = {}
    for v in stars.values():
        hist[v] = hist.get(v, 0) + 1
    return PhiDistribution(dict(sorted(hist.items())), sum(stars.values()) / len(stars), len(stars))


def split_groups(
    report: MetricReport,
    selection: OracleSelection | None = None,
    flags: Mapping[str, bool] | None = None,
) -> dict[str, dict]:
    """Per-group metric means: ``easy``/``complex`` by phi* or
    ``topic_shift``/``no_topic_shift`` by flag. Empty groups are omitted."""
    if (selection is None) == (flags is None):
        raise ValueError("give exactly one of selection or flags")
    if selection is not None:
        group_of = {t: ("easy" if p == 1 else "complex") for t, p in selection.phi_star.items()}
    else:
        group_of = {t: ("topic_shift" if f else "no_topic_shift") for t, f in flags.items()}
    out: dict[str, dict] = {}
    for name in sorted(set(group_of.values())):
        members = {t for t, g in group_of.items() if g == name}
        means, counts = {}, {}
        for m in report.metrics:
            vals = [v for t, v in report.per_turn[m].items() if t in members]
            counts[m] = len(vals)
            means[m] = _mean(vals)
        if any(counts.values()):
            out[name] = {"n": counts, "mean": means}
    return out


# -- significance -----------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float


def paired_t_test(a: Mapping[str, float] | Sequence[float], b: Mapping[str, float] | Sequence[float]) -> TTestResult:
    """Two-sided paired Student t-test on per-turn scores."""
    if isinstance(a, Mapping) or isinstance(b, Mapping):
        if not (isinstance(a, Mapping) and isinstance(b, Mapping)) or set(a) != set(b):
            raise ValueError("paired test needs the same turn keys on both sides")
        keys = sorted(a, key=natural_key)
        xs, ys = [a[k] for k in keys], [b[k] for k in keys]
    else:
        if len(a) != len(b):
            raise ValueError("paired test needs equal-length inputs")
        xs, ys = list(a), list(b)
    n = len(xs)
    if n < 2:
        raise ValueError("paired test needs at least 2 pairs")
    diffs = [x - y for x, y in zip(xs, ys)]
    mean = sum(diffs) / n
    df = n - 1
    # rounding noise in x - y must not turn a constant difference into a finite t
    scale = max(1.0, max(abs(d) for d in diffs))
    if max(diffs) - min(diffs) <= 1e-12 * scale:
        if abs(mean) <= 1e-12 * scale:
            return TTestResult(0.0, df, 1.0)
        return TTestResult(math.copysign(math.inf, mean), df, 0.0)
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    t = mean / math.sqrt(var / n)
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(t, df, p)
