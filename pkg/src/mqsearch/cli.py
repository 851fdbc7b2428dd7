"""Command-line workflow: index, generate, run, eval, oracle, sweep, export.

All commands read one INI config file (see ``README.md`` for the keys);
relative paths in it resolve against the config file's directory.
Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .conversation import Conversation, load_dataset, turn_key
from .corpus import DEFAULT_B, DEFAULT_K1, InvertedIndex, build_index, ingest_collection
from .evaluation import (
    DEFAULT_METRICS,
    MetricReport,
    RunFile,
    evaluate,
    load_qrels,
    load_run,
    natural_key,
    oracle_select,
    paired_t_test,
    phi_distribution,
    split_groups,
    write_run,
    write_run_file,
)
from .llm import LlmClient, LlmConfig, QuerySet, ScriptedLlm, read_masq, write_masq
from .pipeline import PipelineConfig, make_query_set, process_turn
from .rerank import Reranker, RerankerContract

log = logging.getLogger("mqsearch")

PHI_VALUES = (1, 2, 3, 4, 5)


class WorkflowError(RuntimeError):
    """A command cannot proceed; the message names what is missing or wrong."""


@dataclass
class ExperimentConfig:
    base_dir: Path
    corpus: Path | None
    corpus_format: str | None
    dataset: Path | None
    qrels: Path | None
    index: Path | None
    output: Path
    pipeline: PipelineConfig
    llm: LlmConfig
    transcript: Path | None = None
    metrics: tuple[str, ...] = DEFAULT_METRICS
    relevance_threshold: int = 1
    oracle_metric: str = "ndcg@3"
    workers: int = 1
    cache: bool = True
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    resolved_text: str = field(default="", repr=False)

    @property
    def index_dir(self) -> Path:
        return self.index if self.index is not None else self.output / "index"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text.encode("utf-8")).hexdigest()

    def with_phi(self, phi: int) -> "ExperimentConfig":
        return dataclasses.replace(self, pipeline=dataclasses.replace(self.pipeline, phi=phi))

    # artifact locations
    def queries_path(self, phi: int | None = None) -> Path:
        return self.output / "queries" / f"{self._stem(phi)}.jsonl"

    def run_path(self, phi: int | None = None) -> Path:
        return self.output / "runs" / f"{self._stem(phi)}.run"

    def report_path(self, phi: int | None = None, suffix: str = ".json") -> Path:
        return self.output / "reports" / f"{self._stem(phi)}{suffix}"

    def oracle_stem(self) -> str:
        return f"{self.pipeline.variant}_oracle"

    def _stem(self, phi: int | None) -> str:
        phi = self.pipeline.phi if phi is None else phi
        return f"{self.pipeline.variant}_phi{phi}"


def _opt(section, key, cast=str, default=None):
    raw = section.get(key, fallback="").strip() if section is not None else ""
    if raw == "":
        return default
    if cast is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    return cast(raw)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI experiment config; ``overrides`` are ``{"section.key": value}``."""
    path = Path(path)
    if not path.exists():
        raise WorkflowError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path, encoding="utf-8")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        sec, key = dotted.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, str(value))

    base = path.parent.resolve()

    def p(sec, key, default=None):
        v = _opt(cp[sec] if cp.has_section(sec) else None, key, default=default)
        return None if v is None else (base / v).resolve()

    def s(sec):
        return cp[sec] if cp.has_section(sec) else None

    reranker = RerankerContract(
        kind=_opt(s("reranker"), "kind", default="lexical"),
        endpoint=_opt(s("reranker"), "endpoint"),
        max_text_length=_opt(s("reranker"), "max_text_length", int, 512),
        batch_size=_opt(s("reranker"), "batch_size", int, 32),
    )
    pipeline = PipelineConfig(
        variant=_opt(s("pipeline"), "variant", default="mq4cs"),
        phi=_opt(s("pipeline"), "phi", int, 5),
        first_stage_depth=_opt(s("pipeline"), "first_stage_depth", int, 1000),
        rerank_depth=_opt(s("pipeline"), "rerank_depth", int, 1000),
        fusion_limit=_opt(s("pipeline"), "fusion_limit", int, 1000),
        reranker=reranker,
    )
    cache_dir = p("llm", "cache_dir")
    llm = LlmConfig(
        endpoint=_opt(s("llm"), "endpoint", default=LlmConfig.endpoint),
        model_name=_opt(s("llm"), "model", default=LlmConfig.model_name),
        temperature=_opt(s("llm"), "temperature", float),
        top_p=_opt(s("llm"), "top_p", float),
        top_k=_opt(s("llm"), "top_k", int),
        timeout=_opt(s("llm"), "timeout", float, 60.0),
        max_retries=_opt(s("llm"), "max_retries", int, 3),
        retry_backoff=_opt(s("llm"), "retry_backoff", float, 1.0),
        cache_dir=None if cache_dir is None else str(cache_dir),
        fewshot=_opt(s("llm"), "fewshot", bool, False),
        context_style=_opt(s("llm"), "context_style"),
        api_key_env=_opt(s("llm"), "api_key_env", default="OPENAI_API_KEY"),
    )
    metrics = _opt(s("eval"), "metrics")
    cfg = ExperimentConfig(
        base_dir=base,
        corpus=p("paths", "corpus"),
        corpus_format=_opt(s("paths"), "corpus_format"),
        dataset=p("paths", "dataset"),
        qrels=p("paths", "qrels"),
        index=p("paths", "index"),
        output=p("paths", "output", "out"),
        pipeline=pipeline,
        llm=llm,
        transcript=p("llm", "transcript"),
        metrics=tuple(m.strip() for m in metrics.split(",")) if metrics else DEFAULT_METRICS,
        relevance_threshold=_opt(s("eval"), "relevance_threshold", int, 1),
        oracle_metric=_opt(s("eval"), "oracle_metric", default="ndcg@3"),
        workers=_opt(s("run"), "workers", int, 1),
        cache=_opt(s("run"), "cache", bool, True),
        k1=_opt(s("bm25"), "k1", float, DEFAULT_K1),
        b=_opt(s("bm25"), "b", float, DEFAULT_B),
    )
    buf = io.StringIO()
    cp.write(buf)
    cfg.resolved_text = buf.getvalue()
    return cfg


# -- helpers ----------------------------------------------------------------


def _require(path: Path | None, what: str, hint: str = "") -> Path:
    if path is None or not path.exists():
        msg = f"missing prerequisite: {what}" + (f" ({path})" if path else " (not configured)")
        raise WorkflowError(msg + (f"; {hint}" if hint else ""))
    return path


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _write_json(path: Path, obj) -> None:
    _atomic_text(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def _write_manifest(cfg: ExperimentConfig, artifact: Path, **extra) -> None:
    manifest = {
        "artifact": artifact.name,
        "config_sha256": cfg.config_hash,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        **extra,
    }
    _write_json(artifact.with_name(artifact.name + ".manifest.json"), manifest)


def _save_resolved_config(cfg: ExperimentConfig) -> None:
    _atomic_text(cfg.output / "config.resolved.ini", cfg.resolved_text)


def _make_llm_client(cfg: ExperimentConfig) -> LlmClient:
    transport = ScriptedLlm.from_file(cfg.transcript).transport() if cfg.transcript else None
    return LlmClient(cfg.llm, transport=transport, use_cache=cfg.cache)


def _turns(convs: list[Conversation]):
    for conv in convs:
        for i in range(1, len(conv.turns) + 1):
            yield conv, i


def _parallel(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- commands ---------------------------------------------------------------


def cmd_index(cfg: ExperimentConfig) -> InvertedIndex:
    corpus = _require(cfg.corpus, "passage collection [paths] corpus")
    collection = ingest_collection(corpus, cfg.corpus_format)
    log.info("ingested %d passages from %s", len(collection), corpus)
    index = build_index(collection, k1=cfg.k1, b=cfg.b)
    index.save(cfg.index_dir)
    return index


def cmd_generate(cfg: ExperimentConfig, client: LlmClient | None = None) -> Path:
    """Generate query sets for every turn; failed turns are recorded and skipped."""
    dataset = _require(cfg.dataset, "dataset [paths] dataset")
    convs = load_dataset(dataset)
    own_client = client is None
    client = client or _make_llm_client(cfg)
    try:
        def one(item):
            conv, i = item
            try:
                return make_query_set(cfg.pipeline, client, conv, i), None
            except Exception as e:
                return None, {"turn": conv.turn_key(i), "error": str(e)}

        results = _parallel(one, list(_turns(convs)), cfg.workers)
    finally:
        if own_client:
            client.close()
    sets = [qs for qs, _ in results if qs is not None]
    failures = [f for _, f in results if f is not None]
    for f in failures:
        log.warning("generation failed for %s: %s", f["turn"], f["error"])
    if not sets:
        raise WorkflowError(f"query generation failed for every turn ({len(failures)} failures)")
    out = cfg.queries_path()
    write_masq(sets, out)
    _save_resolved_config(cfg)
    _write_manifest(
        cfg,
        out,
        variant=cfg.pipeline.variant,
        phi=cfg.pipeline.phi,
        model=cfg.llm.model_name,
        sampling=cfg.llm.sampling_params(),
        fewshot=cfg.llm.fewshot,
        context_style=cfg.llm.context_style or ("last_response_only" if cfg.llm.fewshot else "full"),
        turns_generated=len(sets),
        failures=failures,
    )
    return out


def cmd_run(cfg: ExperimentConfig) -> Path:
    """Retrieve, rerank and fuse for every generated query set; writes one run file."""
    index_file = _require(cfg.index_dir / "index.bin", "index", "run `mqsearch index` first")
    queries = _require(cfg.queries_path(), "query file", "run `mqsearch generate` first")
    corpus = _require(cfg.corpus, "passage collection [paths] corpus")
    dataset = _require(cfg.dataset, "dataset [paths] dataset")
    index = InvertedIndex.load(index_file.parent)
    collection = ingest_collection(corpus, cfg.corpus_format)
    if index.corpus_checksum != collection.checksum():
        raise WorkflowError("index was built from a different collection; rebuild it with `mqsearch index`")
    convs = {c.conv_id: c for c in load_dataset(dataset)}
    query_sets = read_masq(queries)

    def position(qs: QuerySet):
        conv = convs.get(qs.conv_id)
        if conv is None:
            raise WorkflowError(f"query file names unknown conversation {qs.conv_id!r}")
        for i, t in enumerate(conv.turns, 1):
            if t.turn_id == qs.turn_id:
                return conv, i
        raise WorkflowError(f"query file names unknown turn {qs.conv_id}/{qs.turn_id}")

    reranker = Reranker(cfg.pipeline.reranker)
    try:
        def one(qs):
            conv, i = position(qs)
            return process_turn(cfg.pipeline, index, collection, conv, i, query_set=qs, reranker=reranker)

        results = _parallel(one, query_sets, cfg.workers)
    finally:
        reranker.close()

    out = cfg.run_path()
    write_run([r.fused for r in results], out.stem, out)
    timing_lines = [
        json.dumps({"turn": r.fused.turn_key, **r.timings.as_dict()}) for r in results
    ]
    _atomic_text(out.with_suffix(".timings.jsonl"), "".join(line + "\n" for line in timing_lines))
    provenance = {
        r.fused.turn_key: {
            "queries": list(r.query_set.queries),
            "query_stages": [list(lst.stages) for lst in r.lists],
            "fusion_stages": list(r.fused.stages),
        }
        for r in results
    }
    totals = {k: sum(r.timings.as_dict()[k] for r in results) for k in results[0].timings.as_dict()} if results else {}
    _save_resolved_config(cfg)
    _write_manifest(
        cfg,
        out,
        variant=cfg.pipeline.variant,
        phi=cfg.pipeline.phi,
        reranker=cfg.pipeline.reranker.kind,
        first_stage_depth=cfg.pipeline.first_stage_depth,
        fusion_limit=cfg.pipeline.fusion_limit,
        stage_timings_ms=totals,
        provenance=provenance,
    )
    return out


def _write_report(report: MetricReport, json_path: Path, extra: dict | None = None) -> None:
    data = report.to_dict()
    if extra:
        data.update(extra)
    _write_json(json_path, data)
    _atomic_text(json_path.with_suffix(".txt"), report.to_text())


def cmd_eval(cfg: ExperimentConfig, run_path: Path | None = None, baseline: Path | None = None) -> MetricReport:
    qrels_path = _require(cfg.qrels, "qrels [paths] qrels")
    run_path = _require(run_path or cfg.run_path(), "run file", "run `mqsearch run` first")
    qrels = load_qrels(qrels_path, cfg.relevance_threshold)
    run = load_run(run_path)
    report = evaluate(run, qrels, cfg.metrics)
    extra = {}
    if baseline is not None:
        other = evaluate(load_run(_require(baseline, "baseline run")), qrels, cfg.metrics)
        tests = {}
        for m in cfg.metrics:
            common = sorted(set(report.per_turn[m]) & set(other.per_turn[m]), key=natural_key)
            if len(common) < 2:
                continue
            r = paired_t_test({t: report.per_turn[m][t] for t in common}, {t: other.per_turn[m][t] for t in common})
            tests[m] = {"t": r.t, "df": r.df, "p": r.p, "significant_p05": r.p < 0.05}
        extra["paired_t_test"] = {"baseline": other.tag, "tests": tests}
    out = cfg.output / "reports" / f"{run_path.stem}.json"
    _write_report(report, out, extra)
    return report


def cmd_oracle(cfg: ExperimentConfig, phis=PHI_VALUES) -> dict:
    """Per-turn best phi over the available fixed-phi runs."""
    qrels = load_qrels(_require(cfg.qrels, "qrels [paths] qrels"), cfg.relevance_threshold)
    runs = {phi: load_run(cfg.run_path(phi)) for phi in phis if cfg.run_path(phi).exists()}
    if not runs:
        raise WorkflowError(f"missing prerequisite: no runs for variant {cfg.pipeline.variant} (run `mqsearch sweep`)")
    selection, oracle_run = oracle_select(runs, qrels, cfg.oracle_metric, tag=cfg.oracle_stem())
    run_out = cfg.output / "runs" / f"{cfg.oracle_stem()}.run"
    write_run_file(oracle_run, run_out)
    report = evaluate(oracle_run, qrels, cfg.metrics)

    fixed = {phi: evaluate(run, qrels, cfg.metrics).aggregates for phi, run in sorted(runs.items())}
    extra = {
        "oracle_metric": cfg.oracle_metric,
        "phi_runs": sorted(runs),
        "fixed_phi_aggregate": {str(phi): agg for phi, agg in fixed.items()},
        "phi_distribution": phi_distribution(selection).to_dict(),
        "complexity_groups": split_groups(report, selection=selection),
    }
    if cfg.dataset and cfg.dataset.exists():
        flags = {
            turn_key(c.conv_id, t.turn_id): t.topic_shift
            for c in load_dataset(cfg.dataset)
            for t in c.turns
            if t.topic_shift is not None
        }
        if flags:
            extra["topic_shift_groups"] = split_groups(report, flags=flags)
    report_out = cfg.output / "reports" / f"{cfg.oracle_stem()}.json"
    _write_report(report, report_out, extra)
    _write_json(cfg.output / "reports" / f"{cfg.oracle_stem()}_selection.json", selection.to_dict())
    _save_resolved_config(cfg)
    _write_manifest(cfg, run_out, oracle_metric=cfg.oracle_metric, phi_runs=sorted(runs))
    return {"selection": selection, "report": report, "run": run_out}


def cmd_export(cfg: ExperimentConfig, phis=PHI_VALUES) -> Path:
    """Merge per-phi query files into one MASQ file, with phi* when an oracle selection exists."""
    sets = []
    for phi in phis:
        path = cfg.queries_path(phi)
        if path.exists():
            sets.extend(read_masq(path))
    if not sets:
        raise WorkflowError("missing prerequisite: no query files to export (run `mqsearch generate`)")
    sel_path = cfg.output / "reports" / f"{cfg.oracle_stem()}_selection.json"
    phi_star = None
    if sel_path.exists():
        turns = json.loads(sel_path.read_text(encoding="utf-8"))["turns"]
        phi_star = {t: v["phi_star"] for t, v in turns.items()}
    sets.sort(key=lambda q: (natural_key(q.conv_id), natural_key(q.turn_id), q.phi))
    out = cfg.output / f"masq_{cfg.pipeline.variant}.jsonl"
    write_masq(sets, out, phi_star)
    return out


def cmd_sweep(cfg: ExperimentConfig, phis=PHI_VALUES) -> dict:
    """generate + run + eval for each phi, then the oracle and the MASQ export."""
    if cfg.pipeline.variant in ("qr", "aq"):
        raise WorkflowError(f"sweep needs a multi-query variant, not {cfg.pipeline.variant}")
    if not (cfg.index_dir / "index.bin").exists():
        cmd_index(cfg)
    client = _make_llm_client(cfg)
    reports = {}
    try:
        for phi in phis:
            sub = cfg.with_phi(phi)
            cmd_generate(sub, client)
            cmd_run(sub)
            reports[phi] = cmd_eval(sub)
    finally:
        client.close()
    oracle = cmd_oracle(cfg, phis)
    masq = cmd_export(cfg, phis)
    return {"reports": reports, "oracle": oracle, "masq": masq}


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqsearch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", "-c", required=True, help="experiment config (INI)")
        sp.add_argument("--phi", type=int, help="override [pipeline] phi")
        sp.add_argument("--variant", help="override [pipeline] variant")
        sp.add_argument("--metric", help="override [eval] oracle_metric")
        sp.add_argument("--workers", type=int, help="override [run] workers")
        sp.add_argument("--no-cache", action="store_true", help="bypass the LLM completion cache")
        sp.add_argument("--output", help="override [paths] output")
        return sp

    add("index", "build the BM25 index")
    add("generate", "generate queries for every turn")
    add("run", "retrieve, rerank and fuse; write a run file")
    ev = add("eval", "evaluate a run file against qrels")
    ev.add_argument("--run", help="run file (default: the configured variant/phi run)")
    ev.add_argument("--baseline", help="second run for paired t-tests")
    add("oracle", "oracle phi selection over phi=1..5 runs")
    add("sweep", "generate/run/eval for phi=1..5, then oracle and export")
    add("export", "write the MASQ query file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {
        "pipeline.phi": args.phi,
        "pipeline.variant": args.variant,
        "eval.oracle_metric": args.metric,
        "run.workers": args.workers,
        "run.cache": "false" if args.no_cache else None,
    }
    try:
        cfg = load_config(args.config, overrides)
        if args.output:
            cfg.output = Path(args.output).resolve()
        if args.command == "index":
            index = cmd_index(cfg)
            print(f"indexed {index.num_docs} passages -> {cfg.index_dir}")
        elif args.command == "generate":
            print(cmd_generate(cfg))
        elif args.command == "run":
            print(cmd_run(cfg))
        elif args.command == "eval":
            report = cmd_eval(
                cfg,
                Path(args.run).resolve() if args.run else None,
                Path(args.baseline).resolve() if args.baseline else None,
            )
            sys.stdout.write(report.to_text())
        elif args.command == "oracle":
            res = cmd_oracle(cfg)
            sys.stdout.write(res["report"].to_text())
            dist = phi_distribution(res["selection"])
            print(f"mean phi* = {dist.mean:.3f}  histogram = {dist.histogram}")
        elif args.command == "sweep":
            res = cmd_sweep(cfg)
            for phi, rep in res["reports"].items():
                sys.stdout.write(f"[phi={phi}] " + rep.to_text())
            sys.stdout.write("[oracle] " + res["oracle"]["report"].to_text())
        elif args.command == "export":
            print(cmd_export(cfg))
    except (RuntimeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
