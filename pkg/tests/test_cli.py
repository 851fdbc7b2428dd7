import json

import pytest

from mqsearch.cli import (
    WorkflowError,
    cmd_eval,
    cmd_export,
    cmd_generate,
    cmd_index,
    cmd_run,
    cmd_sweep,
    load_config,
    main,
)
from mqsearch.evaluation import load_run
from mqsearch.llm import LlmClient, LlmConfig, ScriptedLlm, ScriptedReply

from conftest import TOY

# timing logs and manifests carry wall-clock values; everything else must repeat exactly
DETERMINISTIC = ("runs/*.run", "reports/*", "queries/*.jsonl", "masq_*.jsonl")


def toy_cfg(out, **overrides):
    return load_config(TOY / "config.ini", {"paths.output": str(out), **overrides})


def manifest(path):
    return json.loads(path.with_name(path.name + ".manifest.json").read_text())


@pytest.fixture(scope="module")
def swept(tmp_path_factory):
    base = tmp_path_factory.mktemp("sweep")
    results = [cmd_sweep(toy_cfg(base / name)) for name in ("a", "b")]
    return base, results


def test_sweep_artifacts(swept):
    base, (res, _) = swept
    out = base / "a"
    expected = [f"mq4cs_phi{k}.run" for k in range(1, 6)] + ["mq4cs_oracle.run"]
    assert sorted(p.name for p in (out / "runs").glob("*.run")) == sorted(expected)
    assert len(list((out / "reports").glob("mq4cs_phi*.json"))) == 5
    assert (out / "reports" / "mq4cs_oracle.json").exists()
    assert (out / "reports" / "mq4cs_oracle_selection.json").exists()
    assert (out / "config.resolved.ini").exists()
    for run in (out / "runs").glob("*.run"):
        load_run(run)
        m = manifest(run)
        assert len(m["config_sha256"]) == 64 and m["created_utc"]


def test_sweep_is_byte_identical(swept):
    base, _ = swept
    a, b = base / "a", base / "b"
    files = sorted(p.relative_to(a) for pattern in DETERMINISTIC for p in a.glob(pattern))
    assert len(files) > 20
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_oracle_report_contents(swept):
    base, (res, _) = swept
    data = json.loads((base / "a" / "reports" / "mq4cs_oracle.json").read_text())
    oracle = data["aggregate"]["ndcg@3"]
    for agg in data["fixed_phi_aggregate"].values():
        assert oracle >= agg["ndcg@3"]
    assert data["phi_distribution"]["n"] == 7
    assert set(data["complexity_groups"]) <= {"easy", "complex"}
    assert set(data["topic_shift_groups"]) == {"topic_shift", "no_topic_shift"}


def test_masq_has_phi_star(swept):
    base, _ = swept
    rows = [json.loads(l) for l in (base / "a" / "masq_mq4cs.jsonl").read_text().splitlines()]
    assert len(rows) == 35
    assert all(1 <= r["phi_star"] <= 5 for r in rows)
    assert all(len(r["queries"]) <= r["phi"] for r in rows)


@pytest.mark.parametrize(
    "variant,query_stages,fusion_stages",
    [
        ("mq4cs_ans_rerank", ["bm25"], ["interleave", "rerank:lexical"]),
        ("mq4cs_ans", ["bm25", "rerank:lexical"], ["interleave"]),
        ("mq4cs", ["bm25", "rerank:lexical"], ["interleave"]),
    ],
)
def test_variant_provenance(tmp_path, variant, query_stages, fusion_stages):
    cfg = toy_cfg(tmp_path, **{"pipeline.variant": variant, "pipeline.phi": 3})
    cmd_index(cfg)
    cmd_generate(cfg)
    prov = manifest(cmd_run(cfg))["provenance"]
    assert len(prov) == 7
    for turn in prov.values():
        assert all(stages == query_stages for stages in turn["query_stages"])
        assert turn["fusion_stages"] == fusion_stages


def test_qr_one_query_per_turn(tmp_path):
    cfg = toy_cfg(tmp_path, **{"pipeline.variant": "qr", "pipeline.phi": 4})
    assert cfg.pipeline.phi == 1
    cmd_index(cfg)
    cmd_generate(cfg)
    run = cmd_run(cfg)
    assert run.name == "qr_phi1.run"
    assert all(len(t["queries"]) == 1 for t in manifest(run)["provenance"].values())


def test_sweep_rejects_single_query_variant(tmp_path):
    with pytest.raises(WorkflowError):
        cmd_sweep(toy_cfg(tmp_path, **{"pipeline.variant": "aq"}))


def test_eval_on_hand_built_fixture(tmp_path):
    (tmp_path / "q.txt").write_text("t 0 a 3\nt 0 c 1\n")
    (tmp_path / "r.run").write_text("t Q0 a 1 1.0 x\nt Q0 b 2 0.5 x\nt Q0 c 3 0.25 x\n")
    cfg = toy_cfg(tmp_path / "out", **{"paths.qrels": str(tmp_path / "q.txt")})
    report = cmd_eval(cfg, tmp_path / "r.run")
    assert report.aggregates["ndcg@3"] == pytest.approx(0.9640, abs=1e-4)
    assert report.aggregates["map"] == pytest.approx(0.8333, abs=1e-4)
    assert report.aggregates["mrr"] == 1.0
    assert (tmp_path / "out" / "reports" / "r.json").exists()


def test_eval_with_baseline(tmp_path):
    (tmp_path / "q.txt").write_text("t1 0 a 1\nt2 0 a 1\nt3 0 a 1\n")
    (tmp_path / "good.run").write_text("".join(f"t{k} Q0 a 1 1.0 g\n" for k in (1, 2, 3)))
    (tmp_path / "bad.run").write_text("t1 Q0 b 1 1.0 b\nt1 Q0 a 2 0.5 b\nt2 Q0 a 1 1.0 b\nt3 Q0 b 1 1.0 b\nt3 Q0 a 2 0.5 b\n")
    cfg = toy_cfg(tmp_path / "out", **{"paths.qrels": str(tmp_path / "q.txt"), "eval.metrics": "mrr"})
    cmd_eval(cfg, tmp_path / "good.run", tmp_path / "bad.run")
    data = json.loads((tmp_path / "out" / "reports" / "good.json").read_text())
    test = data["paired_t_test"]["tests"]["mrr"]
    assert test["df"] == 2 and 0 < test["p"] < 1


def test_missing_prerequisites(tmp_path):
    cfg = toy_cfg(tmp_path)
    with pytest.raises(WorkflowError, match="index"):
        cmd_run(cfg)
    cmd_index(cfg)
    with pytest.raises(WorkflowError, match="query file"):
        cmd_run(cfg)
    with pytest.raises(WorkflowError, match="run file"):
        cmd_eval(cfg)
    with pytest.raises(WorkflowError, match="no query files"):
        cmd_export(cfg)
    with pytest.raises(WorkflowError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_stale_index_detected(tmp_path):
    cfg = toy_cfg(tmp_path, **{"pipeline.phi": 1})
    cmd_index(cfg)
    cmd_generate(cfg)
    other = tmp_path / "other.jsonl"
    other.write_text('{"id": "x", "contents": "something else"}\n')
    with pytest.raises(WorkflowError, match="different collection"):
        cmd_run(toy_cfg(tmp_path, **{"pipeline.phi": 1, "paths.corpus": str(other)}))


def test_partial_generation_failure(tmp_path):
    rule = ScriptedReply(("# User question: What are the benefits of solar panels?\n",), "1. solar benefits")
    client = LlmClient(LlmConfig(endpoint="http://llm.test/", max_retries=0), transport=ScriptedLlm([rule]).transport())
    cfg = toy_cfg(tmp_path, **{"pipeline.phi": 2})
    out = cmd_generate(cfg, client)
    m = manifest(out)
    assert m["turns_generated"] == 1
    assert len(m["failures"]) == 6
    assert all("422" in f["error"] for f in m["failures"])


def test_main_exit_codes(tmp_path, capsys):
    cfg = str(TOY / "config.ini")
    assert main(["run", "-c", cfg, "--output", str(tmp_path)]) == 2
    assert "missing prerequisite" in capsys.readouterr().err
    assert main(["index", "-c", cfg, "--output", str(tmp_path)]) == 0
    assert main(["generate", "-c", cfg, "--output", str(tmp_path), "--phi", "2", "--no-cache"]) == 0
    assert main(["run", "-c", cfg, "--output", str(tmp_path), "--phi", "2", "--workers", "3"]) == 0
    assert main(["eval", "-c", cfg, "--output", str(tmp_path), "--phi", "2"]) == 0
    assert "ndcg@3" in capsys.readouterr().out
    assert (tmp_path / "runs" / "mq4cs_phi2.run").exists()
    assert main(["oracle", "-c", cfg, "--output", str(tmp_path), "--metric", "mrr"]) == 0
    assert "mean phi*" in capsys.readouterr().out


def test_workers_same_bytes(tmp_path):
    outs = []
    for name, workers in (("w1", 1), ("w4", 4)):
        cfg = toy_cfg(tmp_path / name, **{"pipeline.phi": 3, "run.workers": workers})
        cmd_index(cfg)
        cmd_generate(cfg)
        outs.append(cmd_run(cfg).read_bytes())
    assert outs[0] == outs[1]
