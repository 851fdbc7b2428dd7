"""
Reranking per query or once against the answer
===============================================

Two ways to use the generated answer: rerank each query's list and
interleave, or interleave the raw BM25 lists and rerank the merged list with
the answer as the query.
"""

from importlib import resources
from pathlib import Path

from mqsearch import (
    LlmClient,
    LlmConfig,
    PipelineConfig,
    RerankerContract,
    ScriptedLlm,
    build_index,
    ingest_collection,
    load_dataset,
    process_turn,
)

toy = Path(str(resources.files("mqsearch") / "data" / "toy"))
collection = ingest_collection(toy / "passages.jsonl")
index = build_index(collection)
conv = load_dataset(toy / "conversations.jsonl")[0]
client = LlmClient(
    LlmConfig(endpoint="http://scripted.invalid/", model_name="scripted"),
    transport=ScriptedLlm.from_file(toy / "transcript.json").transport(),
)
lexical = RerankerContract(kind="lexical")

for variant in ("mq4cs_ans", "mq4cs_ans_rerank"):
    result = process_turn(PipelineConfig(variant, 3, reranker=lexical), index, collection, conv, 2, client=client)
    print(variant)
    print("  per-query stages:", [lst.stages for lst in result.lists])
    print("  fusion stages:   ", result.fused.stages)
    print("  top 5:", result.fused.ids[:5])
    print("  ms:", {k: round(v, 2) for k, v in result.timings.as_dict().items()})

client.close()
