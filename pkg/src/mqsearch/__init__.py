"""Multi-aspect query generation, BM25 retrieval, rank fusion and evaluation
for conversational passage search."""

from .conversation import (
    ContextView,
    Conversation,
    PtkbStatement,
    Turn,
    context_at,
    load_dataset,
    render_context,
    turn_key,
)
from .corpus import (
    InvertedIndex,
    Passage,
    PassageCollection,
    RankedList,
    bm25_score,
    build_index,
    ingest_collection,
    retrieve,
    score_all,
    tokenize,
)
from .evaluation import (
    MetricReport,
    OracleSelection,
    QrelSet,
    RunFile,
    evaluate,
    load_qrels,
    load_run,
    mean_average_precision,
    mrr,
    ndcg_at_k,
    oracle_select,
    paired_t_test,
    phi_distribution,
    recall_at_k,
    split_groups,
    write_run,
)
from .fusion import FusedList, answer_rerank_fuse, interleave
from .llm import LlmClient, LlmConfig, QuerySet, ScriptedLlm, generate_answer, generate_queries, parse_query_lines
from .pipeline import PipelineConfig, StageTimings, process_turn, run_turn, time_stages
from .prompts import TEMPLATES, PromptTemplate, render_prompt
from .rerank import Reranker, RerankerContract, rerank

__version__ = "0.1.0"
