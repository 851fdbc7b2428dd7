import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mqsearch.corpus import RankedList
from mqsearch.fusion import answer_rerank_fuse, interleave
from mqsearch.rerank import Reranker, RerankerContract

from oracles import interleave_brute


def rl(ids, label="q"):
    return RankedList(label, tuple((d, float(len(ids) - k)) for k, d in enumerate(ids)))


# A duplicate advances that list's cursor. The other reading, re-drawing from the
# same list until something new turns up, would give [A, B, C, D] here (round 2
# draws C for the first list); it is not implemented.
def test_golden_overlap():
    assert interleave([rl("ABC"), rl("BD")], 10).ids == list("ABDC")


def test_golden_unequal():
    assert interleave([rl("A"), rl("BCD")], 10).ids == list("ABCD")


def test_single_list_identity():
    fused = interleave([rl("CAB")], 10)
    assert fused.ids == list("CAB")
    assert [s for _, s in fused.entries] == [1.0, 0.5, 1 / 3]


def test_limit_and_provenance():
    fused = interleave([rl("ABC"), rl("BD")], 3, "t1")
    assert fused.ids == list("ABD")
    assert fused.provenance == ((0, 1), (1, 1), (1, 2))
    assert fused.turn_key == "t1"


def test_empty_lists():
    assert len(interleave([rl(""), rl("")], 5)) == 0
    with pytest.raises(ValueError):
        interleave([], 5)
    with pytest.raises(ValueError):
        interleave([rl("A")], 0)


lists_st = st.lists(
    st.lists(st.sampled_from([f"d{i}" for i in range(30)]), max_size=20, unique=True), min_size=1, max_size=5
)


@settings(max_examples=300)
@given(lists_st, st.integers(1, 120))
def test_matches_reference(lists, limit):
    fused = interleave([rl(l) for l in lists], limit)
    assert fused.ids == interleave_brute(lists, limit)
    scores = [s for _, s in fused.entries]
    assert all(a > b for a, b in zip(scores, scores[1:]))
    for pid, (q, r) in zip(fused.ids, fused.provenance):
        assert lists[q][r - 1] == pid


def texts_for(ids, hit=None):
    return {d: ("answer words here" if d == hit else f"unrelated {d}") for d in ids}


def test_answer_rerank_passthrough_equals_interleave():
    lists = [rl("ABC"), rl("BD")]
    fused = answer_rerank_fuse(lists, "ans", Reranker(RerankerContract()), {}, 3)
    assert fused.entries == interleave(lists, 3).entries
    assert fused.stages == ("interleave", "rerank:passthrough")


def test_answer_rerank_lexical():
    lists = [rl("ABC"), rl("BD")]
    fused = answer_rerank_fuse(
        lists, "answer words", Reranker(RerankerContract(kind="lexical")), texts_for("ABCD", hit="D"), 10, "t"
    )
    assert fused.ids[0] == "D"
    assert sorted(fused.ids) == list("ABCD")
    # ties keep interleaved order; provenance follows each passage
    assert fused.ids[1:] == ["A", "B", "C"]
    assert fused.provenance[0] == (1, 2)
    assert fused.stages == ("interleave", "rerank:lexical")


def test_answer_rerank_truncates_before_rerank():
    lists = [rl("ABC"), rl("DEF")]
    fused = answer_rerank_fuse(
        lists, "answer words", Reranker(RerankerContract(kind="lexical")), texts_for("ABCDEF", hit="F"), 4
    )
    assert "F" not in fused.ids and len(fused) == 4


def test_answer_rerank_needs_answer():
    with pytest.raises(ValueError):
        answer_rerank_fuse([rl("A")], "  ", Reranker(RerankerContract()), {}, 3)
