import math

import pytest
import snowballstemmer
from hypothesis import given, settings
from hypothesis import strategies as st

from mqsearch.corpus import (
    CollectionError,
    InvertedIndex,
    Passage,
    PassageCollection,
    bm25_score,
    build_index,
    ingest_collection,
    retrieve,
    score_all,
    tokenize,
)

from oracles import bm25_brute

_reference_stemmer = snowballstemmer.stemmer("porter")


def reference_tokens(text):
    import re

    return _reference_stemmer.stemWords([t for t in re.split(r"[^0-9a-z]+", text.lower()) if t])


# -- ingestion ---------------------------------------------------------------


def test_jsonl_keeps_file_order(tmp_path):
    f = tmp_path / "c.jsonl"
    f.write_text('{"id":"b","contents":"x"}\n{"id":"a","contents":"y"}\n{"id":"c","text":"z"}\n')
    coll = ingest_collection(f)
    assert [p.id for p in coll] == ["b", "a", "c"]
    assert coll.text("c") == "z"


def test_tsv_line(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("d7\thello world\n")
    assert list(ingest_collection(f)) == [Passage("d7", "hello world")]


def test_empty_file(tmp_path):
    f = tmp_path / "c.jsonl"
    f.write_text("")
    with pytest.raises(CollectionError, match="empty collection"):
        ingest_collection(f)


def test_malformed_line_is_named(tmp_path):
    f = tmp_path / "c.jsonl"
    f.write_text('{"id":"a","contents":"x"}\n{oops\n')
    with pytest.raises(CollectionError, match="line 2"):
        ingest_collection(f)


def test_duplicate_id_is_named(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("a\tx\nb\ty\na\tz\n")
    with pytest.raises(CollectionError, match="'a'"):
        ingest_collection(f)


def test_checksum_tracks_content():
    a = PassageCollection([Passage("d1", "x")])
    b = PassageCollection([Passage("d1", "y")])
    assert a.checksum() != b.checksum()
    assert a.checksum() == PassageCollection([Passage("d1", "x")]).checksum()


# -- analyzer ----------------------------------------------------------------


def test_tokenize_examples():
    assert tokenize("Running, RUNS!") == ["run", "run"]
    assert tokenize("") == []
    assert tokenize("a-b a") == ["a", "b", "a"]


def test_stemmer_agrees_with_reference_on_toy_corpus(toy_dir):
    coll = ingest_collection(toy_dir / "passages.jsonl")
    for p in coll:
        assert tokenize(p.text) == reference_tokens(p.text)


@given(st.text(alphabet=st.sampled_from("abcdeilnorstuy -,.!"), max_size=60))
def test_stemmer_agrees_with_reference(text):
    assert tokenize(text) == reference_tokens(text)


# -- index -------------------------------------------------------------------


def test_index_statistics(tiny_index):
    assert tiny_index.num_docs == 2
    assert tiny_index.doc_freq("a") == 2
    assert tiny_index.doc_freq("b") == 1
    assert tiny_index.avg_doc_length == 2


def test_single_doc_avg_length():
    idx = build_index(PassageCollection([Passage("x", "one two three")]))
    assert idx.avg_doc_length == 3


def test_rebuild_is_byte_identical(toy_dir, tmp_path):
    coll = ingest_collection(toy_dir / "passages.jsonl")
    build_index(coll).save(tmp_path / "a")
    build_index(coll).save(tmp_path / "b")
    for name in ("index.bin", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_save_load_round_trip(toy_dir, tmp_path):
    coll = ingest_collection(toy_dir / "passages.jsonl")
    idx = build_index(coll)
    idx.save(tmp_path)
    back = InvertedIndex.load(tmp_path)
    assert back.to_bytes() == idx.to_bytes()
    assert retrieve(back, "solar panel cost", 10) == retrieve(idx, "solar panel cost", 10)


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "index.bin").write_bytes(b"not an index")
    with pytest.raises(ValueError):
        InvertedIndex.load(tmp_path)


# -- scoring -----------------------------------------------------------------


def test_hand_evaluated_score(tiny_index):
    expected = math.log(1.2) * 2 / 2.9
    assert bm25_score(tiny_index, ["a"], 1) == pytest.approx(0.1257, abs=1e-4)
    assert bm25_score(tiny_index, ["a"], 1) == pytest.approx(expected, rel=1e-12)


def test_absent_term_scores_zero(tiny_index):
    assert all(bm25_score(tiny_index, ["zzz"], d) == 0 for d in range(2))
    assert retrieve(tiny_index, "zzz", 5).entries == ()


def test_top1_on_fixture(tiny_index):
    assert retrieve(tiny_index, "a", 1).ids == ["d2"]


def test_empty_query_gives_empty_list(tiny_index):
    assert len(retrieve(tiny_index, "!!", 5)) == 0


def test_k_beyond_matches(tiny_index):
    assert retrieve(tiny_index, "b", 100).ids == ["d1"]


def test_ties_by_id():
    coll = PassageCollection([Passage("z", "cat dog"), Passage("m", "cat dog"), Passage("a", "cat dog")])
    assert retrieve(build_index(coll), "cat", 3).ids == ["a", "m", "z"]


def test_retrieve_labels_and_stages(tiny_index):
    ranked = retrieve(tiny_index, "a", 2, label="t1#q1")
    assert ranked.query_label == "t1#q1"
    assert ranked.stages == ("bm25",)


VOCAB = [f"w{i}" for i in range(8)]


@st.composite
def toy_corpora(draw):
    n = draw(st.integers(1, 50))
    docs = [draw(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=12)) for _ in range(n)]
    query = draw(st.lists(st.sampled_from(VOCAB + ["unseen"]), min_size=1, max_size=5))
    return docs, query


@settings(max_examples=60, deadline=None)
@given(toy_corpora())
def test_scores_match_formula(case):
    docs, query = case
    idx = build_index(PassageCollection([Passage(f"d{i:02d}", " ".join(d)) for i, d in enumerate(docs)]))
    expected = bm25_brute(docs, query)
    got = score_all(idx, query)
    for d in range(len(docs)):
        assert bm25_score(idx, query, d) == pytest.approx(expected[d], rel=1e-12, abs=1e-15)
        assert got[d] == bm25_score(idx, query, d)
