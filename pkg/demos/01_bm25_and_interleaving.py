"""
Lexical retrieval and round-robin fusion
========================================

Index the bundled 30-passage collection, run two queries that look at
different sides of one question, and merge their rankings.
"""

from importlib import resources
from pathlib import Path

import numpy as np

from mqsearch import build_index, ingest_collection, interleave, retrieve, score_all, tokenize

toy = Path(str(resources.files("mqsearch") / "data" / "toy"))
collection = ingest_collection(toy / "passages.jsonl")
index = build_index(collection)
print(f"{index.num_docs} passages, {len(index.postings)} terms, avg length {index.avg_doc_length:.1f}")

# The analyzer lowercases, splits on anything that is not a letter or digit and
# applies the Porter stemmer. Stopwords stay in.
print(tokenize("How much do the panels cost to install?"))

# Scores for every passage at once; retrieve() keeps the positive ones in
# score order, breaking ties by passage id.
scores = score_all(index, tokenize("solar panel cost"))
print("passages with a positive score:", int(np.count_nonzero(scores)))

cost = retrieve(index, "solar panel installation cost", 5)
subsidy = retrieve(index, "subsidy for solar panels and heat pumps", 5)
for ranked in (cost, subsidy):
    print(ranked.query_label)
    for pid, score in ranked.entries:
        print(f"  {pid}  {score:.3f}")

# Interleaving takes rank 1 of every list, then rank 2, and so on, keeping
# the first occurrence of each passage. Fused scores are just 1/rank.
fused = interleave([cost, subsidy], limit=8)
for (pid, score), (q, r) in zip(fused.entries, fused.provenance):
    print(f"{pid}  {score:.3f}  from query {q + 1} at rank {r}")
