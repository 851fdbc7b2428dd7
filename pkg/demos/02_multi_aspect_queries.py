"""
Asking the model for several queries
====================================

The same utterance rewritten into one to five queries. A scripted transcript
stands in for the chat-completion endpoint, so this runs offline.
"""

from importlib import resources
from pathlib import Path

from mqsearch import LlmClient, LlmConfig, ScriptedLlm, generate_answer, generate_queries, load_dataset
from mqsearch.conversation import context_at, render_context, render_ptkb
from mqsearch.prompts import render_prompt

toy = Path(str(resources.files("mqsearch") / "data" / "toy"))
conv = load_dataset(toy / "conversations.jsonl")[0]
turn = 3
print("utterance:", conv.turn(turn).utterance)

# This is the prompt the model receives for phi=3
prompt = render_prompt(
    "mq4cs",
    ptkb=render_ptkb(conv.ptkb),
    ctx_text=render_context(context_at(conv, turn), "full"),
    utterance=conv.turn(turn).utterance,
    phi=3,
)
print(prompt)

scripted = ScriptedLlm.from_file(toy / "transcript.json")
client = LlmClient(LlmConfig(endpoint="http://scripted.invalid/", model_name="scripted"), transport=scripted.transport())

for phi in range(1, 6):
    qs = generate_queries(client, conv, turn, phi, "mq4cs")
    print(f"phi={phi}: {list(qs.queries)}")

# The answer-first variant: the model answers, then lists queries that would
# retrieve that answer.
answer = generate_answer(client, conv, turn)
print("answer:", answer)
qs = generate_queries(client, conv, turn, 3, "mq4cs_ans", answer=answer)
print("queries from the answer:", list(qs.queries))

# A query rewrite gives one query no matter how many lines come back
print("rewrite:", generate_queries(client, conv, turn, 5, "qr").queries)
client.close()
