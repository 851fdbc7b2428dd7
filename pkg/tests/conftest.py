from importlib import resources
from pathlib import Path

import httpx
import pytest

from mqsearch.corpus import Passage, PassageCollection, build_index
from mqsearch.llm import LlmClient, LlmConfig, ScriptedLlm

TOY = Path(str(resources.files("mqsearch") / "data" / "toy"))


@pytest.fixture
def toy_dir():
    return TOY


@pytest.fixture
def tiny_collection():
    return PassageCollection([Passage("d1", "a b"), Passage("d2", "a a")])


@pytest.fixture
def tiny_index(tiny_collection):
    return build_index(tiny_collection)


def chat_reply(text, status=200):
    return httpx.Response(status, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


@pytest.fixture
def fixed_llm(tmp_path):
    """Client whose endpoint always answers with ``state['reply']``."""
    state = {"reply": "1. Q_A\n2. Q_B", "requests": []}

    def handler(request):
        state["requests"].append(request)
        return chat_reply(state["reply"])

    cfg = LlmConfig(endpoint="http://llm.test/v1/chat/completions", model_name="mock", retry_backoff=0.0)
    client = LlmClient(cfg, transport=httpx.MockTransport(handler))
    yield client, state
    client.close()


@pytest.fixture
def toy_llm():
    scripted = ScriptedLlm.from_file(TOY / "transcript.json")
    cfg = LlmConfig(endpoint="http://llm.test/v1/chat/completions", model_name="scripted", max_retries=0)
    client = LlmClient(cfg, transport=scripted.transport())
    yield client
    client.close()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
