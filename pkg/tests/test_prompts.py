from pathlib import Path

import pytest

from mqsearch.prompts import TEMPLATES, get_template, render_prompt

GOLDEN = Path(__file__).parent / "golden"

SENTINELS = {
    "ptkb": "<<PTKB 1: likes tea>>",
    "ctx": "user: <<U1>>\nsystem: <<R1>>",
    "utterance": "<<UTTERANCE>>",
    "phi": 4,
    "response": "<<RESPONSE>>",
}


def render_golden(name):
    text = (GOLDEN / f"{name}.txt").read_text(encoding="utf-8")
    for key, value in SENTINELS.items():
        text = text.replace("{" + key + "}", str(value))
    return text


def render_with_sentinels(name):
    t = get_template(name)
    return render_prompt(
        t,
        ptkb=SENTINELS["ptkb"],
        ctx_text=SENTINELS["ctx"],
        utterance=SENTINELS["utterance"],
        phi=SENTINELS["phi"],
        response=SENTINELS["response"],
    )


def test_seven_templates():
    assert sorted(TEMPLATES) == sorted(p.stem for p in GOLDEN.glob("*.txt"))
    assert len(TEMPLATES) == 7


@pytest.mark.parametrize("name", sorted(TEMPLATES))
def test_matches_golden(name):
    assert render_with_sentinels(name) == render_golden(name)


@pytest.mark.parametrize("name", ["mq4cs", "mq4cs_fewshot", "mq4cs_ans_fewshot", "mq4cs_ans_stage2"])
def test_phi_clause(name):
    text = render_prompt(name, ptkb="", ctx_text="", utterance="x", phi=5, response="r")
    assert "don't generate more than 5 queries" in text


def test_empty_ptkb():
    text = render_prompt("mq4cs", ptkb="", ctx_text="", utterance="x", phi=2)
    assert "# Background knowledge: \n" in text


def test_missing_placeholder_named():
    with pytest.raises(ValueError, match=r"\{phi\}"):
        render_prompt("mq4cs", ptkb="", ctx_text="", utterance="x")
    with pytest.raises(ValueError, match=r"\{response\}"):
        render_prompt("mq4cs_ans_fewshot", ptkb="", ctx_text="", utterance="x", phi=3)


def test_deterministic():
    a = render_with_sentinels("qr")
    assert a == render_with_sentinels("qr")


def test_placeholder_sets():
    assert get_template("mq4cs_ans_stage2").placeholders == ("phi",)
    assert set(get_template("qr").placeholders) == {"ptkb", "ctx", "utterance"}
    assert "response" in get_template("mq4cs_ans_fewshot").placeholders


def test_unknown_template():
    with pytest.raises(KeyError):
        get_template("nope")


def test_braces_in_values_are_literal():
    text = render_prompt("qr", ptkb="{ctx}", ctx_text="c", utterance="{phi}")
    assert "# Background knowledge: {ctx}" in text
    assert "user question: {phi}" in text
