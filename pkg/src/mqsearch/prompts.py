"""Prompt templates for answer generation, query rewriting and multi-aspect query generation.

Bodies use the placeholders ``{ptkb}``, ``{ctx}``, ``{utterance}``, ``{phi}``
and ``{response}``; nothing else in a body is interpreted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

PLACEHOLDERS = ("ptkb", "ctx", "utterance", "phi", "response")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")

_ANSWER = """\
# Instruction:
I will give you a conversation between a user and a system. Also, I will give you some background information about the user. You should answer the last question of the user. Please remember that your answer to the last question of the user shouldn't be more than 200 words.

# Background knowledge: {ptkb}
# Context: {ctx}
# User question: {utterance}
# Response:
"""

_ANSWER_QUERIES = """\
# Can you generate the unique queries that can be used for retrieving your previous answer to the user? (Please write each query in one line and don't generate more than {phi} queries)

# Generated queries:
"""

_QR = """\
# Instruction:
I will give you a conversation between a user and a system. Also, I will give you some background information about the user. You should rewrite the last question of the user into a self-contained query.

# Background knowledge: {ptkb}
# Context: {ctx}
# Please rewrite the following user question: {utterance}
# Re-written query:
"""

_MQ = """\
# Instruction:
I will give you a conversation between a user and a system and some background information about the user. Imagine you want to find the answer to the last user question by searching Google. You should generate the unique search queries that you need to search in Google. Please don't generate more than {phi} queries and write each query in one line.

# Background knowledge: {ptkb}
# Context: {ctx}
# User question: {utterance}

# Generated queries:
"""

_MQ_ANS_FEWSHOT = """\
# Instruction:
Generate the unique queries to search them in a search engine to retrieving the last response of the system to the user. (Please write each query in one line and don't generate more than {phi} queries)

# Example 1
# Background knowledge: 1: My sister is following the 'West Worl', but I don't like it, 2: Johnny Depp made the Pirates of the Caribbean excellent, 3: My friend suggested to me the 'Now you see me' movie, ...
# Context:
user: Can you tell me what the Golden Globe Awards is?
user: What is it?
user: Is it different from the Oscars?
user: What is the difference between them?
user: No, I mean Academy Awards and Golden Globe Awards.
user: What else?
system: The Hollywood Foreign Press Association, a group of 93 journalists from around 55 countries, ....
# User question: Did any of my favorite actresses win any of them?
# System response: Yes, both Jennifer Aniston and Lisa Kudrow, who you enjoyed in the Friends series, have won Golden Globe Awards. Jennifer Aniston won the Golden Globe in 2003 for Best Actress in a Television Series – Musical or Comedy for Friends. Lisa Kudrow also won this category in 1998 for the same series. Aniston's performance in The Morning Show also earned her another nomination in 2020. On the other hand, neither of the actresses have won an Academy Award as of yet.
# Generated queries:
1. Has Jennifer Aniston ever won a Golden Globe or an Academy Award?
2. Has Lisa Kudrow ever won a Golden Globe or an Academy Award?
3. List of Golden Globe winners in Best Actress in a Television Series – Musical or Comedy category for 1998 and 2003.
4. Did Jennifer Aniston win any awards for 'The Morning Show'?

---

# Example 2
# Background knowledge: 1: I am diagnosed with diabetes type 2, 2: My husband is a light drinker, 3: We have pasta twice a week! It is my favorite dish,....
# Context:
user: Can you tell me about different types of alcoholic drinks?
user: What is the difference between them?
user: No, the other category.
user: Ok. Can you compare base liquors and the third one?
user: Interesting, but I was mainly looking for ingredients and flavor! FYI, I don't drink myself.
user: How is it different from Liqueurs?
user: Why are their names so similar?
user: How about the percentage of alcohol?
system: Liquor is hard (the hardest) alcohol product made by distillation, often clocking ....
# User question: Which types are suitable for my husband?
# System response: Considering your husband is a light drinker, he might enjoy lower-alcohol content beverages such as wine, beer, or certain liqueurs. Specifically, since he enjoys seafood like salmon, white wine such as chardonnay, pinot grigio, or a light-bodied beer might be a good match. However, always remember to consume alcohol in moderation, and if there are any health concerns, consult with a physician.
# Generated queries:
1. Which alcoholic beverages are suitable for a light drinker who likes salmon?
2. What types of alcohol go well with seafood?
3. What types of alcohol are preferred for people who drink lightly?
4. What alcoholic drinks have lower alcohol content?
5. Recommendations for alcoholic beverages for light drinkers.

---

# Example 3
# Background knowledge: {ptkb}
# Context: {ctx}
# User question: {utterance}
# System response: {response}
# Generated queries:
"""

_MQ_FEWSHOT = """\
# Instruction:
Please generate self-contained unique questions that should be searched in a search engine to answer the user's LAST utterance. (Please write each query in one line and don't generate more than {phi} queries)

# Example 1
# Background knowledge: 1: My sister is following the 'West Worl', but I don't like it, 2: Johnny Depp made the Pirates of the Caribbean excellent, 3: My friend suggested to me the 'Now you see me' movie, it was fantastic, 4: I went on a biking trip last year, 5: I usually like to drink coffee in the morning, 6: I watched the proposal and enjoyed it. Ryan Reynolds is my favorite!, 7: The 'Friends' series was terrific, Jennifer Aniston and Lisa Kudrow were the best stars!

# Context:
user: Can you tell me what the Golden Globe Awards is?
user: What is it?
user: Is it different from the Oscars?
user: What is the difference between them?
user: No, I mean Academy Awards and Golden Globe Awards.
user: What else?
system: The Hollywood Foreign Press Association, a group of 93 journalists from around 55 countries, are the committee for the Globes. On the contrary, the voting body of the Academy Awards; the Academy of Motion Picture Arts and Sciences (AMPAS) consists of 6,000 voting members. The Golden Globes Award recognizes the excellence of artists in both the film and television industry in the United States as well as in other countries. However, Academy Awards only recognize the excellence of artists in their cinematic achievements, primarily in Hollywood or the American film industry. There are 25 categories for Golden Globes; 14 in motion pictures and 11 in television. At present, the Academy Awards has 24 categories. Usually, the Golden Globes ceremony is held in January of each year while the Academy Awards ceremony is held in February of each year.

# User question: Did any of my favorite actresses win any of them?

# Generated queries:

1. Has Jennifer Aniston ever won a Golden Globe or an Academy Award?
2. Has Lisa Kudrow ever won a Golden Globe or an Academy Award?
3. Did Jennifer Aniston win any awards for 'The Morning Show'?
4. List of Golden Globe winners in Best Actress in a Television Series – Musical or Comedy category for 1998 and 2003.

---

# Example 2
# Background knowledge: {ptkb}
# Context: {ctx}
# User question: {utterance}
# Generated queries:
"""


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen = []
        for m in _PLACEHOLDER_RE.finditer(self.body):
            if m.group(1) not in seen:
                seen.append(m.group(1))
        return tuple(seen)


TEMPLATES: dict[str, PromptTemplate] = {
    t.name: t
    for t in (
        PromptTemplate("qr", _QR),
        PromptTemplate("aq_answer", _ANSWER),
        PromptTemplate("mq4cs", _MQ),
        PromptTemplate("mq4cs_ans_stage1", _ANSWER),
        PromptTemplate("mq4cs_ans_stage2", _ANSWER_QUERIES),
        PromptTemplate("mq4cs_fewshot", _MQ_FEWSHOT),
        PromptTemplate("mq4cs_ans_fewshot", _MQ_ANS_FEWSHOT),
    )
}


def get_template(name: str) -> PromptTemplate:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise KeyError(f"unknown prompt template {name!r}") from None


def render_prompt(
    template: PromptTemplate | str,
    ptkb: str | None = None,
    ctx_text: str | None = None,
    utterance: str | None = None,
    phi: int | None = None,
    response: str | None = None,
) -> str:
    """Substitute placeholder values into a template body.

    Raises ``ValueError`` naming the first placeholder the template needs but
    was not given.
    """
    if isinstance(template, str):
        template = get_template(template)
    values = {"ptkb": ptkb, "ctx": ctx_text, "utterance": utterance, "phi": phi, "response": response}
    for name in template.placeholders:
        if values[name] is None:
            raise ValueError(f"template {template.name!r} needs a value for {{{name}}}")
    return _PLACEHOLDER_RE.sub(lambda m: str(values[m.group(1)]), template.body)
