"""Prompt templates and the free-text parsers that read model replies."""
from __future__ import annotations

import json
import re
from typing import Mapping, Optional

GENERATE = "Answer the following question in plain text, without any additional formatting: {prompt}"

DECOMPOSE = (
    "Given context and a paragraph of text, deconstruct the text into the smallest possible "
    "standalone and self-contained facts without semantic repetition. Each fact should come from "
    "the text and must be related to the context.\n\n"
    "<Context>{context}</Context>\n"
    "<Text>{text}</Text>\n"
    "Return ONLY a list of facts, with no additional text."
)

QUESTION = (
    "Given context and a claim, generate one specific, clear question that has its answer "
    "contained in the claim. The generated question must be self-contained and related to the "
    "context.\nReturn only the question, with no additional text.\n\n"
    "Context: {context}\n"
    "Claim: {claim}"
)

ANSWER = (
    "Answer the following question based on the given context. Format your answer in one "
    "sentence:\n\n"
    "Context: {context}\n"
    "Question: {question}\n\n"
    "Answer: "
)

CONTRADICTION = (
    "You will be given a statement and a context. Please estimate how much of the context "
    "contradicts the statement?\nYour final answer should be a percentage number between 0 and "
    "100, representing the percentage of the context that contradicts the statement.\n\n"
    "<Statement>\n{statement}\n</Statement>\n\n"
    "<Context>\n{context}\n</Context>\n\n"
    "Return your answer as a percentage number ONLY, with no additional text."
)

CORRECTNESS = (
    "Is the following claim correct according to the reference passage? Choose your answer from "
    "<correct/incorrect/not_enough_information>. \n\n"
    "<Claim>{claim}</Claim> \n\n"
    "<Reference>{reference}</Reference>"
)

# The two judges below have no upstream wording; this wording is our own.
ENTAILMENT = (
    "Decide whether the response below supports the claim. Answer with exactly one word: "
    "supported or not_supported.\n\n"
    "<Response>{response}</Response>\n\n"
    "<Claim>{claim}</Claim>"
)

SUPPORT = (
    "Read the response below. Is its content consistent with the claim, and does it imply the "
    "claim? Answer yes or no.\n\n"
    "<Response>{response}</Response>\n\n"
    "<Claim>{claim}</Claim>"
)

DEFAULT_TEMPLATES = {
    "generate": GENERATE,
    "decompose": DECOMPOSE,
    "question": QUESTION,
    "answer": ANSWER,
    "contradiction": CONTRADICTION,
    "correctness": CORRECTNESS,
    "entailment": ENTAILMENT,
    "support": SUPPORT,
}

_FIELD = re.compile(r"\{(\w+)\}")


def render(template: str, **values: str) -> str:
    """Fill ``{name}`` fields; unknown fields and literal braces in values are left alone."""
    def sub(m: re.Match) -> str:
        key = m.group(1)
        return str(values[key]) if key in values else m.group(0)
    return _FIELD.sub(sub, template)


def templates(overrides: Optional[Mapping[str, str]] = None) -> dict[str, str]:
    out = dict(DEFAULT_TEMPLATES)
    for k, v in (overrides or {}).items():
        if k not in out:
            raise KeyError(f"unknown prompt template {k!r}")
        out[k] = v
    return out


# parsing ----------------------------------------------------------------

_MARKER = re.compile(r"^\s*(?:[-*•–]|\(?\d{1,3}[.)]|\[\d{1,3}\])\s+")
_SENTENCE_END = re.compile(r"[.!?](?:\s|$)")


def strip_marker(line: str) -> tuple[str, bool]:
    m = _MARKER.match(line)
    if m:
        return line[m.end():].strip(), True
    return line.strip(), False


def parse_list(text: str) -> Optional[list[str]]:
    """Items of a list reply, or None when the reply reads as prose."""
    text = text.strip()
    if not text:
        return []
    if text.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            data = None
        if isinstance(data, list) and all(isinstance(x, str) for x in data):
            return [x.strip() for x in data if x.strip()]
    lines = [ln for ln in text.splitlines() if ln.strip()]
    stripped = [strip_marker(ln) for ln in lines]
    if any(marked for _, marked in stripped):
        return [s for s, marked in stripped if marked and s]
    if len(lines) == 1 and len(_SENTENCE_END.findall(lines[0])) > 1:
        return None
    return [s for s, _ in stripped if s]


def normalize(text: str) -> str:
    return re.sub(r"[^\w\s]", "", re.sub(r"\s+", " ", text.lower())).strip()


def parse_questions(text: str) -> list[str]:
    """Questions in output order, exact duplicates (after normalization) removed."""
    seen = set()
    out = []
    for line in text.splitlines():
        q, _ = strip_marker(line)
        if not q.endswith("?"):
            continue
        key = normalize(q)
        if key and key not in seen:
            seen.add(key)
            out.append(q)
    return out


_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?")


def parse_percentage(text: str) -> Optional[float]:
    """First number in the reply read as a percentage, clamped and scaled to [0, 1]."""
    m = _NUMBER.search(text)
    if not m:
        return None
    value = min(max(float(m.group(0)), 0.0), 100.0)
    return value / 100.0


def parse_entailment(text: str) -> Optional[bool]:
    t = text.strip().lower()
    if re.search(r"not[\s_-]*supported|unsupported", t):
        return False
    if "supported" in t:
        return True
    return None


def parse_yes_no(text: str) -> Optional[bool]:
    t = text.strip().lower()
    m = re.search(r"\b(yes|no)\b", t)
    if not m:
        return None
    return m.group(1) == "yes"


def parse_correctness(text: str) -> Optional[str]:
    t = text.strip().lower()
    if re.search(r"not[\s_]*enough[\s_]*information", t):
        return "not_enough_information"
    if "incorrect" in t:
        return "incorrect"
    if "correct" in t:
        return "correct"
    return None
