import pytest

from iuq import prompts


def test_render_leaves_unknown_fields():
    assert prompts.render("{a} and {b}", a="x") == "x and {b}"
    assert prompts.render(prompts.GENERATE, prompt="Who is X?").endswith("formatting: Who is X?")


def test_template_overrides():
    t = prompts.templates({"answer": "A: {question}"})
    assert t["answer"] == "A: {question}" and t["generate"] == prompts.GENERATE
    with pytest.raises(KeyError):
        prompts.templates({"bogus": "x"})


@pytest.mark.parametrize("text,items", [
    ("- a fact.\n- another fact.", ["a fact.", "another fact."]),
    ("1. one\n2) two\n[3] three", ["one", "two", "three"]),
    ('["x", "y"]', ["x", "y"]),
    ("A single fact.", ["A single fact."]),
    ("", []),
])
def test_parse_list(text, items):
    assert prompts.parse_list(text) == items


def test_parse_list_rejects_prose():
    assert prompts.parse_list("He was born in 1976. He became an architect. He lives in Osaka.") is None


def test_parse_questions_dedups_and_filters():
    text = "1. What is X's profession?\n2. what is x's profession?\nNot a question.\n- Where was X born?"
    assert prompts.parse_questions(text) == ["What is X's profession?", "Where was X born?"]


@pytest.mark.parametrize("text,value", [
    ("50", 0.5), ("100%", 1.0), ("The answer is 12.5 percent", 0.125), ("150", 1.0), ("-3", 0.0), ("none", None),
])
def test_parse_percentage(text, value):
    assert prompts.parse_percentage(text) == value


def test_verdict_parsers():
    assert prompts.parse_entailment("supported") is True
    assert prompts.parse_entailment("Not supported.") is False
    assert prompts.parse_entailment("not_supported") is False
    assert prompts.parse_entailment("hmm") is None
    assert prompts.parse_yes_no("Yes, it does.") is True
    assert prompts.parse_yes_no("no") is False
    assert prompts.parse_yes_no("unclear") is None
    assert prompts.parse_correctness("incorrect") == "incorrect"
    assert prompts.parse_correctness("Correct.") == "correct"
    assert prompts.parse_correctness("not_enough_information") == "not_enough_information"
    assert prompts.parse_correctness("?") is None
