import pytest
from hypothesis import given
from hypothesis import strategies as st

from iuq.types import (
    AnswerRecord,
    ClaimRecord,
    ContradictionRecord,
    CorrectnessLabel,
    RunRecords,
    SampledResponse,
    ScoreVector,
    TopicItem,
    make_id,
    validate_run_artifacts,
)

text = st.text(min_size=1, max_size=40).filter(lambda s: s.strip())
logprobs = st.one_of(st.none(), st.lists(st.tuples(st.text(max_size=8), st.floats(-20, 0)), max_size=6)
                     .map(lambda xs: tuple(xs)))


def test_make_id_is_content_addressed():
    a = make_id("p", "claims", 0, "x")
    assert a == make_id("p", "claims", 0, "x")
    assert a != make_id("p", "claims", 1, "x")
    assert len(a) == 16


def test_empty_prompt_rejected():
    with pytest.raises(ValueError):
        TopicItem("t", "   ")


def test_label_values():
    assert CorrectnessLabel("c", "correct").binary == 1
    assert CorrectnessLabel("c", "incorrect").binary == 0
    assert CorrectnessLabel("c", "not_enough_information").binary is None
    with pytest.raises(ValueError):
        CorrectnessLabel("c", "maybe")


@given(text, st.integers(0, 10), text, st.booleans(), st.floats(0, 2), logprobs)
def test_response_round_trip(rid, idx, body, refusal, temp, lp):
    r = SampledResponse(rid, "t", idx, body, refusal, temp, lp)
    assert SampledResponse.from_dict(r.to_dict()) == r


@given(text, st.one_of(st.none(), text), logprobs)
def test_answer_round_trip(aid, body, lp):
    a = AnswerRecord(aid, "q", 0, body, lp)
    assert AnswerRecord.from_dict(a.to_dict()) == a


def test_score_vector_round_trip():
    v = ScoreVector("c", "t", "r", 1, 0.6, 0.5, 0.5, 0.3, 1.2, {"S": 0.6, "PPL": None},
                    {"S": "confident", "PPL": "uncertain"})
    assert ScoreVector.from_dict(v.to_dict()) == v


def _run(indices, score=0.5):
    topic = TopicItem("t", "p")
    resp = SampledResponse("r", "t", 0, "x", False, 1.0)
    claims = [ClaimRecord(f"c{i}", "r", "t", i, f"claim {i}") for i in indices]
    return RunRecords(topics=[topic], responses=[resp], claims=claims,
                      contradictions=[ContradictionRecord("x", "a", "c1", "preceding", score)])


def test_validate_reports_index_gap_and_range():
    assert validate_run_artifacts(_run([1, 2, 3], 0.5)) == ["orphan contradiction x"]
    report = validate_run_artifacts(_run([1, 3], 1.2))
    assert "response r: index gap at 2" in report
    assert any(m.startswith("contradiction out of range") for m in report)


def test_validate_clean_run():
    run = _run([1, 2])
    run.contradictions = []
    run.reindex()
    assert validate_run_artifacts(run) == []
