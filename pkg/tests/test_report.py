import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iuq.report import (
    cost_report,
    faithfulness_stats,
    histogram,
    interpolate,
    landscape,
    render_cost,
    render_heatmap,
    render_stats,
)
from iuq.scoring import score_run
from iuq.types import (
    AnswerRecord,
    ClaimRecord,
    ContradictionRecord,
    QuestionRecord,
    RunRecords,
    SampledResponse,
    ScoreVector,
    TopicItem,
)
from oracles import interpolation_oracle
from worlds import run_world


def test_interpolate_example():
    assert interpolate([0.0, 1.0], 4) == pytest.approx([0, 1 / 3, 2 / 3, 1])
    assert interpolate([2.0], 3) == [2.0, 2.0, 2.0]
    with pytest.raises(ValueError):
        interpolate([], 3)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=30), st.integers(1, 60))
def test_interpolate_matches_oracle_and_keeps_endpoints(seq, length):
    got = interpolate(seq, length)
    assert len(got) == length
    assert got == pytest.approx(interpolation_oracle(seq, length), abs=1e-9)
    assert got[0] == seq[0]
    if length > 1:
        assert got[-1] == seq[-1]


def _vec(topic, resp, i, w):
    return ScoreVector(f"{resp}-{i}", topic, resp, i, None, None, w, None, None)


def _landscape_records(topics, responses):
    return RunRecords(topics=topics, responses=responses)


def test_single_sample_landscape_is_identity():
    recs = _landscape_records([TopicItem("t", "p")], [SampledResponse("r", "t", 0, "x", False, 1.0)])
    ws = [0.1, 0.4, 0.2]
    land = landscape(recs, [_vec("t", "r", i + 1, w) for i, w in enumerate(ws)])
    assert land.grid == [ws]
    assert land.scale_max == 0.4


def test_landscape_resamples_then_averages():
    recs = _landscape_records([TopicItem("t", "p")], [SampledResponse("a", "t", 0, "x", False, 1.0),
                                                      SampledResponse("b", "t", 1, "y", False, 1.0)])
    vecs = [_vec("t", "a", 1, 0.0), _vec("t", "a", 2, 1.0)] + [_vec("t", "b", i, 0.0) for i in (1, 2, 3, 4)]
    land = landscape(recs, vecs)
    assert land.grid[0] == pytest.approx([0, 1 / 6, 1 / 3, 0.5])


def test_all_faithful_landscape_is_zero(tmp_path):
    recs = _landscape_records([TopicItem("t", "p"), TopicItem("u", "q")],
                              [SampledResponse("r", "t", 0, "x", False, 1.0)])
    land = landscape(recs, [_vec("t", "r", i, 0.0) for i in (1, 2)])
    assert land.grid == [[0.0, 0.0]] and land.scale_max == 0.0
    assert land.flagged == ["u"] and land.topics == ["t"]
    assert land.to_rows() == [{"topic_id": "t", "c0": 0.0, "c1": 0.0}]
    out = render_heatmap(land, tmp_path / "l.svg")
    assert out.read_text().lstrip().startswith("<?xml")


def _two_claim_run():
    c1 = ClaimRecord("c1", "r", "t", 1, "a")
    c2 = ClaimRecord("c2", "r", "t", 2, "b")
    qs = [QuestionRecord("q1", "c1", 0, "?"), QuestionRecord("q2", "c2", 0, "?")]
    ans = [AnswerRecord("a1", "q1", 0, "x"), AnswerRecord("a2", "q2", 0, "y")]
    xs = [ContradictionRecord("x1", "a1", "c1", "preceding", 0.0),
          ContradictionRecord("x2", "a2", "c2", "preceding", 1.0)]
    return RunRecords(topics=[TopicItem("t", "p")], responses=[SampledResponse("r", "t", 0, "x", False, 1.0)],
                      claims=[c1, c2], questions=qs, answers=ans, contradictions=xs)


def test_within_response_variance_is_population_variance():
    (stats,) = faithfulness_stats(_two_claim_run())
    assert stats.mean_within_response_variance == 0.25
    assert stats.counts[0] == 1 and stats.counts[-1] == 1 and sum(stats.counts) == 2
    assert "population variance" in render_stats([stats])


def test_point_mass_histogram():
    edges, counts = histogram([0.3] * 7)
    assert len(edges) == 21 and sum(counts) == 7 and counts.count(7) == 1


def test_stats_split_by_dataset(tmp_path):
    _, _, records = run_world(tmp_path, {"seed": 2, "n_entities": 4}, n_samples=2, n_answers=1)
    from dataclasses import replace

    tagged = replace(records, topics=[replace(t, dataset_tag="A" if i % 2 else "B")
                                      for i, t in enumerate(records.topics)])
    stats = faithfulness_stats(tagged)
    assert [s.dataset_tag for s in stats] == ["A", "B"]
    assert sum(s.n_claims for s in stats) == sum(1 for v in score_run(records)[0] if v.f_faith is not None)


def test_cost_report_layout():
    manifest = {"status": {"t1": {}, "t2": {}},
                "ledger": {"answer_gen": {"prompt_tokens": 30, "completion_tokens": 10, "requests": 4},
                           "question_gen": {"prompt_tokens": 6, "completion_tokens": 4, "requests": 2}}}
    rows = cost_report(manifest)
    assert [r["stage"] for r in rows][-1] == "Total"
    total = rows[-1]
    assert total["total_tokens"] == 50 and total["avg_tokens_per_topic"] == 25
    assert sum(r["total_tokens"] for r in rows[:-1]) == total["total_tokens"]
    text = render_cost(rows)
    assert "Question Gen." in text and "Contradiction Evaluation" in text
