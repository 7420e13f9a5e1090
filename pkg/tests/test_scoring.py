import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iuq.scoring import (
    answer_entropy,
    answer_level_uncertainty,
    claim_faithfulness,
    claim_uncertainty,
    iuq_confidence,
    model_faithfulness,
    response_faithfulness,
    score_run,
    unfaithfulness_weighting,
)
from iuq.types import (
    AnswerRecord,
    ClaimRecord,
    ContradictionRecord,
    EntailmentRecord,
    KernelSpec,
    QuestionRecord,
    RunRecords,
    SampledResponse,
    TopicItem,
)
from oracles import kernel_oracle

KERNELS = [KernelSpec("exp", lam=0.1), KernelSpec("exp", lam=1.0), KernelSpec("exp", lam=5.0),
           KernelSpec("linear"), KernelSpec("accumulative"), KernelSpec("none")]


def test_worked_example_faithfulness():
    rec = claim_faithfulness([[0.5, 1.0, 1.0]])
    assert rec.f == pytest.approx(1 / 6, abs=1e-12)
    assert round(rec.f, 2) == 0.17


def test_faithfulness_all_zero_is_one():
    assert claim_faithfulness([[0.0, 0.0], [0.0]]).f == 1.0


def test_faithfulness_two_questions():
    # X means 0.2 and 0.4
    assert claim_faithfulness([[0.2, 0.2], [0.4]]).f == pytest.approx(0.7)


def test_faithfulness_skips_missing():
    assert claim_faithfulness([[None, 0.5], [None]]).f == 0.5
    assert claim_faithfulness([[None], []]) is None


def test_response_and_model_faithfulness():
    assert response_faithfulness([1, 1, 1]) == 1.0
    assert response_faithfulness([1 / 6, 0.5]) == pytest.approx(1 / 3)
    assert response_faithfulness([0.72]) == 0.72
    assert response_faithfulness([]) is None


@pytest.mark.parametrize("kernel", KERNELS, ids=str)
def test_all_faithful_gives_zero_weights(kernel):
    assert unfaithfulness_weighting([1.0, 1.0, 1.0], kernel) == [0.0, 0.0, 0.0]


def test_weighting_examples():
    w = unfaithfulness_weighting([0.5, 1.0], KernelSpec("exp", lam=1.0))
    assert w == pytest.approx([0.5, 0.5 * math.exp(-1)], abs=1e-15)
    assert unfaithfulness_weighting([0.5, 0.8], KernelSpec("accumulative")) == pytest.approx([0.5, 0.7])
    assert unfaithfulness_weighting([0.25, 0.8], KernelSpec("none")) == pytest.approx([0.75, 0.2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=50))
def test_weighting_matches_oracle(f):
    for k in KERNELS:
        assert unfaithfulness_weighting(f, k) == pytest.approx(
            kernel_oracle(f, k.variant, lam=k.lam, m=k.m, b=k.b), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=50))
def test_large_lambda_approaches_no_propagation(f):
    a = unfaithfulness_weighting(f, KernelSpec("exp", lam=30.0))
    b = unfaithfulness_weighting(f, KernelSpec("none"))
    assert a == pytest.approx(b, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.data())
def test_lowering_f_never_lowers_w(f, data):
    j = data.draw(st.integers(0, len(f) - 1))
    lowered = list(f)
    lowered[j] = data.draw(st.floats(0, f[j]))
    for k in KERNELS:
        before = unfaithfulness_weighting(f, k)
        after = unfaithfulness_weighting(lowered, k)
        for i in range(j, len(f)):
            assert after[i] >= before[i] - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=30))
def test_accumulative_is_non_decreasing(f):
    w = unfaithfulness_weighting(f, KernelSpec("accumulative"))
    assert all(b >= a for a, b in zip(w, w[1:]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.floats(0, 1), min_size=1, max_size=4), min_size=1, max_size=3))
def test_flipping_contradictions_flips_faithfulness(grid):
    f = claim_faithfulness(grid).f
    flipped = claim_faithfulness([[1 - x for x in row] for row in grid]).f
    assert flipped == pytest.approx(1 - f, abs=1e-12)
    assert 0.0 <= f <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 3)), min_size=2, max_size=10), st.floats(0.1, 10))
def test_scaling_w_preserves_ranking(pairs, c):
    u = [claim_uncertainty(s, w) for s, w in pairs]
    scaled = [claim_uncertainty(s, c * w) for s, w in pairs]
    for a in range(len(u)):
        for b in range(len(u)):
            if u[a] < u[b]:
                assert scaled[a] <= scaled[b]


def test_claim_uncertainty_examples():
    w = unfaithfulness_weighting([1 / 6], KernelSpec("none"))[0]
    assert claim_uncertainty(0.6, w) == pytest.approx(0.5)
    assert claim_uncertainty(0.6, 0.0) == 0.0
    assert claim_uncertainty(0.0, 0.8) == 0.0
    assert iuq_confidence(0.6, 0.0) == 0.6


def test_answer_entropy():
    assert answer_entropy([("a", -0.1), ("b", -0.2), ("c", -0.3)]) == pytest.approx(0.6)
    assert answer_entropy([("a", 0.0)]) == 0.0
    assert answer_entropy([("a", -0.2), ("b", -0.4)], normalize=True) == pytest.approx(0.3)
    with pytest.raises(ValueError, match="no tokens"):
        answer_entropy([])


def test_answer_level_uncertainty():
    assert answer_level_uncertainty([[0.6, 0.4]]) == pytest.approx(0.5)
    assert answer_level_uncertainty([[0.0], [0.0]]) == 0.0
    assert answer_level_uncertainty([[1.0, 1.0], [3.0]]) == pytest.approx(2.0)
    assert answer_level_uncertainty([[None], []]) is None


def test_kernel_spec_parse_and_validate():
    assert KernelSpec.parse("exp:2") == KernelSpec("exp", lam=2.0)
    assert KernelSpec.parse("lin:0.2:0.1") == KernelSpec("linear", m=0.2, b=0.1)
    assert KernelSpec.parse("acc").label == "Acc-E"
    assert KernelSpec.parse("none").label == "No-E"
    with pytest.raises(ValueError):
        KernelSpec("exp", lam=0.0)
    with pytest.raises(ValueError):
        KernelSpec("linear", m=-1.0)
    with pytest.raises(ValueError):
        KernelSpec.parse("cubic")


# whole-run scoring on a hand-built run -----------------------------------

def _worked_run():
    """One topic, five responses; the first has two claims, the case-study claim first."""
    topic = TopicItem("t1", "Tell me a bio of Rory Byrne.", dataset_tag="bio")
    responses = [SampledResponse(f"r{i}", "t1", i, f"text {i}", False, 1.0,
                                 (("Rory", -0.1), ("Byrne", -0.2), ("is", -0.01), ("an", -0.01),
                                  ("architect.", -1.5))) for i in range(5)]
    c1 = ClaimRecord("c1", "r0", "t1", 1, "Rory Byrne is an architect.")
    c2 = ClaimRecord("c2", "r0", "t1", 2, "Rory Byrne designed bridges.")
    q1 = QuestionRecord("q1", "c1", 0, "What is Rory Byrne's profession?")
    q2 = QuestionRecord("q2", "c2", 0, "What did Rory Byrne design?")
    answers = [AnswerRecord(f"a1{k}", "q1", k, "x", (("x", -0.5),)) for k in range(3)]
    answers += [AnswerRecord(f"a2{k}", "q2", k, "y", (("y", -1.0),)) for k in range(3)]
    xs = [ContradictionRecord(f"x1{k}", f"a1{k}", "c1", "preceding", s, False, "")
          for k, s in enumerate([0.5, 1.0, 1.0])]
    xs += [ContradictionRecord(f"x2{k}", f"a2{k}", "c2", "preceding", 0.0, False, "") for k in range(3)]
    ent = [EntailmentRecord(f"e1{i}", "c1", f"r{i}", "entail", i < 3, True) for i in range(5)]
    ent += [EntailmentRecord(f"e2{i}", "c2", f"r{i}", "entail", True, True) for i in range(5)]
    return RunRecords(topics=[topic], responses=responses, claims=[c1, c2], questions=[q1, q2],
                      answers=answers, contradictions=xs, entailments=ent)


def test_score_run_worked_example():
    from iuq.scoring import ScoreOptions

    vectors, _ = score_run(_worked_run(), ScoreOptions(kernel=KernelSpec("exp", lam=1.0)))
    by = {v.claim_id: v for v in vectors}
    assert by["c1"].s_entail == 0.6
    assert by["c1"].f_faith == pytest.approx(1 / 6)
    assert by["c1"].w_weight == pytest.approx(5 / 6)
    assert by["c1"].u_iuq == pytest.approx(0.5)
    assert by["c2"].w_weight == pytest.approx(5 / 6 * math.exp(-1))
    assert by["c1"].u_answer == pytest.approx(0.5)
    assert by["c1"].baselines["MaxTokEnt"] == pytest.approx(1.5)
    for v in vectors:
        assert set(v.baselines) <= set(v.orientation)
        assert v.orientation["IUQ"] == "uncertain"
        assert v.orientation["S"] == "confident"
    assert "IUQ-rev" not in by["c1"].baselines


def test_score_run_excluding_own_response():
    from iuq.scoring import ScoreOptions

    vectors, _ = score_run(_worked_run(), ScoreOptions(include_own_response=False))
    assert {v.claim_id: v.s_entail for v in vectors}["c1"] == 0.5


def test_score_run_first_n():
    from iuq.scoring import ScoreOptions

    vectors, _ = score_run(_worked_run(), ScoreOptions(n_first=1))
    assert all(v.s_entail in (0.0, 1.0) for v in vectors)


def test_model_faithfulness_layout():
    out = model_faithfulness(_worked_run())
    assert out["per_response"]["r0"] == pytest.approx((1 / 6 + 1) / 2)
    assert out["per_dataset"]["bio"] == pytest.approx((1 / 6 + 1) / 2)


def test_missing_faithfulness_is_neutral_in_w():
    run = _worked_run()
    run.contradictions = [x for x in run.contradictions if x.claim_id != "c1"]
    run.reindex()
    vectors, diags = score_run(run)
    by = {v.claim_id: v for v in vectors}
    assert by["c1"].f_faith is None
    assert by["c1"].w_weight == 0.0
    assert any("without usable" in d for d in diags)
