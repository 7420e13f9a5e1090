import math
import random

import networkx as nx
import pytest

from iuq.backend import ScriptEntry, ScriptedBackend
from iuq.baselines import (
    EntailmentGraph,
    align_claim,
    claim_entailment_s,
    closeness_centrality,
    frequency_from_verdicts,
    frequency_scoring,
    ingest_external_scores,
    load_external_scores,
    max_token_entropy,
    parse_external_scores,
    perplexity,
)
from iuq.types import ClaimRecord, SampledResponse


def test_entailment_s():
    assert claim_entailment_s([True, True, True, False, False]) == 0.6
    assert claim_entailment_s([True] * 4) == 1.0
    assert claim_entailment_s([False] * 4) == 0.0


def test_star_graph_closeness():
    g = EntailmentGraph(["c"], [f"r{i}" for i in range(5)])
    for i in range(5):
        g.add_edge("c", f"r{i}")
    assert closeness_centrality(g) == {"c": 1.0}


def test_isolated_and_symmetric_claims():
    g = EntailmentGraph(["a", "b", "lone"], ["r0", "r1", "r2"])
    for c in ("a", "b"):
        g.add_edge(c, "r0")
        g.add_edge(c, "r1")
    cc = closeness_centrality(g)
    assert cc["lone"] == 0.0
    assert cc["a"] == cc["b"] > 0


def test_graph_is_bipartite():
    g = EntailmentGraph(["a", "b"], ["r"])
    with pytest.raises(KeyError):
        g.add_edge("a", "b")


def test_closeness_matches_networkx():
    rng = random.Random(0)
    for _ in range(200):
        claims = [f"c{i}" for i in range(rng.randint(1, 6))]
        responses = [f"r{i}" for i in range(rng.randint(1, 6))]
        g = EntailmentGraph(claims, responses)
        ref = nx.Graph()
        ref.add_nodes_from(("c", c) for c in claims)
        ref.add_nodes_from(("r", r) for r in responses)
        for c in claims:
            for r in responses:
                if rng.random() < 0.35:
                    g.add_edge(c, r)
                    ref.add_edge(("c", c), ("r", r))
        want = nx.closeness_centrality(ref, wf_improved=True)
        for c, value in closeness_centrality(g).items():
            assert value == pytest.approx(want[("c", c)], abs=1e-15)


def test_frequency_scoring_counts_support():
    assert frequency_from_verdicts([True, True, True, True, False]) == 0.8
    claim = ClaimRecord("c", "r0", "t", 1, "Ola is a baker.")
    alts = [SampledResponse(f"r{i}", "t", i, f"resp {i}", False, 1.0) for i in range(1, 3)]
    b = ScriptedBackend([ScriptEntry("resp 1", ["yes"]), ScriptEntry("resp 2", ["no idea"])])
    assert frequency_scoring(claim, alts, b) == 0.5
    assert frequency_scoring(claim, alts[:1], b) == 1.0


def test_s_and_frequency_agree_on_identical_verdicts():
    verdicts = [True, False, True]
    assert claim_entailment_s(verdicts) == frequency_from_verdicts(verdicts)


LP = (("Ola", -0.1), ("Nord's", -2.3), ("profession", -0.5), ("is", -0.01), ("baker.", -0.2),
      ("She", -0.3), ("likes", -0.4), ("chess.", -0.9))


def test_alignment_span():
    assert align_claim("Ola Nord's profession", LP) == [-0.1, -2.3, -0.5]
    assert align_claim("Completely unrelated words here", LP) is None
    assert align_claim("Ola Nord's profession", None) is None


def test_token_baselines():
    assert max_token_entropy("Ola Nord's profession", LP) == pytest.approx(2.3)
    assert max_token_entropy("a", (("a", 0.0),)) == 0.0
    assert max_token_entropy("missing claim text", LP) is None
    assert perplexity("x y", (("x", -math.log(2)), ("y", -math.log(2)))) == pytest.approx(2.0)
    assert perplexity("x", (("x", 0.0),)) == 1.0
    assert perplexity("x y", (("x", -1.0), ("y", -3.0))) == pytest.approx(math.e ** 2)


def test_external_scores(tmp_path):
    known = {f"c{i}" for i in range(10)}
    rows = "\n".join(f"c{i},{i / 10}" for i in range(10))
    text = f"# method=CCP orientation=uncertain\nclaim_id,score\n{rows}\nzz,0.3\nc1,0.99\n"
    parsed = parse_external_scores(text, known)
    assert parsed.method == "CCP" and parsed.orientation == "uncertain"
    assert len(parsed.scores) == 10 and parsed.scores["c1"] == 0.99
    assert parsed.rejected == ["zz: unknown claim_id"]
    assert parsed.warnings == ["c1: duplicate row, last value kept"]
    path = tmp_path / "ccp.tsv"
    path.write_text("# method=X orientation=higher-is-confident\nc0\t0.5\n")
    ingest_external_scores(None, path, tmp_path, known)
    assert load_external_scores(tmp_path)["X"] == {"orientation": "confident", "scores": {"c0": 0.5}}
    with pytest.raises(ValueError):
        parse_external_scores("c0,1\n")
