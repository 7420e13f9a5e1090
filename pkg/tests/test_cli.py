import json

import pytest
from click.testing import CliRunner

from iuq.cli import main, read_dataset
from iuq.store import load_run


@pytest.fixture
def runner():
    return CliRunner()


def _synth(runner, tmp_path, seed=7, topics=5):
    res = runner.invoke(main, ["synth", "--out", str(tmp_path / "w"), "--seed", str(seed), "--topics", str(topics)])
    assert res.exit_code == 0, res.output
    return tmp_path / "w" / "world.json", tmp_path / "w" / "dataset.jsonl"


def _run_args(run_dir, world, *extra):
    return ["--run-dir", str(run_dir), "--script", str(world), "--n-samples", "3", *extra]


def test_run_twice_is_a_noop(runner, tmp_path):
    world, data = _synth(runner, tmp_path)
    run_dir = tmp_path / "run"
    first = runner.invoke(main, ["run", "--dataset", str(data), *_run_args(run_dir, world)])
    assert first.exit_code == 0, first.output
    assert "complete=5" in first.output
    ledger = load_run(run_dir).manifest["ledger"]
    files = {p.name: p.read_bytes() for p in run_dir.glob("*.jsonl")}
    second = runner.invoke(main, ["run", "--dataset", str(data), *_run_args(run_dir, world)])
    assert second.exit_code == 0
    assert load_run(run_dir).manifest["ledger"] == ledger
    assert {p.name: p.read_bytes() for p in run_dir.glob("*.jsonl")} == files


def test_eval_requires_labels(runner, tmp_path):
    world, data = _synth(runner, tmp_path, topics=2)
    run_dir = tmp_path / "run"
    runner.invoke(main, ["run", "--dataset", str(data), *_run_args(run_dir, world)])
    res = runner.invoke(main, ["eval", "--run-dir", str(run_dir)])
    assert res.exit_code == 2
    assert "labels missing" in res.output


def test_changed_config_is_refused_without_override(runner, tmp_path):
    world, data = _synth(runner, tmp_path, topics=2)
    run_dir = tmp_path / "run"
    runner.invoke(main, ["run", "--dataset", str(data), *_run_args(run_dir, world)])
    res = runner.invoke(main, ["run", "--dataset", str(data), *_run_args(run_dir, world), "--seed", "3"])
    assert res.exit_code == 2 and "seed" in res.output
    ok = runner.invoke(main, ["run", "--dataset", str(data), *_run_args(run_dir, world), "--seed", "3",
                              "--override"])
    assert ok.exit_code == 0


def test_config_file_with_flag_override(runner, tmp_path):
    world, data = _synth(runner, tmp_path, topics=2)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"script: {world}\nn_samples: 4\nn_answers: 1\nkernel: 'exp:2'\n")
    run_dir = tmp_path / "run"
    res = runner.invoke(main, ["run", "--config", str(cfg), "--run-dir", str(run_dir), "--dataset", str(data),
                               "--n-samples", "2"])
    assert res.exit_code == 0, res.output
    stored = load_run(run_dir).config
    assert stored["n_samples"] == 2 and stored["n_answers"] == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("n_sample: 3\n")
    res = runner.invoke(main, ["run", "--config", str(bad), "--run-dir", str(tmp_path / "r2")])
    assert res.exit_code == 2 and "n_sample" in res.output


def test_ingest_rejects_bad_rows(runner, tmp_path):
    rows = [{"topic_id": f"t{i}", "prompt": f"Tell me a bio of person {i}."} for i in range(50)]
    rows.append({"topic_id": "empty", "prompt": ""})
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    items, errors = read_dataset(str(path))
    assert len(items) == 50 and len(errors) == 1 and "empty" in errors[0]
    res = runner.invoke(main, ["ingest", str(path), "--run-dir", str(tmp_path / "run")])
    assert res.exit_code == 2
    assert "50 topics valid" in res.output
    assert len(load_run(tmp_path / "run").read_records("topics")) == 50


def test_csv_dataset(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("topic_id,prompt,reference,tag\na,Tell me about A.,A is a cat.,pets\na,dup,,\n")
    items, errors = read_dataset(str(path))
    assert [t.dataset_tag for t in items] == ["pets"] and "duplicate" in errors[0]


def _full_flow(runner, tmp_path, name):
    world, data = _synth(runner, tmp_path / name)
    run_dir = tmp_path / name / "run"
    assert runner.invoke(main, ["run", "--dataset", str(data), *_run_args(run_dir, world)]).exit_code == 0
    assert runner.invoke(main, ["label", "--run-dir", str(run_dir), "--oracle", str(world)]).exit_code == 0
    res = runner.invoke(main, ["eval", "--run-dir", str(run_dir), "--out", str(run_dir / "eval.tsv")])
    assert res.exit_code == 0, res.output
    return run_dir, res.output


def test_seeded_end_to_end_is_deterministic(runner, tmp_path):
    a, out_a = _full_flow(runner, tmp_path, "a")
    b, out_b = _full_flow(runner, tmp_path, "b")
    assert out_a == out_b
    for stage in ("responses", "claims", "questions", "answers", "contradictions", "entailments", "labels"):
        assert (a / f"{stage}.jsonl").read_bytes() == (b / f"{stage}.jsonl").read_bytes()
    assert "IUQ" in out_a and "AUROC" in out_a


def test_reports_after_a_run(runner, tmp_path):
    run_dir, _ = _full_flow(runner, tmp_path, "r")
    world = tmp_path / "r" / "w" / "world.json"
    for args in (["cost"], ["stats"], ["ablate", "--what", "kernels"], ["ablate", "--what", "generations"],
                 ["ablate", "--what", "direction"], ["score"]):
        res = runner.invoke(main, [*args, "--run-dir", str(run_dir), "--script", str(world)])
        assert res.exit_code == 0, (args, res.output)
    image = tmp_path / "land.svg"
    res = runner.invoke(main, ["landscape", "--run-dir", str(run_dir), "--image", str(image)])
    assert res.exit_code == 0 and image.exists() and "colour scale" in res.output
    cost = runner.invoke(main, ["cost", "--run-dir", str(run_dir)]).output
    assert "Contradiction Evaluation" in cost and "Total" in cost


def test_ingest_external_scores(runner, tmp_path):
    run_dir, _ = _full_flow(runner, tmp_path, "x")
    claims = [c.claim_id for c in load_run(run_dir).read_records("claims")]
    path = tmp_path / "ext.csv"
    path.write_text("# method=CCP orientation=uncertain\nclaim_id,score\n"
                    + "".join(f"{c},{i % 3}\n" for i, c in enumerate(claims)) + "ghost,1\n")
    res = runner.invoke(main, ["ingest-scores", str(path), "--run-dir", str(run_dir)])
    assert res.exit_code == 0, res.output
    assert f"CCP: {len(claims)} scores" in res.output
    ev = runner.invoke(main, ["eval", "--run-dir", str(run_dir), "--methods", "CCP,IUQ"])
    assert "CCP" in ev.output
