"""``iuq`` command line: run the pipeline, score, label, evaluate and report.

Exit codes: 0 success, 1 partial failure (some topics failed), 2 configuration error.
"""
from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional

import click
import yaml

from . import baselines, evaluation, report
from .backend import Backend, BackendError, CompletionCache, ConfigurationError, HTTPBackend, TokenLedger, load_script
from .pipeline import PipelineConfig, run_pipeline
from .scoring import ScoreOptions, score_run
from .store import ConfigMismatchError, ManifestError, RunStore, StoreError, load_run, open_run
from .synthworld import WorldBackend, build_world, ground_truth_labels, load_world
from .types import KernelSpec, TopicItem

log = logging.getLogger("iuq")

EXIT_PARTIAL = 1
EXIT_CONFIG = 2


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


@dataclass
class Settings:
    run_dir: str = "run"
    backend: str = "scripted"
    script: Optional[str] = None
    endpoint: Optional[str] = None
    model: str = "gpt-4o-mini"
    n_samples: int = 5
    temperature: float = 1.0
    kernel: str = "exp:1"
    direction: str = "preceding"
    n_first: Optional[int] = None
    seed: int = 0
    n_q_max: int = 3
    n_answers: int = 3
    include_own_response: bool = True
    frequency_scoring: bool = True
    max_in_flight: int = 8
    max_tokens: int = 1024

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            n_samples=self.n_samples, sample_temperature=self.temperature, n_q_max=self.n_q_max,
            n_answers=self.n_answers, direction=self.direction,
            include_own_response=self.include_own_response, frequency_scoring=self.frequency_scoring,
            seed=self.seed, max_in_flight=self.max_in_flight, max_tokens=self.max_tokens,
        )

    def score_options(self) -> ScoreOptions:
        direction = "preceding" if self.direction == "both" else self.direction
        return ScoreOptions(kernel=KernelSpec.parse(self.kernel), direction=direction, n_first=self.n_first,
                            include_own_response=self.include_own_response)


def load_config_file(path: Optional[str]) -> dict[str, Any]:
    if not path:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    known = {f.name for f in fields(Settings)}
    unknown = sorted(set(k.replace("-", "_") for k in data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve_settings(config_path: Optional[str], flags: dict[str, Any]) -> Settings:
    values = load_config_file(config_path)
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        s = Settings(**values)
        KernelSpec.parse(s.kernel)
        s.pipeline_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return s


def make_backend(s: Settings) -> Backend:
    try:
        if s.backend == "http":
            return HTTPBackend(s.endpoint or "", s.model, max_in_flight=s.max_in_flight)
        if s.backend != "scripted":
            raise ConfigError(f"unknown backend {s.backend!r}")
        if not s.script:
            raise ConfigError("scripted backend needs --script (a script or world file)")
        data = yaml.safe_load(Path(s.script).read_text())
        if isinstance(data, dict) and "entries" in data:
            return load_script(s.script, max_in_flight=s.max_in_flight)
        if isinstance(data, dict) and ("entities" in data or "n_entities" in data):
            return WorldBackend(build_world(data), max_in_flight=s.max_in_flight)
        raise ConfigError(f"{s.script}: neither a script (entries) nor a world (entities)")
    except (OSError, yaml.YAMLError, ConfigurationError) as exc:
        raise ConfigError(str(exc))


def attach(backend: Backend, store: RunStore) -> None:
    """Share the run's completion cache and token ledger with a backend."""
    backend.cache = CompletionCache(store.cache_dir / "completions.jsonl")
    backend.ledger = TokenLedger(store.manifest.get("ledger") or {})


def detach(backend: Backend, store: RunStore) -> None:
    backend.cache.flush()
    store.manifest["ledger"] = backend.ledger.snapshot()
    store.save_manifest()


def read_dataset(path: str, fmt: Optional[str] = None) -> tuple[list[TopicItem], list[str]]:
    """Topics from a JSON-lines or CSV file, with one message per rejected row."""
    fmt = fmt or ("csv" if path.endswith(".csv") else "jsonl")
    text = Path(path).read_text()
    if fmt == "csv":
        rows = list(csv.DictReader(text.splitlines()))
    elif fmt == "jsonl":
        rows = []
        for n, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    rows.append({"__error__": f"line {n}: {exc}"})
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")
    items, errors, seen = [], [], set()
    for n, row in enumerate(rows, 1):
        if "__error__" in row:
            errors.append(row["__error__"])
            continue
        try:
            tid = str(row.get("topic_id") or "").strip()
            if not tid:
                raise ValueError("topic_id missing")
            if tid in seen:
                raise ValueError(f"duplicate topic_id {tid!r}")
            item = TopicItem(tid, str(row.get("prompt") or ""), row.get("reference") or None,
                             str(row.get("tag") or row.get("dataset_tag") or "default"))
        except ValueError as exc:
            errors.append(f"row {n}: {exc}")
            continue
        seen.add(tid)
        items.append(item)
    return items, errors


def _open(s: Settings, override: bool = False) -> RunStore:
    try:
        return open_run(s.run_dir, s.pipeline_config().to_dict(), override=override)
    except (ConfigMismatchError, ManifestError) as exc:
        raise ConfigError(str(exc))


def _load(s: Settings) -> RunStore:
    try:
        return load_run(s.run_dir)
    except StoreError as exc:
        raise ConfigError(str(exc))


def _scores(store: RunStore, s: Settings):
    records = store.load()
    external = baselines.load_external_scores(store.path)
    return records, *score_run(records, s.score_options(), external)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    click.echo(text, nl=False)


# commands ---------------------------------------------------------------

_COMMON = [
    click.option("--run-dir", type=click.Path(file_okay=False)),
    click.option("--config", "config_path", type=click.Path(dir_okay=False)),
    click.option("--backend", type=click.Choice(["http", "scripted"])),
    click.option("--script", type=click.Path(dir_okay=False)),
    click.option("--endpoint"),
    click.option("--model"),
    click.option("--n-samples", type=int),
    click.option("--temperature", type=float),
    click.option("--kernel", help="exp:LAMBDA, lin:M:B, acc or none"),
    click.option("--direction", type=click.Choice(["preceding", "subsequent", "both"])),
    click.option("--n-first", type=int),
    click.option("--seed", type=int),
]


def common(fn):
    for opt in reversed(_COMMON):
        fn = opt(fn)
    return fn


def settings_from(kwargs: dict[str, Any]) -> Settings:
    config_path = kwargs.pop("config_path", None)
    flags = {k: kwargs.pop(k) for k in list(kwargs) if k in {f.name for f in fields(Settings)}}
    return resolve_settings(config_path, flags)


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose: int) -> None:
    """Interrogative uncertainty quantification for long-form generations."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]))
@common
def ingest(dataset, fmt, **kwargs):
    """Validate a topic file and store its topics in the run."""
    s = settings_from(kwargs)
    items, errors = read_dataset(dataset, fmt)
    for e in errors:
        click.echo(f"rejected {e}", err=True)
    store = _open(s)
    n = store.append_records("topics", items)
    click.echo(f"{len(items)} topics valid, {n} new, {len(errors)} rejected")
    sys.exit(EXIT_CONFIG if errors else 0)


@main.command()
@click.option("--dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--stop-after", type=click.Choice(["generate", "decompose", "questions", "answers",
                                                 "contradiction", "entailment"]))
@click.option("--override", is_flag=True, help="resume even if the stored config differs")
@common
def run(dataset, stop_after, override, **kwargs):
    """Run or resume the interrogation pipeline."""
    s = settings_from(kwargs)
    store = _open(s, override)
    if dataset:
        items, errors = read_dataset(dataset)
        if errors:
            for e in errors:
                click.echo(f"rejected {e}", err=True)
            sys.exit(EXIT_CONFIG)
    else:
        items = store.read_records("topics")
        if not items:
            raise ConfigError("no topics: pass --dataset or run `iuq ingest` first")
    backend = make_backend(s)
    manifest = run_pipeline(items, s.pipeline_config(), backend, store, stop_after=stop_after)
    summary = manifest["summary"]
    click.echo(" ".join(f"{k}={v}" for k, v in summary.items()))
    sys.exit(EXIT_PARTIAL if summary["failed"] else 0)


@main.command()
@click.option("--out", type=click.Path(dir_okay=False), help="also write the score table here")
@common
def score(out, **kwargs):
    """Compute S, F, W, U and the reference methods for every claim."""
    s = settings_from(kwargs)
    store = _load(s)
    _, vectors, diags = _scores(store, s)
    store.replace_records("scores", vectors)
    for d in diags:
        click.echo(f"note: {d}", err=True)
    rows = [{"claim_id": v.claim_id, "topic_id": v.topic_id, "index": v.index, **v.baselines} for v in vectors]
    text = evaluation.write_table(rows)
    if out:
        Path(out).write_text(text)
    click.echo(f"scored {len(vectors)} claims with kernel {s.kernel}")


@main.command()
@click.option("--oracle", type=click.Path(exists=True, dir_okay=False),
              help="label from a synthetic world's fact tables instead of a judge")
@common
def label(oracle, **kwargs):
    """Label claim correctness against each topic's reference."""
    s = settings_from(kwargs)
    store = _load(s)
    records = store.load()
    live = {r.response_id for r in records.responses if not r.refusal}
    claims = [c for c in records.claims if c.response_id in live]
    if oracle:
        try:
            labels = ground_truth_labels(load_world(oracle), claims)
        except ConfigurationError as exc:
            raise ConfigError(str(exc))
    else:
        backend = make_backend(s)
        attach(backend, store)
        labels, diags = [], []
        try:
            for t in records.topics:
                tc = [c for c in claims if c.topic_id == t.topic_id]
                if tc:
                    labels += evaluation.label_claims(tc, t, backend, max_in_flight=s.max_in_flight,
                                                      diagnostics=diags)
        except BackendError as exc:
            detach(backend, store)
            click.echo(f"labeling failed: {exc}", err=True)
            sys.exit(EXIT_PARTIAL)
        detach(backend, store)
        for d in diags:
            store.diagnostic("unparsed-correctness", d)
    store.replace_records("labels", sorted(labels, key=lambda l: l.claim_id))
    counts = {k: sum(l.label == k for l in labels) for k in ("correct", "incorrect", "not_enough_information")}
    click.echo(" ".join(f"{k}={v}" for k, v in counts.items()))


def _require_labels(store: RunStore):
    records = store.load()
    if not records.labels:
        click.echo("labels missing: run `iuq label` first", err=True)
        sys.exit(EXIT_CONFIG)
    return records


@main.command(name="eval")
@click.option("--out", type=click.Path(dir_okay=False), help="write the table as tab-separated text")
@click.option("--methods", help="comma-separated method names")
@common
def eval_cmd(out, methods, **kwargs):
    """AUROC, AUPRC and Pearson r with 95% interval for every method."""
    s = settings_from(kwargs)
    store = _load(s)
    records = _require_labels(store)
    vectors, _ = score_run(records, s.score_options(), baselines.load_external_scores(store.path))
    rows = evaluation.evaluate_methods(records, vectors, methods.split(",") if methods else None)
    if out:
        Path(out).write_text(evaluation.write_table(rows))
    excluded = sum(1 for l in records.labels if l.binary is None)
    click.echo(evaluation.render_eval(rows), nl=False)
    click.echo(f"{excluded} claims labeled not_enough_information were excluded")


@main.command()
@click.option("--what", type=click.Choice(["kernels", "generations", "direction"]), default="kernels")
@click.option("--kernels", "kernel_list", default="lin:0.1:0,acc,none,exp:1")
@click.option("--n-values", default="1,2,3,5")
@click.option("--out", type=click.Path(dir_okay=False))
@common
def ablate(what, kernel_list, n_values, out, **kwargs):
    """Kernel, generation-count or direction ablations from stored artifacts."""
    s = settings_from(kwargs)
    store = _load(s)
    records = _require_labels(store)
    opts = s.score_options()
    if what == "kernels":
        try:
            specs = [KernelSpec.parse(k) for k in kernel_list.split(",")]
        except ValueError as exc:
            raise ConfigError(str(exc))
        rows = evaluation.ablate_kernels(records, specs, opts.direction)
        text = evaluation.render_text([{"kernel": r.method_name, "AUROC": r.auroc, "AUPRC": r.auprc,
                                        "n": r.n_claims, "note": r.note} for r in rows])
    elif what == "generations":
        rows = evaluation.ablate_num_generations(records, [int(x) for x in n_values.split(",")], opts)
        text = evaluation.render_eval(rows)
    else:
        rows = evaluation.compare_iuq_rev(records, opts)
        text = evaluation.render_text(rows)
    if out:
        Path(out).write_text(evaluation.write_table(rows))
    click.echo(text, nl=False)


@main.command()
@click.option("--out", type=click.Path(dir_okay=False))
@common
def cost(out, **kwargs):
    """Token usage per stage."""
    s = settings_from(kwargs)
    store = _load(s)
    rows = report.cost_report(store.manifest)
    if out:
        Path(out).write_text(evaluation.write_table(rows))
    click.echo(report.render_cost(rows), nl=False)


@main.command()
@click.option("--out", type=click.Path(file_okay=False), required=True, help="directory for world.json and dataset.jsonl")
@click.option("--topics", "n_topics", type=int, default=20)
@click.option("--seed", type=int, default=0)
@click.option("--fabrication-rate", type=float, default=0.4)
@click.option("--answer-consistency", type=float, default=0.2)
@click.option("--context-driven", is_flag=True)
def synth(out, n_topics, seed, fabrication_rate, answer_consistency, context_driven):
    """Write a seeded synthetic world and its topic file."""
    try:
        world = build_world({"seed": seed, "n_entities": n_topics, "fabrication_rate": fabrication_rate,
                             "answer_consistency": answer_consistency, "context_driven": context_driven})
    except ConfigurationError as exc:
        raise ConfigError(str(exc))
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "world.json").write_text(world.dumps())
    lines = [json.dumps({"topic_id": t.topic_id, "prompt": t.prompt, "reference": t.reference,
                         "tag": t.dataset_tag}, sort_keys=True) for t in world.topics()]
    (d / "dataset.jsonl").write_text("\n".join(lines) + "\n")
    click.echo(f"wrote {d / 'world.json'} and {d / 'dataset.jsonl'} ({len(lines)} topics)")


@main.command()
@click.option("--dataset-tag")
@click.option("--out", type=click.Path(dir_okay=False), help="tab-separated grid")
@click.option("--image", type=click.Path(dir_okay=False), help="heatmap image (.svg or .pdf)")
@common
def landscape(dataset_tag, out, image, **kwargs):
    """Topic by claim-index grid of the unfaithfulness weighting."""
    s = settings_from(kwargs)
    store = _load(s)
    records, vectors, _ = _scores(store, s)
    land = report.landscape(records, vectors, dataset_tag)
    text = evaluation.write_table(land.to_rows())
    if out:
        Path(out).write_text(text)
    if image:
        report.render_heatmap(land, image)
    click.echo(evaluation.render_text(land.to_rows()), nl=False)
    click.echo(f"colour scale [0, {land.scale_max:.4g}]")
    for t in land.flagged:
        click.echo(f"flagged: topic {t} has no scored responses", err=True)


@main.command()
@click.option("--bins", type=int, default=report.DEFAULT_BINS)
@click.option("--image", type=click.Path(dir_okay=False))
@common
def stats(bins, image, **kwargs):
    """Distribution of claim faithfulness and its within-response variance."""
    s = settings_from(kwargs)
    store = _load(s)
    direction = "preceding" if s.direction == "both" else s.direction
    result = report.faithfulness_stats(store.load(), bins, direction)
    if image:
        report.plot_stats(result, image)
    click.echo(report.render_stats(result), nl=False)


@main.command(name="ingest-scores")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", help="override the method name from the file header")
@common
def ingest_scores(path, method, **kwargs):
    """Attach an external method's per-claim scores to the run."""
    s = settings_from(kwargs)
    store = _load(s)
    known = {c.claim_id for c in store.read_records("claims")}
    try:
        parsed = baselines.ingest_external_scores(method, path, store.path, known)
    except ValueError as exc:
        raise ConfigError(str(exc))
    for msg in parsed.rejected + parsed.warnings:
        click.echo(msg, err=True)
    click.echo(f"{parsed.method}: {len(parsed.scores)} scores ({parsed.orientation}), "
               f"{len(parsed.rejected)} rejected")


if __name__ == "__main__":  # pragma: no cover
    main()
