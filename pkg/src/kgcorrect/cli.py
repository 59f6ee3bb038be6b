"""Command-line front end: extract, correct, eval, index, bundles.

Exit codes are a stable CI contract: 0 success, 1 check-failure (corrections
were needed under --check), 2 usage or IO error.
"""
from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import contextstore, corrector, judge as judge_mod, textmetrics
from .kgraph import ORIGIN_CONTEXT, build_graph
from .matching import Matcher, MatcherConfig, load_aliases
from .triplets import extract_triplets, serialize_triplets, split_sentences

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


def load_config(path) -> dict[str, str]:
    """Flat key=value config document; # starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


class Settings:
    def __init__(self, config: dict[str, str], seed, threshold, strict, quiet):
        def pick(flag, key, cast, default):
            if flag is not None:
                return flag
            if key in config:
                raw = config[key]
                return raw.lower() in ("1", "true", "yes") if cast is bool else cast(raw)
            return default

        self.seed = pick(seed, "seed", int, 0)
        self.threshold = pick(threshold, "threshold", float, MatcherConfig().threshold)
        self.strict = pick(strict if strict else None, "strict", bool, False)
        self.quiet = pick(quiet if quiet else None, "quiet", bool, False)
        self.api_key_env = config.get("judge_api_key_env", judge_mod.DEFAULT_API_KEY_ENV)

    def matcher_config(self, alias_table=None) -> MatcherConfig:
        return MatcherConfig(threshold=self.threshold, alias_table=alias_table or {})

    def info(self, message: str) -> None:
        if not self.quiet:
            click.echo(message, err=True)


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_ERROR)


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        _fail(f"cannot read {path}: {exc.strerror or exc}")


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Flat key=value config file mirroring the global flags.")
@click.option("--seed", type=int, default=None, help="Seed for randomized operations.")
@click.option("--threshold", type=float, default=None, help="Embedding match threshold.")
@click.option("--strict", is_flag=True, default=False,
              help="Eliminate sentences with no extractable triplets.")
@click.option("--quiet", is_flag=True, default=False, help="Suppress non-data output.")
@click.pass_context
def main(ctx, config_path, seed, threshold, strict, quiet):
    """Knowledge-graph grounded hallucination correction."""
    config = {}
    if config_path is not None:
        try:
            config = load_config(config_path)
        except OSError as exc:
            raise click.UsageError(f"cannot read config {config_path}: {exc}")
    try:
        ctx.obj = Settings(config, seed, threshold, strict, quiet)
    except ValueError as exc:
        raise click.UsageError(str(exc))


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(), help="Input document.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Triplet records output.")
@click.pass_obj
def extract(settings: Settings, in_path, out_path):
    """Extract knowledge triplets from a document."""
    text = _read_text(in_path)
    triplets = extract_triplets(split_sentences(text))
    payload = serialize_triplets(triplets)
    Path(out_path).write_text(payload + ("\n" if payload else ""), encoding="utf-8")
    settings.info(f"extracted {len(triplets)} triplet(s)")


@main.command()
@click.option("--generated", required=True, type=click.Path(), help="Generated document to verify.")
@click.option("--context", "context_path", type=click.Path(), default=None,
              help="Trusted context document.")
@click.option("--store", "store_path", type=click.Path(), default=None,
              help="Pre-built triplet store.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Write the correction report (JSON).")
@click.option("--compact", is_flag=True, help="Write the report as one line.")
@click.option("--aliases", "aliases_path", type=click.Path(), default=None)
@click.option("--check", is_flag=True, help="Exit 1 when corrections were needed.")
@click.option("--strict", "strict_flag", is_flag=True, default=None)
@click.pass_obj
def correct(settings: Settings, generated, context_path, store_path, report_path,
            compact, aliases_path, check, strict_flag):
    """Correct hallucinations in a generated document."""
    if (context_path is None) == (store_path is None):
        _fail("provide exactly one grounding source: --context or --store")
    text = _read_text(generated)
    alias_table = load_aliases(aliases_path) if aliases_path else None
    cfg = settings.matcher_config(alias_table)
    if context_path is not None:
        context_text = _read_text(context_path)
        graph = build_graph(extract_triplets(split_sentences(context_text)), origin=ORIGIN_CONTEXT)
        matcher = Matcher(graph.nodes, cfg=cfg)
    else:
        try:
            store = contextstore.load_store(store_path)
        except (OSError, contextstore.ContextStoreError) as exc:
            _fail(str(exc))
        graph = build_graph(store.triplets, origin=ORIGIN_CONTEXT)
        matcher = Matcher(graph.nodes, cfg=cfg, index=store.index)

    strict = settings.strict if strict_flag is None else strict_flag
    report = corrector.correct(text, graph, matcher_cfg=cfg, strict=strict, matcher=matcher)
    if report_path is not None:
        indent = None if compact else 2
        Path(report_path).write_text(
            json.dumps(report.to_dict(), ensure_ascii=False, indent=indent) + "\n",
            encoding="utf-8")
    click.echo(report.corrected)
    if check and report.corrected != report.original:
        sys.exit(EXIT_CHECK_FAILED)


@main.command()
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--judge", "judge_mode", type=click.Choice(["none", "mock", "live"]), default="none")
@click.option("--judge-fixture", "fixture_path", type=click.Path(), default=None,
              help="Canned replies for the mock judge.")
@click.option("--base-url", default=None, help="Judge endpoint (live mode).")
@click.option("--model", default=None, help="Judge model name (live mode).")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--elimination", is_flag=True, help="Also run the corrector per record.")
@click.option("--workers", type=int, default=1)
@click.pass_obj
def eval(settings: Settings, dataset_path, judge_mode, fixture_path, base_url, model,
         out_path, elimination, workers):
    """Evaluate a dataset of (reference, candidate) pairs."""
    lines = _read_text(dataset_path).splitlines()
    try:
        records = textmetrics.read_dataset(lines)
    except textmetrics.EvaluationError as exc:
        _fail(str(exc))

    client = None
    if judge_mode == "mock":
        if fixture_path is None:
            _fail("--judge mock requires --judge-fixture")
        try:
            client = judge_mod.MockJudgeClient.from_fixture(fixture_path)
        except (OSError, judge_mod.JudgeError) as exc:
            _fail(str(exc))
    elif judge_mode == "live":
        if not base_url or not model:
            _fail("--judge live requires --base-url and --model")
        try:
            client = judge_mod.HttpJudgeClient(judge_mod.LlmEndpointConfig(
                base_url=base_url, model=model, api_key_env=settings.api_key_env))
        except judge_mod.JudgeError as exc:
            _fail(str(exc))

    options = textmetrics.EvalOptions(
        judge_client=client, compute_elimination=elimination,
        matcher_config=settings.matcher_config(), strict=settings.strict)

    ids = [r.id for r in records]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        _fail(f"duplicate record ids: {', '.join(dupes)}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(lambda r: (r.id, textmetrics.score_record(r, options)), records))
        scored.sort(key=lambda pair: pair[0])
        per_record, aggregate = scored, textmetrics.aggregate_scores([s for _, s in scored])
    else:
        per_record, aggregate = textmetrics.evaluate_dataset(records, options)

    output = "\n".join(textmetrics.results_lines(per_record, aggregate)) + "\n"
    if out_path is not None:
        Path(out_path).write_text(output, encoding="utf-8")
        settings.info(f"wrote {len(per_record)} record(s) + aggregate")
    else:
        click.echo(output, nl=False)


@main.group()
def index():
    """Build or query a triplet store's vector index."""


@index.command("build")
@click.option("--corpus", "corpus_paths", required=True, multiple=True, type=click.Path(),
              help="Context corpus file(s), one context per file.")
@click.option("--store", "store_path", required=True, type=click.Path())
@click.pass_obj
def index_build(settings: Settings, corpus_paths, store_path):
    """Extract triplets from a corpus and persist the store."""
    texts = [_read_text(p) for p in corpus_paths]
    store = contextstore.build_store(texts, cfg=settings.matcher_config())
    contextstore.save_store(store, store_path)
    settings.info(f"stored {len(store.triplets)} triplet(s), {len(store.index)} vector(s)")


@index.command("query")
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--text", required=True)
@click.option("-k", "top_k", type=int, default=5)
@click.option("--aliases", "aliases_path", type=click.Path(), default=None)
@click.pass_obj
def index_query(settings: Settings, store_path, text, top_k, aliases_path):
    """Print the top-k entity matches for a query string."""
    try:
        store = contextstore.load_store(store_path)
    except (OSError, contextstore.ContextStoreError) as exc:
        _fail(str(exc))
    alias_table = load_aliases(aliases_path) if aliases_path else None
    cfg = settings.matcher_config(alias_table)
    graph = build_graph(store.triplets, origin=ORIGIN_CONTEXT)
    matcher = Matcher(graph.nodes, cfg=cfg, index=store.index)

    def mention(key: str) -> str:
        return graph.node(key).mentions[0] if graph.has_node(key) else key

    result = matcher.match(text)
    shown: list[tuple[str, float, str]] = []
    if result.matched is not None and result.tier != "embedding":
        shown.append((result.matched, result.score, result.tier))
    if len(shown) < top_k and len(store.index) > 0:
        query_vec = matcher.embedder.embed(text)
        for key, score in store.index.query(query_vec, k=top_k):
            if len(shown) >= top_k:
                break
            if any(s[0] == key for s in shown):
                continue
            shown.append((key, score, "embedding"))
    for key, score, tier in shown:
        click.echo(f"{mention(key)}\t{key}\t{score:.6f}\t{tier}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(),
              help="JSONL of {id, prompt, rag_results: [...]} records.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--augment", "augment_count", type=int, default=0,
              help="Distractor contexts appended per bundle (drawn from the other records).")
@click.pass_obj
def bundles(settings: Settings, in_path, out_path, augment_count):
    """Assemble (and optionally augment) guided-context bundles."""
    raw = _read_text(in_path)
    records = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            records.append((str(rec["id"]), rec.get("prompt", ""), list(rec["rag_results"])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            _fail(f"bad bundle record on line {lineno}: {exc}")

    cfg = settings.matcher_config()
    out = []
    for i, (bundle_id, prompt, rag_results) in enumerate(records):
        try:
            bundle = contextstore.assemble(prompt, rag_results, bundle_id=bundle_id, cfg=cfg)
        except contextstore.GroundingError as exc:
            _fail(f"bundle {bundle_id}: {exc}")
        if augment_count > 0:
            pool = ["\n".join(r[2]) for j, r in enumerate(records) if j != i]
            if augment_count > len(pool):
                _fail(f"bundle {bundle_id}: augment count {augment_count} exceeds pool {len(pool)}")
            bundle = contextstore.augment(bundle, pool, augment_count,
                                          seed=settings.seed + i, cfg=cfg)
        out.append(bundle)
    contextstore.export_bundles(out, out_path)
    settings.info(f"wrote {len(out)} bundle(s)")


if __name__ == "__main__":
    main()
