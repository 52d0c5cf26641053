"""Command-line interface: serve, ingest, query, chat, eval."""

from __future__ import annotations

import json
import sys

import click

from .addrep import AddRepConfig, PipelineMode, stream_events
from .agents import BackendError
from .config import ENV_BACKEND_URL, ENV_KB_DIR, ENV_PORT, Engine, load_config
from .embed import EmbeddingError
from .evalharness import load_dataset, run_eval
from .ingest import IngestError
from .kb import KnowledgeBaseError


def _engine(config_path, backend_url, kb_dir, **extra) -> Engine:
    cfg = load_config(config_path, backend_url=backend_url, kb_dir=kb_dir, **extra)
    return Engine(cfg)


common = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON config file."),
    click.option("--backend-url", envvar=ENV_BACKEND_URL, default=None,
                 help="Inference server base URL, or 'stub'."),
    click.option("--kb-dir", envvar=ENV_KB_DIR, default=None,
                 help="Knowledge base directory."),
]


def with_common(fn):
    for deco in reversed(common):
        fn = deco(fn)
    return fn


@click.group()
def main():
    """Local retrieval-augmented Q&A over your own documents."""


@main.command()
@with_common
@click.option("--port", envvar=ENV_PORT, type=int, default=None)
@click.option("--host", default=None)
@click.option("--ui-dir", "frontend_dir", type=click.Path(exists=True), default=None,
              help="Built web UI to serve at / (e.g. frontend/dist).")
def serve(config_path, backend_url, kb_dir, port, host, frontend_dir):
    """Run the HTTP service."""
    from .server import serve as run_server

    cfg = load_config(
        config_path, backend_url=backend_url, kb_dir=kb_dir, port=port, host=host,
        frontend_dir=frontend_dir,
    )
    run_server(cfg)


@main.command()
@with_common
@click.argument("files", nargs=-1, required=True, type=click.Path())
@click.option("--filter-agent/--no-filter-agent", default=None,
              help="Run the snippet-approval agent during ingestion.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def ingest(config_path, backend_url, kb_dir, files, filter_agent, as_json):
    """Ingest documents into the knowledge base."""
    engine = _engine(config_path, backend_url, kb_dir)
    records = []
    for path in files:
        try:
            record = engine.ingest_path(path, filter_agent=filter_agent)
        except (IngestError, BackendError, EmbeddingError, OSError) as exc:
            click.echo(f"error: {path}: {exc}", err=True)
            sys.exit(1)
        records.append(record)
        if not as_json:
            click.echo(
                f"{record.doc_id}\t{record.title}\t{record.snippet_count} snippets "
                f"(rule-dropped {record.dropped_by_rule}, agent-dropped {record.dropped_by_agent})"
            )
    engine.save_kb()
    if as_json:
        click.echo(json.dumps([r.to_json() for r in records], ensure_ascii=False))


@main.command()
@with_common
@click.argument("query_text", metavar="QUERY")
@click.option("--topk", type=int, default=5)
@click.option("--json", "as_json", is_flag=True)
def query(config_path, backend_url, kb_dir, query_text, topk, as_json):
    """Retrieve the nearest knowledge snippets for a query."""
    engine = _engine(config_path, backend_url, kb_dir)
    try:
        hits = engine.kb.retrieve(query_text, topk)
    except (BackendError, EmbeddingError, KnowledgeBaseError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if as_json:
        click.echo(json.dumps([h.to_json() for h in hits], ensure_ascii=False))
    else:
        if not hits:
            click.echo("[]")
        for hit in hits:
            click.echo(f"{hit.distance:.4f}\t{hit.doc_title}\t{hit.text[:100]}")


@main.command()
@with_common
@click.option("--mode", type=click.Choice([m.value for m in PipelineMode]),
              default=PipelineMode.ADDREP.value)
@click.option("--show-trace", is_flag=True, help="Print pipeline events as they happen.")
def chat(config_path, backend_url, kb_dir, mode, show_trace):
    """Interactive chat; Ctrl-D or 'exit' to quit."""
    from dataclasses import replace
    from .agents import ChatMessage

    engine = _engine(config_path, backend_url, kb_dir)
    cfg = replace(engine.config.addrep, mode=PipelineMode(mode))
    history: list[ChatMessage] = []
    click.echo(f"mode: {mode}; empty line or 'exit' quits")
    while True:
        try:
            line = click.prompt(">", prompt_suffix=" ")
        except (click.Abort, EOFError):
            break
        if not line.strip() or line.strip() == "exit":
            break
        gen = stream_events(line, history, engine.kb, engine.agents, cfg)
        answer_parts: list[str] = []
        while True:
            try:
                event = next(gen)
            except StopIteration as stop:
                result = stop.value
                break
            if event.type == "answer_delta":
                answer_parts.append(event.data["text"])
                click.echo(event.data["text"], nl=False)
            elif event.type == "reasoning_delta" and show_trace:
                click.secho(event.data["text"], nl=False, dim=True)
            elif show_trace and event.type not in ("answer_delta", "reasoning_delta"):
                click.secho(f"[{event.type}] {json.dumps(event.data, ensure_ascii=False)[:160]}",
                            fg="cyan")
            elif event.type == "error":
                click.secho(f"\nerror: {event.data['message']}", fg="red", err=True)
        click.echo()
        if result.used_snippets:
            click.secho("sources:", fg="yellow")
            for hit, reason in result.used_snippets:
                click.echo(f"  [{hit.snippet_id}] {hit.doc_title} (distance {hit.distance:.4f})"
                           + (f": {reason}" if reason else ""))
        history.append(ChatMessage("user", line))
        history.append(ChatMessage("assistant", "".join(answer_parts)))


@main.command(name="eval")
@with_common
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--mode", type=click.Choice([m.value for m in PipelineMode]),
              default=PipelineMode.ADDREP.value)
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--no-reject", is_flag=True, help="Do not offer the [REJECT] escape hatch.")
@click.option("--json", "as_json", is_flag=True)
def eval_cmd(config_path, backend_url, kb_dir, dataset, mode, report_path, no_reject, as_json):
    """Score an MCQ dataset under one retrieval mode."""
    engine = _engine(config_path, backend_url, kb_dir)
    items = load_dataset(dataset)
    report = run_eval(
        items,
        engine.kb,
        engine.agents,
        mode,
        report_path,
        cfg=AddRepConfig(
            topk_per_query=engine.config.addrep.topk_per_query,
            m=engine.config.addrep.m,
            distance_threshold=engine.config.addrep.distance_threshold,
            history_window=engine.config.addrep.history_window,
            mode=PipelineMode(mode),
        ),
        allow_reject=not no_reject,
    )
    if as_json:
        click.echo(json.dumps(report.to_json(), ensure_ascii=False))
    else:
        click.echo(
            f"n={report.n} accuracy={report.accuracy:.3f} "
            f"rejection={report.rejection_rate:.3f} "
            f"macro_f1={report.macro_f1:.3f} micro_f1={report.micro_f1:.3f}"
        )
        click.echo(f"report written to {report_path}")


if __name__ == "__main__":
    main()
