"""Command-line client for the pipeline service.

Thin client: every subcommand posts to the stage endpoints of the HTTP
service — in-process by default, or a remote server via --server.  Exit
codes: 0 success, 2 validation/refusal (bad config, ordering, stale inputs,
missing credentials), 3 runtime failure.
"""

import json
import sys

import click

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _client(server):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _post(ctx, stage, **extra):
    payload = {"out_dir": ctx["out"], "config": ctx["config"]}
    for key in ("seed", "mock_llm", "llm_endpoint", "llm_model", "split"):
        if ctx.get(key) is not None:
            payload[key] = ctx[key]
    payload.update(extra)
    try:
        resp = _client(ctx["server"]).post(f"/stages/{stage}", json=payload)
    except Exception as e:  # transport-level failure
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_RUNTIME)
    if resp.status_code == 200:
        click.echo(json.dumps(resp.json(), indent=2, sort_keys=True))
        return
    detail = resp.json().get("detail", resp.text)
    click.echo(f"error ({resp.status_code}): {detail}", err=True)
    sys.exit(EXIT_VALIDATION if resp.status_code in (400, 409, 422) else EXIT_RUNTIME)


def common_options(fn):
    for opt in reversed([
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="YAML run configuration."),
        click.option("--seed", type=int, default=None, help="Root seed."),
        click.option("--mock-llm", is_flag=True, default=None,
                     help="Use the deterministic offline LLM mock."),
        click.option("--llm-endpoint", default=None, help="LLM endpoint base URL."),
        click.option("--llm-model", default=None, help="LLM model name."),
        click.option("--split", type=click.Choice(["0.1", "0.2", "0.4"]),
                     default=None, help="Label-fraction preset."),
        click.option("--out", required=True, type=click.Path(),
                     help="Artifact output directory."),
        click.option("--server", default=None,
                     help="Remote service URL (default: run in-process)."),
    ]):
        fn = opt(fn)
    return fn


def _ctx(config_path, seed, mock_llm, llm_endpoint, llm_model, split, out, server):
    config = {}
    if config_path:
        import yaml

        with open(config_path) as fh:
            config = yaml.safe_load(fh) or {}
    return {
        "config": config,
        "seed": seed,
        "mock_llm": mock_llm if mock_llm else None,
        "llm_endpoint": llm_endpoint,
        "llm_model": llm_model,
        "split": float(split) if split else None,
        "out": out,
        "server": server,
    }


@click.group()
def main():
    """Heterogeneous-graph drug-trafficking detection pipeline."""


def _stage_command(name, doc):
    @main.command(name=name, help=doc)
    @common_options
    def cmd(config_path, seed, mock_llm, llm_endpoint, llm_model, split, out, server):
        _post(_ctx(config_path, seed, mock_llm, llm_endpoint, llm_model,
                   split, out, server), name)

    cmd.__name__ = f"cmd_{name}"
    return cmd


_stage_command("synth", "Generate a seeded synthetic heterogeneous graph.")
_stage_command("pretrain", "Contrastively pre-train the dual-view encoder.")
_stage_command("augment", "Generate synthetic minority users via the LLM endpoint.")
_stage_command("tune", "Prompt-tune against the frozen encoder.")
_stage_command("eval", "Score the tuned model and the ablation variants.")
_stage_command("pipeline", "Run all stages in order.")


if __name__ == "__main__":
    main()
