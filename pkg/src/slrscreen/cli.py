"""Command line interface.

Every command prints a JSON result to stdout (the funnel report can also come
out as CSV) and machine-readable errors to stderr, so the pipeline can sit
inside larger review tooling without screen-scraping.
"""

import json
import sys

import click

from . import pipeline
from .checkpoint import IntegrityError, LockHeld, ParkedRecordsRemain, StageOrderError
from .config import ConfigError, load_config
from .gateway import GatewayError
from .ingest import ParseError
from .promptforge import ApprovalConflict
from .server import create_app
from .stages import GateError, ModelDistinctnessError
from .validation import SamplingError


def _fail(code: str, message: str, exit_code: int = 1, **extra):
    click.echo(json.dumps({"error": code, "message": message, **extra}, sort_keys=True), err=True)
    sys.exit(exit_code)


def _emit(result):
    click.echo(json.dumps(result, indent=2, sort_keys=True))


def _run(fn):
    """Execute one command body, translating every known failure into a
    stable error code."""
    try:
        return fn()
    except ConfigError as exc:
        _fail("config", str(exc))
    except LockHeld as exc:
        _fail("lock-held", str(exc))
    except StageOrderError as exc:
        _fail("stage-order", str(exc), stage=exc.stage, missing=exc.missing)
    except ParkedRecordsRemain as exc:
        _fail("parked-records", str(exc))
    except IntegrityError as exc:
        _fail("integrity", str(exc))
    except GateError as exc:
        _fail("gate", str(exc))
    except ModelDistinctnessError as exc:
        _fail("model-distinctness", str(exc))
    except ApprovalConflict as exc:
        _fail("approval-conflict", str(exc))
    except pipeline.ReviewConflict as exc:
        _fail("review-conflict", str(exc))
    except pipeline.PipelineError as exc:
        _fail("pipeline", str(exc))
    except ParseError as exc:
        _fail("parse", str(exc))
    except SamplingError as exc:
        _fail("sampling", str(exc))
    except GatewayError as exc:
        _fail("gateway", str(exc))
    except KeyError as exc:
        _fail("not-found", str(exc.args[0]) if exc.args else str(exc))
    except ValueError as exc:
        _fail("invalid", str(exc))


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(), help="pipeline config YAML")
@click.option("--checkpoint-dir", default=None, type=click.Path(), help="override the checkpoint directory")
@click.option("--seed", default=None, type=int, help="override the configured seed")
@click.option("--concurrency", default=None, type=int, help="override worker count")
@click.option("--provider-cassette", default=None, type=click.Path(), help="replay provider traffic from a cassette")
@click.option("--allow-same-models", is_flag=True, default=False, help="waive the distinct-models check")
@click.pass_context
def main(ctx, config_path, checkpoint_dir, seed, concurrency, provider_cassette, allow_same_models):
    """Multi-agent screening pipeline for systematic literature reviews."""
    ctx.obj = _run(
        lambda: load_config(
            config_path,
            checkpoint_dir=checkpoint_dir,
            seed=seed,
            concurrency=concurrency,
            provider_cassette=provider_cassette,
            # the flag can only turn the waiver on; never silently downgrade
            allow_same_models=True if allow_same_models else None,
        )
    )


@main.command()
@click.pass_obj
def ingest(config):
    """Parse, normalize and deduplicate the configured export files."""
    _emit(_run(lambda: pipeline.cmd_ingest(config)))


@main.command()
@click.pass_obj
def enrich(config):
    """Fill missing abstracts from the configured providers."""
    _emit(_run(lambda: pipeline.cmd_enrich(config)))


@main.group()
def prompts():
    """Draft and approve the per-phase prompt texts."""


@prompts.command("generate")
@click.pass_obj
def prompts_generate(config):
    _emit(_run(lambda: pipeline.cmd_prompts_generate(config)))


@prompts.command("approve")
@click.argument("phase")
@click.argument("role")
@click.option("--decision", type=click.Choice(["approved", "rejected"]), required=True)
@click.option("--reviewer", default="", help="who is signing off (required to approve)")
@click.option("--note", default="", help="reviewer note, mostly for rejections")
@click.option("--at", default="", help="decision timestamp, if you want one recorded")
@click.pass_obj
def prompts_approve(config, phase, role, decision, reviewer, note, at):
    _emit(_run(lambda: pipeline.cmd_prompts_approve(
        config, phase, role, decision, reviewer=reviewer, note=note, at=at)))


@main.group()
def run():
    """Run an agent stage over its input records."""


def _stage_command(name, stage, doc):
    @run.command(name, help=doc)
    @click.pass_obj
    def _cmd(config, _stage=stage):
        _emit(_run(lambda: pipeline.cmd_run_stage(config, _stage)))
    return _cmd


_stage_command("qc", "quality_control", "Single-agent quality-control pass.")
_stage_command("screen", "screening", "Dual-agent screening pass.")
_stage_command("relevance", "relevance", "Dual-agent relevance pass.")


@main.group()
def report():
    """Derived views over the checkpoint state."""


@report.command("funnel")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--out", default=None, type=click.Path(), help="write to a file instead of stdout")
@click.pass_obj
def report_funnel(config, fmt, out):
    text = _run(lambda: pipeline.cmd_report_funnel(config, fmt))
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _emit({"written": out, "format": fmt})
    else:
        click.echo(text, nl=not text.endswith("\n"))


@main.group()
def fn():
    """False-negative audit of excluded records."""


@fn.command("sample")
@click.argument("stage")
@click.option("--n", type=int, required=True, help="sample size (minimum 30)")
@click.option("--seed", type=int, default=None, help="draw seed; defaults to the run seed")
@click.option("--sheet", default=None, type=click.Path(), help="also write a labelling sheet CSV here")
@click.pass_obj
def fn_sample(config, stage, n, seed, sheet):
    _emit(_run(lambda: pipeline.cmd_fn_sample(config, stage, n, seed=seed, sheet_path=sheet)))


@fn.command("estimate")
@click.option("--population", type=int, default=None,
              help="excluded population size; defaults to the sampled stages' totals")
@click.option("--labels-csv", default=None, type=click.Path(),
              help="filled labelling sheet to merge before estimating")
@click.pass_obj
def fn_estimate(config, population, labels_csv):
    _emit(_run(lambda: pipeline.cmd_fn_estimate(config, population=population, labels_csv=labels_csv)))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.pass_obj
def serve(config, host, port):
    """Serve the HTTP API over this checkpoint directory."""
    import uvicorn

    store = pipeline.open_store(config)

    def _serve():
        # hold the directory lock for the server's lifetime so batch commands
        # cannot race the mutating routes
        with store.lock():
            uvicorn.run(create_app(config), host=host, port=port)

    _run(_serve)


if __name__ == "__main__":
    main()
