"""Command-line entry points (`ssi-sentinel <subcommand>`)."""

from __future__ import annotations

import functools
import logging

import click

from . import pipeline
from .corpus import CorpusError
from .evaluation import EvaluationError
from .features import FeatureError
from .models import ModelError
from .nlp import TaggingError
from .pipeline import ConfigError, RunConfig, load_run_config
from .service import StoreError
from .termselect import SelectionError

_ERRORS = (
    ConfigError,
    CorpusError,
    EvaluationError,
    FeatureError,
    ModelError,
    SelectionError,
    StoreError,
    TaggingError,
    FileNotFoundError,
)


def _with_config(fn):
    @click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                  help="Run config (flat TOML).")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                  help="Override a config key.")
    @functools.wraps(fn)
    def wrapper(config_path, overrides, **kwargs):
        try:
            cfg = load_run_config(config_path, overrides)
            return fn(cfg, **kwargs)
        except _ERRORS as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress details.")
def main(verbose: bool) -> None:
    """Surgical-site infection surveillance pipeline."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@_with_config
def synth(cfg: RunConfig) -> None:
    """Generate a seeded synthetic corpus with a truth manifest."""
    out = pipeline.stage_synth(cfg)
    click.echo(f"wrote synthetic corpus under {out}")


@main.command("extract-terms")
@_with_config
def extract_terms(cfg: RunConfig) -> None:
    """Index candidate terms over labeled procedures' windows."""
    path = pipeline.stage_extract_terms(cfg)
    click.echo(f"wrote {path}")


@main.command("select-terms")
@_with_config
def select_terms(cfg: RunConfig) -> None:
    """Rank and filter candidates; write report and selected terms."""
    report, terms = pipeline.stage_select_terms(cfg)
    click.echo(f"wrote {report}")
    click.echo(f"wrote {terms}")


@main.command("build-features")
@_with_config
def build_features(cfg: RunConfig) -> None:
    """Assemble the per-procedure feature matrix."""
    path = pipeline.stage_build_features(cfg)
    click.echo(f"wrote {path}")


@main.command()
@_with_config
def train(cfg: RunConfig) -> None:
    """Train the configured classifier on labeled rows."""
    path = pipeline.stage_train(cfg)
    click.echo(f"wrote {path}")


@main.command()
@_with_config
def calibrate(cfg: RunConfig) -> None:
    """Pin the threshold to the lowest predicted positive probability."""
    path = pipeline.stage_calibrate(cfg)
    click.echo(f"wrote {path}")


@main.command()
@_with_config
def predict(cfg: RunConfig) -> None:
    """Score procedures and flag those at or above the threshold."""
    path = pipeline.stage_predict(cfg)
    click.echo(f"wrote {path}")


@main.command()
@click.option("--train-years", default="", help="Comma-separated training years.")
@click.option("--test-years", default="", help="Comma-separated held-out years.")
@_with_config
def evaluate(cfg: RunConfig, train_years: str, test_years: str) -> None:
    """Train, calibrate and report metrics (optionally on a temporal split)."""
    if train_years:
        cfg.train_years = [int(y) for y in train_years.split(",") if y]
    if test_years:
        cfg.test_years = [int(y) for y in test_years.split(",") if y]
    try:
        json_path, md_path = pipeline.stage_evaluate(cfg)
    except _ERRORS as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {json_path}")
    click.echo(f"wrote {md_path}")


@main.command()
@click.option("--port", type=int, default=None, help="Listen port (overrides config).")
@click.option("--store-path", default=None, help="Store log path (overrides config).")
@_with_config
def serve(cfg: RunConfig, port: int | None, store_path: str | None) -> None:
    """Run the review HTTP service over the prediction store."""
    import uvicorn

    from .corpus import load_procedures
    from .service import PredictionStore, create_app

    if port is not None:
        cfg.port = port
    if store_path is not None:
        cfg.store_log = store_path
    if not cfg.store_log:
        raise click.ClickException("store_log (or --store-path) is required")
    store = PredictionStore(cfg.store_log)
    procedures = load_procedures(cfg.procedures)
    report_path = pipeline._out(cfg, "report.json")
    app = create_app(
        store,
        procedures,
        report_path=report_path if report_path.exists() else None,
        ui_dir=cfg.ui_dir or None,
    )
    uvicorn.run(app, host="127.0.0.1", port=cfg.port, log_level="warning")


@main.command("export-gold")
@click.option("--output", default="gold_export.jsonl", show_default=True,
              help="Destination JSONL file.")
@_with_config
def export_gold(cfg: RunConfig, output: str) -> None:
    """Export reviewer-corrected procedure labels."""
    if not cfg.store_log:
        raise click.ClickException("store_log is required")
    path = pipeline.export_gold_file(cfg, output)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
