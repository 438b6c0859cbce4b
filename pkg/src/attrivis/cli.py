"""Command-line entry points.

Every subcommand reads the same key=value config file; --attribute, --out,
and --seed override the corresponding config entries. Commands exit 0 on
success and 1 with a single machine-readable line on stderr
("error: <Type>: <message>") when a pipeline error occurs.
"""

import sys

import click

from attrivis import pipeline
from attrivis.errors import AttrivisError


def _load(config, out, attribute, seed) -> pipeline.RunConfig:
    cfg = pipeline.parse_config(config) if config else pipeline.RunConfig()
    return pipeline.with_overrides(cfg, out=out, attributes=attribute, seed=seed)


def _common(fn):
    fn = click.option("--config", type=click.Path(exists=True, dir_okay=False),
                      default=None, help="key=value run configuration")(fn)
    fn = click.option("--attribute", multiple=True,
                      help="restrict to this attribute (repeatable)")(fn)
    fn = click.option("--out", default=None, help="output directory")(fn)
    fn = click.option("--seed", type=int, default=None, help="master seed")(fn)
    return fn


def _run(stage, *args):
    try:
        stage(*args)
    except AttrivisError as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        sys.exit(1)


@click.group()
def main():
    """Attribute rating prediction pipeline."""


@main.command()
@_common
def synth(config, attribute, out, seed):
    """Generate the synthetic dataset under <out>/dataset."""
    cfg = _load(config, out, attribute, seed)

    def stage():
        path = pipeline.run_synth(cfg)
        click.echo(f"manifest written to {path}")

    _run(stage)


@main.command()
@_common
def preprocess(config, attribute, out, seed):
    """Crop and resize all images into the tensor cache."""
    cfg = _load(config, out, attribute, seed)
    _run(lambda: pipeline.run_preprocess(cfg))


@main.command()
@_common
def train(config, attribute, out, seed):
    """Train per-fold CNNs and SVM baselines for each attribute."""
    cfg = _load(config, out, attribute, seed)
    _run(lambda: pipeline.run_train(cfg))


@main.command()
@_common
def evaluate(config, attribute, out, seed):
    """Assemble out-of-fold predictions and write the results table."""
    cfg = _load(config, out, attribute, seed)
    _run(lambda: pipeline.run_evaluate(cfg))


@main.command()
@_common
def stats(config, attribute, out, seed):
    """Write the significance table for each attribute."""
    cfg = _load(config, out, attribute, seed)
    _run(lambda: pipeline.run_stats(cfg))


@main.command()
@_common
@click.option("--mode", default="all",
              type=click.Choice(["all", "full", "positive", "negative"]),
              help="mask mode(s) to render")
def visualize(config, attribute, out, seed, mode):
    """Render mean feature images and the channel-energy table."""
    cfg = _load(config, out, attribute, seed)
    _run(lambda: pipeline.run_visualize(cfg, mode))


@main.command(name="run-all")
@_common
def run_all(config, attribute, out, seed):
    """Full pipeline: synth (if configured), preprocess, train, evaluate,
    stats, visualize."""
    cfg = _load(config, out, attribute, seed)
    _run(lambda: pipeline.run_all(cfg))


if __name__ == "__main__":
    main()
