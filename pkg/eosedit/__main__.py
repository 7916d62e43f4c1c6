""" command-line interface. For instructions run `python -m eosedit --help` """
import sys
from functools import wraps

import click
import pydantic

from .config import config
from .log import log, EoseditError, EXIT_INPUT, EXIT_OK, EXIT_PIPELINE
from .pipeline import Pipeline, RunConfig
from .pipeline.pipeline import load_run_vocabulary, tokenize_prompt
from .version import __version__

# flag name -> RunConfig field
RUN_CONFIG_FLAGS = {
    "vocab": "vocab_path",
    "merges": "merges_path",
    "encoder_weights": "encoder_weights_path",
    "backend": "backend_id",
    "model_path": "model_path",
    "seed": "seed",
    "steps": "steps",
    "cfg": "cfg_scale",
    "w": "w",
    "out": "out_dir",
    "num_workers": "num_workers",
}


def run_options(command):
    """Adds the flags shared by every command and turns them into a :class:`RunConfig`
    passed as ``run_config``."""

    options = [
        click.option("--config", "config_file", type=click.Path(), help="Run config .yaml/.json."),
        click.option("--vocab", type=click.Path(), help="Tokenizer vocabulary (vocab.json)."),
        click.option("--merges", type=click.Path(), help="Tokenizer merges (merges.txt)."),
        click.option("--encoder-weights", type=click.Path(), help="Text encoder archive."),
        click.option("--backend", type=click.Choice(["toy", "sd14"]), help="Sampling backend."),
        click.option("--model-path", type=click.Path(), help="SD 1.4 checkpoint directory."),
        click.option("--seed", type=int, help="Seed of the initial latent."),
        click.option("--steps", type=int, help="Denoising steps (default 50)."),
        click.option("--cfg", type=float, help="Classifier-free guidance scale."),
        click.option("--w", type=float, help="Edit guidance scale (default 1.0)."),
        click.option("--out", type=click.Path(), help="Output directory."),
        click.option("--num-workers", type=int, help="Threads for independent generations."),
        click.option(
            "--logging-level",
            type=click.Choice(["debug", "info", "warning", "error"]),
            help="Lowest level of log messages shown.",
        ),
    ]

    @wraps(command)
    def _command(config_file=None, logging_level=None, **kwargs):
        """Build the run config from the file and the flags, flags win."""
        if logging_level is not None:
            config.logging_level = logging_level
        overrides = {field: kwargs.pop(flag) for flag, field in RUN_CONFIG_FLAGS.items()}
        run_config = RunConfig.load(config_file, **overrides)
        return command(run_config=run_config, **kwargs)

    for option in reversed(options):
        _command = option(_command)
    return _command


@click.group()
@click.version_option(version=__version__, prog_name="eosedit")
def cli():
    """Zero-shot prompt editing through the <EOS> slot of the text conditioning."""


@cli.command()
@click.argument("prompt")
@run_options
def tokenize(run_config: RunConfig, prompt: str):
    """Print the token layout of PROMPT as json."""
    vocab = load_run_vocabulary(run_config)
    click.echo(tokenize_prompt(vocab, prompt).json(indent=4))


@cli.command()
@click.argument("prompt")
@click.option("--name", default="embedding", show_default=True, help="Output file stem.")
@run_options
def encode(run_config: RunConfig, prompt: str, name: str):
    """Encode PROMPT and dump its hidden states to OUT/NAME.safetensors."""
    Pipeline.from_config(run_config).encode(prompt, name=name)


@cli.command()
@click.argument("target")
@click.option("--source", "source_prompt", help="Source prompt.")
@click.option("--source-embedding", type=click.Path(), help="Dumped source embedding.")
@click.option("--name", default="edited", show_default=True, help="Output file stem.")
@run_options
def edit(run_config: RunConfig, target: str, source_prompt, source_embedding, name: str):
    """Write W times the <EOS> state of TARGET into the source's <EOS> slot."""
    Pipeline.from_config(run_config).edit(
        source_prompt, target, source_embedding=source_embedding, name=name
    )


@cli.command()
@click.argument("prompt", required=False)
@click.option("--embedding", type=click.Path(), help="Generate from a dumped embedding.")
@click.option("--progress/--no-progress", default=False, help="Show a progress bar.")
@run_options
def generate(run_config: RunConfig, prompt, embedding, progress: bool):
    """Generate an image from PROMPT or from a dumped embedding."""
    pipeline = Pipeline.from_config(run_config)
    pipeline.generate(prompt=prompt, embedding=embedding, progress=progress)


@cli.command()
@click.argument("source")
@click.argument("target")
@click.option("--num-seeds", default=1, show_default=True, help="Pairs for consecutive seeds.")
@run_options
def compare(run_config: RunConfig, source: str, target: str, num_seeds: int):
    """Same-seed pair: SOURCE as is and with the <EOS> of TARGET."""
    Pipeline.from_config(run_config).compare(source, target, num_seeds=num_seeds)


@cli.command()
@click.argument("unsafe")
@click.argument("replacement")
@click.option("--num-seeds", default=1, show_default=True, help="Pairs for consecutive seeds.")
@run_options
def moderate(run_config: RunConfig, unsafe: str, replacement: str, num_seeds: int):
    """Moderation recipe: compare with UNSAFE edited toward REPLACEMENT."""
    Pipeline.from_config(run_config).moderate(unsafe, replacement, num_seeds=num_seeds)


@cli.command()
@click.argument("source")
@click.argument("attributes", nargs=-1)
@run_options
def baseline(run_config: RunConfig, source: str, attributes):
    """Generate from 'SOURCE, ATTRIBUTE, ...' as plain text."""
    Pipeline.from_config(run_config).baseline_concat(source, list(attributes))


@cli.command()
@click.argument("source")
@click.argument("target")
@click.option("--w-min", default=0.0, show_default=True, help="Smallest guidance scale.")
@click.option("--w-max", default=2.0, show_default=True, help="Largest guidance scale.")
@click.option("--count", default=9, show_default=True, help="Number of guidance scales.")
@run_options
def sweep(
    run_config: RunConfig, source: str, target: str, w_min: float, w_max: float, count: int
):
    """Same-seed generations of SOURCE edited toward TARGET over a range of W."""
    Pipeline.from_config(run_config).sweep(source, target, w_min, w_max, count)


def main(args=None) -> int:
    """Run the command line, returning the process exit code.

    0 on success, 2 for invalid input or configuration, 3 for pipeline failures and 4 when a
    backend can not be loaded.
    """
    try:
        cli.main(args=args, prog_name="eosedit", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return EXIT_INPUT
    except click.exceptions.Abort:
        return EXIT_PIPELINE
    except EoseditError as e:
        return e.exit_code
    except pydantic.ValidationError as e:
        log.error(f"invalid configuration: {e}")
        return EXIT_INPUT
    return EXIT_OK


def run():
    """Console script entry point."""
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":

    run()
