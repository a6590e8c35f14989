import functools
import sys

from pathlib import Path

import click

from vbdr.baseline.traffic import GenConfig
from vbdr.bench import ESTIMATORS
from vbdr.config import VARIANTS, run_config
from vbdr.main import (
    USER_ERRORS,
    logger,
    open_stream,
    run_bench,
    run_generate,
    run_memory,
    run_scan,
    run_selftest,
    set_verbose
)
from vbdr.selftest import FAULTS


def pool_options(fn):
    """Pool and run options shared by scan, bench and memory."""
    options = [
        click.option("--m", "m", type=int, help="physical register count"),
        click.option("--b", "b", type=int,
                     help="log2 of the virtual vector size"),
        click.option("--k", "k", type=int, help="window length in slices"),
        click.option("--zbits", type=int,
                     help="recorder width in bits, 0 derives it from k"),
        click.option("--variant", type=click.Choice(VARIANTS.variants),
                     help="register update discipline"),
        click.option("--seed-a0", "seed_a0", type=str,
                     help="physical mapping seed"),
        click.option("--seed-a1", "seed_a1", type=str,
                     help="opposite host seed"),
        click.option("--workers", type=int, help="worker threads"),
        click.option("--config", "config_file",
                     type=click.Path(exists=True, dir_okay=False,
                                     path_type=Path),
                     help="key=value config file, overridden by flags"),
        click.option("-v", "--verbose", is_flag=True),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def make_config(config_file, **flags):
    config = run_config()
    if config_file is not None:
        config.load(config_file)
    # string values, e.g. hex seeds, go through the option converters
    config.override(flags)
    config.validate()
    return config


def reports_errors(fn):
    """Turn project errors into a message and exit status 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except USER_ERRORS as e:
            raise click.ClickException(str(e)) from e
    return wrapper


@click.group()
def main():
    pass


@main.command()
@pool_options
@click.option("--input", "input_path", help="event file, - for stdin")
@click.option("--output", "output_path", help="output file, - for stdout")
@click.option("--slice-len", "slice_len", type=float,
              help="slice duration in seconds")
@click.option("--origin", type=float, help="timestamp of slice 0")
@click.option("--threshold", type=float,
              help="report hosts estimated at or above this value")
@click.option("--candidates", type=int, help="tracked host capacity")
@reports_errors
def scan(config_file, verbose, input_path, output_path, **flags):
    """Estimate per-host cardinalities of an event stream."""
    set_verbose(verbose)
    config = make_config(config_file, input=input_path, output=output_path,
                         **flags)
    with open_stream(config.input, 'r') as fin, \
            open_stream(config.output, 'w') as fout:
        run_scan(config, fin, fout)


@main.command()
@pool_options
@click.argument("generator_config",
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--output", "output_path", help="report file, - for stdout")
@click.option("--estimator", "estimators", multiple=True,
              type=click.Choice(ESTIMATORS),
              help="estimators to compare, all by default")
@click.option("--seed", type=int, help="override the generator seed")
@click.option("--timing/--no-timing", default=None,
              help="report throughput")
@reports_errors
def bench(config_file, verbose, generator_config, output_path, estimators,
          seed, **flags):
    """Compare estimators on a generated stream."""
    set_verbose(verbose)
    config = make_config(config_file, output=output_path, **flags)
    gen = GenConfig.load(generator_config, seed=seed)
    if flags.get("k") is not None and flags["k"] != gen.k:
        logger.warning("--k %d ignored, the generator window is k=%d",
                       flags["k"], gen.k)
    with open_stream(config.output, 'w') as fout:
        run_bench(config, gen, fout, estimators or ESTIMATORS)


@main.command()
@pool_options
@click.option("--n", "n_per_counter", type=float,
              help="elements per counter for the LFPM comparison")
@reports_errors
def memory(config_file, verbose, n_per_counter, **flags):
    """Print the memory of one register of every variant."""
    set_verbose(verbose)
    config = make_config(config_file, **flags)
    run_memory(config, sys.stdout, n_per_counter)


@main.command()
@click.argument("generator_config",
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-o", "--output", default="-", help="event file")
@click.option("--truth", type=click.Path(dir_okay=False),
              help="ground truth sidecar CSV")
@click.option("--seed", type=int, help="override the generator seed")
@click.option("--numeric", is_flag=True,
              help="write host ids as integers")
@click.option("-v", "--verbose", is_flag=True)
@reports_errors
def generate(generator_config, output, truth, seed, numeric, verbose):
    """Write a synthetic event stream and its ground truth."""
    set_verbose(verbose)
    gen = GenConfig.load(generator_config, seed=seed)
    with open_stream(output, 'w') as fout:
        if truth is None:
            run_generate(gen, fout, dotted=not numeric)
        else:
            with open_stream(truth, 'w') as truth_out:
                run_generate(gen, fout, truth_out, dotted=not numeric)


@main.command()
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--inject-fault", "fault", type=click.Choice(list(FAULTS)),
              help="break the sketch on purpose; the suite must fail")
@click.option("-v", "--verbose", is_flag=True)
@reports_errors
def selftest(workers, seed, fault, verbose):
    """Run the property suite at reduced scale."""
    set_verbose(verbose)
    if not run_selftest(workers, seed, fault):
        sys.exit(1)


if __name__ == "__main__":
    main()
