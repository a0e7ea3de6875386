"""Command-line front end.

Every subcommand takes the same core flags (--config, --seed, --threads,
--out) and works inside one run directory, so

    sketchflim gen -c exp.ini -o run/
    sketchflim knots -c exp.ini -o run/
    sketchflim sketch -c exp.ini -o run/
    sketchflim fit -c exp.ini -o run/
    sketchflim eval -c exp.ini -o run/

reproduces a full experiment.  Failures exit with 2 (config), 3 (data), or
4 (numeric degeneracy).
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click

from . import pipeline
from .errors import ConfigError, DataError, NumericError
from .io import parse_config, validate_config


def _load(config_path, seed, out) -> tuple[object, Path]:
    if config_path is None:
        raise ConfigError("a --config file is required")
    cfg = parse_config(config_path)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["out_dir"] = out
    if overrides:
        cfg = validate_config(dataclasses.replace(cfg, **overrides))
    out_dir = Path(cfg.out_dir) if cfg.out_dir is not None else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


_EXIT_CODES = ((ConfigError, 2), (DataError, 3), (NumericError, 4))


def _run(action):
    try:
        return action()
    except (ConfigError, DataError, NumericError) as exc:
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                click.echo(f"error: {exc}", err=True)
                sys.exit(code)
        raise


def common_options(fn):
    fn = click.option("--config", "-c", type=click.Path(), help="experiment INI file")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0), default=None,
                      help="override the config seed")(fn)
    fn = click.option("--threads", type=click.IntRange(min=1), default=None,
                      help="worker threads (default: all cores)")(fn)
    fn = click.option("--out", "-o", type=click.Path(), default=None,
                      help="run directory (default: config out_dir or cwd)")(fn)
    return fn


@click.group()
@click.version_option(package_name="sketchflim")
def main():
    """Spline-sketch compression and lifetime estimation for TCSPC/FLIM."""


@main.command()
@common_options
@click.option("--timestamps", is_flag=True, help="also write per-pixel photon streams")
def gen(config, seed, threads, out, timestamps):
    """Simulate histograms and ground truth into the run directory."""
    def action():
        cfg, out_dir = _load(config, seed, out)
        pipeline.run_gen(cfg, out_dir, timestamps=timestamps)
        click.echo(f"wrote {out_dir / pipeline.HIST_FILE} and {out_dir / pipeline.TRUTH_FILE}")
    _run(action)


@main.command()
@common_options
def knots(config, seed, threads, out):
    """Allocate spline knots (Fisher or uniform) and store them."""
    def action():
        cfg, out_dir = _load(config, seed, out)
        ks = pipeline.run_knots(cfg, out_dir)
        levels = " ".join(f"{b:.4f}" for b in ks.boundaries)
        click.echo(f"knots ({cfg.knot_mode}, {cfg.aggregation}): {levels}")
    _run(action)


@main.command()
@common_options
def sketch(config, seed, threads, out):
    """Compress every stored histogram into an M-channel sketch."""
    def action():
        cfg, out_dir = _load(config, seed, out)
        pipeline.run_sketch(cfg, out_dir)
        click.echo(f"wrote {out_dir / pipeline.SKETCH_FILE}")
    _run(action)


@main.command()
@common_options
def fit(config, seed, threads, out):
    """Run the selected estimators over every pixel."""
    def action():
        cfg, out_dir = _load(config, seed, out)
        written = pipeline.run_fit(cfg, out_dir, threads)
        for method, path in written.items():
            click.echo(f"{method}: {path}")
    _run(action)


@main.command(name="eval")
@common_options
def eval_cmd(config, seed, threads, out):
    """Score fit results against ground truth."""
    def action():
        cfg, out_dir = _load(config, seed, out)
        report = pipeline.run_eval(cfg, out_dir)
        for key, rep in report:
            click.echo(f"{key.method}: MAE={rep.mae:.4f} RMSE={rep.rmse:.4f} R2={rep.r_squared:.4f}")
        click.echo(f"wrote {out_dir / pipeline.REPORT_FILE}")
    _run(action)


@main.command()
@common_options
def phasor(config, seed, threads, out):
    """First-harmonic phasor coordinates (raw and IRF-corrected) per pixel."""
    def action():
        cfg, out_dir = _load(config, seed, out)
        n = pipeline.run_phasor(cfg, out_dir)
        click.echo(f"wrote {n} phasor rows to {out_dir / pipeline.PHASOR_FILE}")
    _run(action)


@main.command(name="lut-bench")
@common_options
def lut_bench(config, seed, threads, out):
    """Accuracy sweep over LUT depths against the floating-point baseline."""
    def action():
        cfg, out_dir = _load(config, seed, out)
        report = pipeline.run_lut_bench(cfg, out_dir)
        for key, rep in report:
            depth = "flp" if key.depth is None else f"D={key.depth}"
            click.echo(f"{depth}: MAE={rep.mae:.5f}")
        click.echo(f"wrote {out_dir / pipeline.LUT_BENCH_FILE}")
    _run(action)


if __name__ == "__main__":
    main()
