#!/usr/bin/env python3
"""
Command line for the pose estimation pipeline.

    python cli.py generate --count 20 --out scenes
    python cli.py corrupt --scenes scenes
    python cli.py estimate --scenes scenes --out estimates --predictions oracle --sncs on
    python cli.py eval --scenes scenes --estimates estimates --out reports
    python cli.py sweep --out sweep
"""

import dataclasses
import logging
import sys
from pathlib import Path

import click

from errors import PipelineError
from log_config import setup_logging
from object_catalog import build_default_catalog, load_catalog, write_catalog
from pipeline_config import load_config, write_manifest
from pose_estimation_system import (CLOUD_SOURCES, corrupt_dataset, estimate_dataset, evaluate_directories,
                                    generate_dataset, predict_dataset)
from scale_sweep import run_scale_sweep, write_sweep
from scene_diagnostics import analyze_scene, format_report
from scene_generator import load_scene

logger = logging.getLogger(__name__)


def banner(title):
    click.echo("=" * 70)
    click.echo(title)
    click.echo("=" * 70)


def resolve_catalog(config, path=None):
    path = path or config.paths.catalog
    if path is None:
        return build_default_catalog()
    return load_catalog(path)


@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='YAML config file merged over the defaults.')
@click.option('--seed', type=int, default=None, help='Global seed.')
@click.option('--workers', type=click.IntRange(min=1), default=1, show_default=True,
              help='Scene-level worker processes.')
@click.option('--catalog', 'catalog_path', type=click.Path(dir_okay=False), default=None,
              help='Catalog JSON; the built-in catalog when omitted.')
@click.option('--log-level', default='INFO', show_default=True)
@click.option('--log-json', is_flag=True, help='Emit JSON log records.')
@click.pass_context
def cli(ctx, config_path, seed, workers, catalog_path, log_level, log_json):
    """Scale-normalized pose estimation for stacked bin-picking scenes."""
    setup_logging(log_level, json_logs=log_json)
    config = load_config(config_path)
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    ctx.obj = {'config': config, 'workers': workers, 'catalog_path': catalog_path}


def _context(ctx):
    config = ctx.obj['config']
    return config, resolve_catalog(config, ctx.obj['catalog_path'])


@cli.command()
@click.option('--out', type=click.Path(file_okay=False), required=True)
@click.pass_context
def catalog(ctx, out):
    """Write the built-in object catalog."""
    config = ctx.obj['config']
    models = build_default_catalog()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_catalog(out / 'catalog.json', models)
    write_manifest(out, 'catalog', config)
    banner("OBJECT CATALOG")
    for model in models.values():
        click.echo(f"  {model.id}: {model.name:10s} scale={model.scale * 100:5.1f} cm  "
                   f"symmetry={model.symmetry.kind}")


@cli.command()
@click.option('--count', type=click.IntRange(min=0), default=20, show_default=True)
@click.option('--out', type=click.Path(file_okay=False), default=None)
@click.pass_context
def generate(ctx, count, out):
    """Generate labelled stacked scenes."""
    config, models = _context(ctx)
    out = Path(out or config.paths.scenes)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, 'generate', config, count=count)
    if count == 0:
        logger.info("nothing to generate")
        return
    table = generate_dataset(config, models, count, out, workers=ctx.obj['workers'])
    banner("SCENE GENERATION")
    click.echo(table.to_string(index=False))
    click.echo(f"\n{count} scenes written to {out}")


@cli.command()
@click.option('--scenes', type=click.Path(file_okay=False), default=None)
@click.option('--masks', type=click.Path(file_okay=False), default=None,
              help='Directory of external fake depth images named <scene_id>.pfm or .pgm.')
@click.pass_context
def corrupt(ctx, scenes, masks):
    """Apply the Sim-to-Real corruption chain beside each scene."""
    config, models = _context(ctx)
    scenes = Path(scenes or config.paths.scenes)
    table = corrupt_dataset(config, models, scenes, masks, workers=ctx.obj['workers'])
    write_manifest(scenes, 'corrupt', config, masks=masks)
    banner("SIM-TO-REAL CORRUPTION")
    click.echo(table.to_string(index=False))


@cli.command()
@click.option('--scenes', type=click.Path(file_okay=False), default=None)
@click.option('--out', type=click.Path(file_okay=False), required=True)
@click.option('--cloud', type=click.Choice(CLOUD_SOURCES), default='synthetic', show_default=True)
@click.pass_context
def predict(ctx, scenes, out, cloud):
    """Dump oracle predictions as JSON lines and report their losses."""
    config, models = _context(ctx)
    scenes = Path(scenes or config.paths.scenes)
    losses = predict_dataset(config, models, scenes, out, cloud, workers=ctx.obj['workers'])
    losses.to_csv(Path(out) / 'losses.csv', index_label='scene_id')
    write_manifest(out, 'predict', config, cloud=cloud)
    banner("PREDICTOR LOSSES")
    click.echo(losses.to_string())


@cli.command()
@click.option('--scenes', type=click.Path(file_okay=False), default=None)
@click.option('--out', type=click.Path(file_okay=False), required=True)
@click.option('--predictions', default=None, help="'oracle' or a directory of <scene_id>.jsonl files.")
@click.option('--sncs', type=click.Choice(['on', 'off']), default='on', show_default=True)
@click.option('--cloud', type=click.Choice(CLOUD_SOURCES), default='synthetic', show_default=True)
@click.pass_context
def estimate(ctx, scenes, out, predictions, sncs, cloud):
    """Recover instance poses for every scene."""
    config, models = _context(ctx)
    scenes = Path(scenes or config.paths.scenes)
    predictions = predictions or config.paths.predictions
    table = estimate_dataset(config, models, scenes, out, predictions, sncs == 'on', cloud,
                             workers=ctx.obj['workers'])
    write_manifest(out, 'estimate', config, predictions=str(predictions), sncs=sncs, cloud=cloud)
    banner("POSE ESTIMATION")
    click.echo(table.to_string(index=False))


@cli.command(name='eval')
@click.option('--scenes', type=click.Path(file_okay=False), default=None)
@click.option('--estimates', type=click.Path(file_okay=False), required=True)
@click.option('--out', type=click.Path(file_okay=False), default=None)
@click.option('--strict', is_flag=True, help='Fail when a scene with relevant instances has no estimates.')
@click.pass_context
def evaluate(ctx, scenes, estimates, out, strict):
    """Per-object AP, mAP and PR curves."""
    config, models = _context(ctx)
    scenes = Path(scenes or config.paths.scenes)
    out = Path(out or config.paths.reports)
    report = evaluate_directories(config, models, scenes, estimates, strict=strict)
    report.write(out)
    write_manifest(out, 'eval', config, strict=strict)
    banner("EVALUATION REPORT")
    click.echo(report.ap_table().to_string(index=False))
    click.echo(f"\nmAP: {report.mAP if report.mAP is None else f'{report.mAP:.4f}'}")


@cli.command()
@click.option('--out', type=click.Path(file_okay=False), required=True)
@click.option('--plot/--no-plot', default=None, help='Also save an AP-vs-scale plot.')
@click.pass_context
def sweep(ctx, out, plot):
    """AP against object scale with and without scale normalization."""
    config, models = _context(ctx)
    table = run_scale_sweep(config, models)
    plot = config.sweep.plot if plot is None else plot
    write_sweep(table, out, plot=plot)
    write_manifest(out, 'sweep', config)
    banner("SCALE SWEEP")
    click.echo(table.pivot(index='scale', columns='arm', values='ap').to_string())


@cli.command()
@click.argument('scene_dir', type=click.Path(file_okay=False))
@click.pass_context
def inspect(ctx, scene_dir):
    """Print a diagnostic report for one scene directory."""
    config, models = _context(ctx)
    scene = load_scene(scene_dir, models)
    click.echo(format_report(analyze_scene(scene, models, relevance_visibility=config.match.relevance_visibility)))


def main(argv=None):
    """Run the command line and return its exit code."""
    try:
        rv = cli.main(args=argv, prog_name='cli.py', standalone_mode=False)
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except click.ClickException as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except PipelineError as e:
        click.echo(f"error: {e}", err=True)
        return e.exit_code
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except Exception as e:
        logger.exception("unexpected error")
        click.echo(f"internal error: {e}", err=True)
        return 3
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
