"""
Scale-sensitivity experiment.
Rows of one object rescaled across a grid of scales are estimated with a
fixed clustering bandwidth, once inside the SNCS and once in camera space.
"""

import dataclasses
import logging
from pathlib import Path

import pandas as pd

from errors import DataError
from point_predictors import OraclePredictor
from pose_estimation_system import run_in_memory
from scene_generator import generate_close_packed_scene, scene_name

logger = logging.getLogger(__name__)

ARMS = (('sncs_on', True), ('sncs_off', False))


def sweep_model(catalog, name):
    for model in catalog.values():
        if model.name == name:
            return model
    raise DataError(f"sweep model '{name}' not in catalog")


def run_scale_sweep(config, catalog):
    """
    AP per scale and arm.

    Returns:
        DataFrame with columns scale, arm, ap, scenes, estimates
    """
    sweep = config.sweep
    base = sweep_model(catalog, sweep.model)
    noise = dataclasses.replace(config.oracle, sigma_translation=0.0,
                                sigma_translation_rel=sweep.sigma_translation_rel)
    bandwidth = sweep.bandwidth * config.sncs.D / 0.20
    run_config = dataclasses.replace(
        config, aggregation=dataclasses.replace(config.aggregation, bandwidth=bandwidth))

    rows = []
    for scale in sweep.scales:
        model = dataclasses.replace(base.rescaled(scale / base.scale), id=0)
        scenes = [
            generate_close_packed_scene(model, config.scenegen, count=sweep.instances,
                                        spacing_factor=sweep.spacing_factor, seed=config.seed + i,
                                        scene_id=scene_name(i))
            for i in range(sweep.scenes_per_scale)
        ]
        for arm, sncs in ARMS:
            report, results = run_in_memory(run_config, {0: model}, scenes, OraclePredictor(noise), sncs)
            rows.append({'scale': scale, 'arm': arm, 'ap': report.mAP, 'scenes': len(scenes),
                         'estimates': sum(len(r.estimates) for r in results)})
            logger.info("sweep point", extra=rows[-1])
    return pd.DataFrame(rows, columns=['scale', 'arm', 'ap', 'scenes', 'estimates'])


def plot_sweep(table, path):
    """AP against scale for both arms."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    import seaborn as sns

    fig, ax = plt.subplots(figsize=(7, 4))
    sns.lineplot(data=table, x='scale', y='ap', hue='arm', marker='o', ax=ax)
    ax.axhline(0.95, color='grey', linestyle='--', linewidth=1)
    ax.set_xlabel('object scale (m)')
    ax.set_ylabel('AP')
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_sweep(table, out_dir, plot=False):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / 'scale_sweep.csv', index=False)
    if plot:
        plot_sweep(table, out_dir / 'scale_sweep.png')
    return out_dir / 'scale_sweep.csv'


if __name__ == "__main__":
    from object_catalog import build_default_catalog
    from pipeline_config import PipelineConfig

    table = run_scale_sweep(PipelineConfig(), build_default_catalog())
    print("=" * 70)
    print("SCALE SWEEP")
    print("=" * 70)
    print(table.pivot(index='scale', columns='arm', values='ap').to_string())
