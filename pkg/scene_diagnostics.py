#!/usr/bin/env python3
"""
Diagnostic report for a generated scene: what is in it, how much of each
instance is visible and whether each object's scale suits the fixed
clustering setup.
"""

import pandas as pd

OPTIMAL_SCALE_RANGE = (0.10, 0.30)


def analyze_scene(scene, catalog, optimal_range=OPTIMAL_SCALE_RANGE, relevance_visibility=0.5):
    """
    Per-instance and per-category tables.

    Returns:
        dict with 'instances' and 'categories' DataFrames and a 'summary' dict
    """
    points = scene.labels['instance'].value_counts() if scene.labels is not None else pd.Series(dtype=int)
    instances = pd.DataFrame([
        {
            'instance': i,
            'model_id': inst.model_id,
            'name': catalog[inst.model_id].name,
            'visibility': inst.visibility,
            'relevant': inst.visibility > relevance_visibility,
            'points': int(points.get(i, 0)),
        }
        for i, inst in enumerate(scene.instances)
    ], columns=['instance', 'model_id', 'name', 'visibility', 'relevant', 'points'])

    lo, hi = optimal_range
    categories = instances.groupby(['model_id', 'name'], as_index=False).agg(
        instances=('instance', 'count'),
        relevant=('relevant', 'sum'),
        points=('points', 'sum'),
        mean_visibility=('visibility', 'mean'),
    )
    categories['scale'] = [catalog[m].scale for m in categories['model_id']]
    categories['in_optimal_range'] = categories['scale'].between(lo, hi)

    summary = {
        'scene_id': scene.scene_id,
        'instances': len(instances),
        'relevant': int(instances['relevant'].sum()),
        'categories': len(categories),
        'points': 0 if scene.cloud is None else len(scene.cloud),
        'placement_failures': scene.flags.get('placement_failures', 0),
        'sampled_with_replacement': bool(scene.flags.get('sampled_with_replacement', False)),
    }
    return {'instances': instances, 'categories': categories, 'summary': summary}


def format_report(analysis, optimal_range=OPTIMAL_SCALE_RANGE):
    summary = analysis['summary']
    lines = ["=" * 70, f"SCENE DIAGNOSTIC ANALYSIS: {summary['scene_id']}", "=" * 70]
    lines.append(f"\nInstances: {summary['instances']} ({summary['relevant']} relevant)")
    lines.append(f"Categories: {summary['categories']}")
    lines.append(f"Labelled points: {summary['points']}")

    if summary['placement_failures']:
        lines.append(f"  ⚠️  {summary['placement_failures']} instance(s) could not be placed")
    if summary['sampled_with_replacement']:
        lines.append("  ⚠️  fewer visible points than requested, sampled with replacement")

    lines.append("\nCategories:")
    for row in analysis['categories'].itertuples(index=False):
        mark = "✓ " if row.in_optimal_range else "⚠️ "
        lines.append(f"  {mark} {row.name:10s} scale={row.scale * 100:5.1f} cm  instances={row.instances}  "
                     f"relevant={row.relevant}  points={row.points}")
        if not row.in_optimal_range:
            side = "small" if row.scale < optimal_range[0] else "large"
            lines.append(f"      → too {side} for the fixed bandwidth without scale normalization")

    lines.append("\nInstances:")
    for row in analysis['instances'].itertuples(index=False):
        lines.append(f"  [{row.instance}] {row.name:10s} visibility={row.visibility:.2f} points={row.points}")
    lines.append("\n" + "=" * 70)
    return "\n".join(lines)
