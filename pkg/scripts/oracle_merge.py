"""Refine degraded priors with ground-truth disparity and compare f-scores.

The prior is the ground-truth cloud subsampled to 25% with isotropic
Gaussian jitter. The visibility window is five times the jitter so the
split keeps both sides of the noisy shell.

Usage: python3 scripts/oracle_merge.py [--scenes 20] [--seed 606] [--jitter 0.02]
       [--resolution 256] [--out oracle_merge.json]
"""

import argparse
import json
from dataclasses import replace

import numpy as np

from displift.fitter import FitConfig
from displift.geometry import PointCloud
from displift.pipeline import refine
from displift.synth import make_synthetic_scene, random_scene_spec


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenes", type=int, default=20)
    parser.add_argument("--seed", type=int, default=606)
    parser.add_argument("--jitter", type=float, default=0.02)
    parser.add_argument("--resolution", type=int, default=256)
    parser.add_argument("--tau", type=float, default=0.01)
    parser.add_argument("--out", default="oracle_merge.json")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    for k in range(args.scenes):
        spec = replace(random_scene_spec(rng), resolution=(args.resolution, args.resolution))
        scene = make_synthetic_scene(spec)
        gt = scene.gt_cloud.points
        keep = rng.random(len(gt)) < 0.25
        prior = PointCloud(gt[keep] + rng.normal(scale=args.jitter, size=(int(keep.sum()), 3)))
        view = replace(scene.view_for(len(prior)), epsilon_vis=5 * args.jitter)
        _, report = refine(prior, scene.disparity, FitConfig(), view, ground_truth=scene.gt_cloud, tau=args.tau)
        before, after = report.metrics["prior"]["fscore"], report.metrics["refined"]["fscore"]
        rows.append({"scene": k, "shape": scene.spec.shape, **report.metrics})
        print(f"{k:2d} {scene.spec.shape:10s} f-score {before:.3f} -> {after:.3f}", flush=True)
    better = sum(r["refined"]["fscore"] >= r["prior"]["fscore"] for r in rows)
    print(f"{better}/{len(rows)} scenes not worse after refinement")
    with open(args.out, "w") as fh:
        json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
