"""Initialization sensitivity with one restart and with twenty.

Usage: python3 scripts/init_sweep.py [--seeds 10] [--out-dir .]
"""

import argparse
import json
from pathlib import Path

from displift.fitter import FitConfig
from displift.synth import SceneSpec, sweep_init

DISTANCES = [0.1, 0.5, 1.0, 2.0]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--shape", default="stool")
    parser.add_argument("--out-dir", default=".")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = {"single": FitConfig(restarts=1, steps=300), "multi": FitConfig(restarts=20, steps=150)}
    for name, config in runs.items():
        report = sweep_init(DISTANCES, SceneSpec(args.shape), config, range(args.seeds))
        worst = {d: max(r["loss"] / report.floors[r["seed"]] for r in report.records if r["value"] == d) for d in DISTANCES}
        for d, median in report.medians.items():
            print(f"{name:6s} distance {d:<4} median loss {median:.3e}  worst loss/floor {worst[d]:.3f}")
        (out / f"sweep-init-{name}.json").write_text(json.dumps(report.to_json(), indent=2))
        (out / f"sweep-init-{name}.csv").write_text(report.to_csv())


if __name__ == "__main__":
    main()
