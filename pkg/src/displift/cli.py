"""Command-line interface.

Every command prints a JSON result on stdout that embeds the resolved
configuration and seed. Failures print a JSON error object on stderr and
exit with 1 (usage), 2 (bad data) or 3 (numerical failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import DispliftError, MalformedFile
from .fitter import FitConfig, fit_params
from .formats import POINTCLOUD_FORMATS, read_disparity, read_pointcloud, write_disparity, write_pointcloud
from .geometry import PointCloud, ProjectionParams, ViewConfig, normalize_disparity
from .metrics import chamfer, fscore, normalize_pair
from .pipeline import refine
from .projection import project_disparity
from .synth import SceneSpec, make_synthetic_scene, sweep_init, sweep_noise
from .visibility import split_visibility

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("displift")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid JSON ({exc.msg})", offset=exc.pos) from exc


def _write_json(data, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _build(cls, data: dict | None, what: str):
    try:
        return cls.from_json(data or {})
    except DispliftError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad {what} configuration: {exc}") from exc


def _settings(args) -> dict:
    """Load ``--config`` and apply ``--seed`` to the fit and scene sections."""
    config = _read_json(args.config) if args.config else {}
    if not isinstance(config, dict):
        raise UsageError("--config must hold a JSON object")
    unknown = set(config) - {"fit", "view", "scene", "levels", "distances", "seeds", "tau", "min_visible"}
    if unknown:
        raise UsageError(f"unknown configuration sections: {sorted(unknown)}")
    fit = _build(FitConfig, config.get("fit"), "fit")
    if args.seed is not None:
        fit = replace(fit, seed=args.seed)
    return {
        "fit": fit,
        "view": _build(ViewConfig, config.get("view"), "view"),
        "raw": config,
        "seed": fit.seed,
    }


def _disparity(path):
    """Read a disparity map and min-max normalize it over its mask."""
    return normalize_disparity(read_disparity(path))


def _out(args, name: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def cmd_project(args, cfg) -> dict:
    disparity = _disparity(args.disparity)
    params = ProjectionParams.from_json(_read_json(args.params))
    psi = project_disparity(disparity, params, strict=args.strict)
    path = _out(args, args.output)
    write_pointcloud(psi, path, args.format)
    return {
        "output": str(path),
        "points": len(psi),
        "dropped": disparity.n_masked - len(psi),
        "params": params.to_json(),
        "config": {"strict": args.strict},
        "seed": cfg["seed"],
    }


def cmd_fit(args, cfg) -> dict:
    disparity = _disparity(args.disparity)
    prior = read_pointcloud(args.prior)
    visible = split_visibility(prior, cfg["view"])[0] if args.split else prior
    result = fit_params(disparity, visible, cfg["fit"])
    path = _out(args, args.output)
    _write_json(result.params.to_json(), path)
    return {
        "output": str(path),
        "params": result.params.to_json(),
        "fit": result.to_json(),
        "visible_points": len(visible),
        "config": {"fit": cfg["fit"].to_json(), "view": cfg["view"].to_json(), "split": args.split},
        "seed": cfg["seed"],
    }


def cmd_refine(args, cfg) -> dict:
    disparity = _disparity(args.disparity)
    prior = read_pointcloud(args.prior)
    params = ProjectionParams.from_json(_read_json(args.params)) if args.params else None
    gt = read_pointcloud(args.gt) if args.gt else None
    tau = args.tau if args.tau is not None else cfg["raw"].get("tau", 0.01)
    refined, report = refine(
        prior,
        disparity,
        cfg["fit"],
        cfg["view"],
        params=params,
        ground_truth=gt,
        tau=tau,
        min_visible=cfg["raw"].get("min_visible", 32),
    )
    path = _out(args, args.output)
    write_pointcloud(refined, path, args.format)
    out = report.to_json()
    _write_json(out, _out(args, "report.json"))
    out.update({"output": str(path), "seed": cfg["seed"]})
    return out


def cmd_split(args, cfg) -> dict:
    cloud = read_pointcloud(args.cloud)
    visible, occluded = split_visibility(cloud, cfg["view"])
    paths = _out(args, "visible.ply"), _out(args, "occluded.ply")
    write_pointcloud(visible, paths[0], args.format)
    write_pointcloud(occluded, paths[1], args.format)
    return {
        "visible": {"output": str(paths[0]), "points": len(visible)},
        "occluded": {"output": str(paths[1]), "points": len(occluded)},
        "config": {"view": cfg["view"].to_json()},
        "seed": cfg["seed"],
    }


def cmd_eval(args, cfg) -> dict:
    pred, gt = read_pointcloud(args.pred), read_pointcloud(args.gt)
    if args.normalize:
        a, b = normalize_pair(pred, gt)
        pred, gt = PointCloud(a), PointCloud(b)
    precision, recall, f = fscore(pred, gt, args.tau)
    return {
        "chamfer": chamfer(pred, gt),
        "precision": precision,
        "recall": recall,
        "fscore": f,
        "config": {"tau": args.tau, "normalize": args.normalize},
        "seed": cfg["seed"],
    }


def _scene_spec(args, cfg) -> SceneSpec:
    data = _read_json(args.spec) if getattr(args, "spec", None) else cfg["raw"].get("scene", {})
    spec = _build(SceneSpec, data, "scene")
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    return spec


def cmd_synth(args, cfg) -> dict:
    spec = _scene_spec(args, cfg)
    scene = make_synthetic_scene(spec)
    files = {
        "gt": _out(args, "gt.ply"),
        "visible": _out(args, "visible.ply"),
        "disparity": _out(args, "disparity.pfm"),
        "params": _out(args, "params.json"),
        "view": _out(args, "view.json"),
    }
    write_pointcloud(scene.gt_cloud, files["gt"])
    write_pointcloud(scene.visible_points, files["visible"])
    write_disparity(scene.disparity, files["disparity"])
    _write_json(scene.true_params.to_json(), files["params"])
    _write_json(scene.view.to_json(), files["view"])
    return {
        "files": {k: str(v) for k, v in files.items()},
        "points": len(scene.gt_cloud),
        "masked_pixels": scene.disparity.n_masked,
        "params": scene.true_params.to_json(),
        "config": {"scene": spec.to_json()},
        "seed": spec.seed,
    }


def _sweep(args, cfg, kind: str) -> dict:
    raw = cfg["raw"]
    spec = _scene_spec(argparse.Namespace(seed=None), cfg)
    seeds = raw.get("seeds", list(range(10)))
    if kind == "noise":
        report = sweep_noise(raw.get("levels", [0.0, 0.01, 0.02, 0.05, 0.1]), spec, cfg["fit"], seeds)
    else:
        # single-restart fits unless the configuration asks otherwise
        fit = cfg["fit"] if "restarts" in raw.get("fit", {}) else replace(cfg["fit"], restarts=1)
        report = sweep_init(raw.get("distances", [0.1, 0.5, 1.0, 2.0]), spec, fit, seeds)
    stem = f"sweep-{kind}"
    out = report.to_json()
    out["seed"] = cfg["seed"]
    paths = _out(args, stem + ".json"), _out(args, stem + ".csv")
    _write_json(out, paths[0])
    paths[1].write_text(report.to_csv())
    return {
        "outputs": [str(p) for p in paths],
        "medians": out["medians"],
        "floors": out["floors"],
        "config": out["config"],
        "seed": cfg["seed"],
    }


def cmd_sweep_noise(args, cfg) -> dict:
    return _sweep(args, cfg, "noise")


def cmd_sweep_init(args, cfg) -> dict:
    return _sweep(args, cfg, "init")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="overrides the configured seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with fit/view/scene sections")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for output files")
    common.add_argument("--strict", action="store_true", default=argparse.SUPPRESS, help="fail on non-positive depth instead of dropping pixels")

    parser = _Parser(prog="displift", description="Lift disparity maps into point clouds and refine prior shapes.")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None)
    parser.add_argument("--out-dir", default=".")
    parser.add_argument("--strict", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    fmt = {"choices": POINTCLOUD_FORMATS, "default": None, "help": "point cloud format (default: from suffix, binary PLY)"}

    p = sub.add_parser("project", parents=[common], help="lift a disparity map with given parameters")
    p.add_argument("disparity")
    p.add_argument("params", help="parameter JSON with s, t, fov_rad, z_t")
    p.add_argument("-o", "--output", default="projected.ply")
    p.add_argument("--format", **fmt)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("fit", parents=[common], help="fit lifting parameters against a prior cloud")
    p.add_argument("disparity")
    p.add_argument("prior", help="visible prior points (or a full prior with --split)")
    p.add_argument("-o", "--output", default="params.json")
    p.add_argument("--split", action="store_true", help="keep only the prior points visible from the view camera")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("refine", parents=[common], help="fit, lift and merge with the occluded prior")
    p.add_argument("disparity")
    p.add_argument("prior")
    p.add_argument("-o", "--output", default="refined.ply")
    p.add_argument("--params", help="skip fitting and use these parameters")
    p.add_argument("--gt", help="ground-truth cloud for before/after metrics")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--format", **fmt)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("split", parents=[common], help="split a cloud into visible and occluded parts")
    p.add_argument("cloud")
    p.add_argument("--format", **fmt)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", parents=[common], help="Chamfer distance and f-score between two clouds")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--normalize", action="store_true", help="scale both clouds by the ground truth's bounding box")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    p.add_argument("spec", nargs="?", help="scene JSON (default: the config's scene section)")
    p.set_defaults(func=cmd_synth)

    for name, func in (("sweep-noise", cmd_sweep_noise), ("sweep-init", cmd_sweep_init)):
        p = sub.add_parser(name, parents=[common], help=f"{name.split('-')[1]} sensitivity sweep")
        p.add_argument("sweep_config", nargs="?", help="JSON with scene, fit, seeds and levels or distances")
        p.set_defaults(func=func)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if getattr(args, "sweep_config", None):
            args.config = args.sweep_config
        cfg = _settings(args)
        result = args.func(args, cfg)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except DispliftError as exc:
        print(json.dumps(exc.to_json()), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_DATA)
    except ValueError as exc:
        # remaining value errors come from invalid options, not input data
        return _fail("UsageError", str(exc), EXIT_USAGE)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
