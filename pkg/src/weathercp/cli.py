"""Command line entry point: ``weathercp <subcommand> [options]``.

Errors go to stderr as one JSON object ``{"error": kind, "message": ..., ...}``
and the process exits nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .core import PCDParseError, PointCloud, WVPCFormatError, read_cloud, write_binary, write_pcd
from .voxel import SparseVoxelGrid, apply_mask, voxelize
from .weather import DoubleAugmentationError, RngStream
from .wire import MessageError, encode, message_bits

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CONFIG = 4
EXIT_INTERNAL = 1


class CLIError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_INPUT, **extra):
        super().__init__(message)
        self.kind, self.code, self.extra = kind, code, extra


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="experiment config JSON")
    g.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    g.add_argument("--weather", choices=harness.WEATHER_KINDS)
    g.add_argument("--scheme", choices=harness.SCHEMES, help="restrict to one sharing scheme")
    g.add_argument("--denoiser", choices=("oracle", "heuristic"))
    g.add_argument("--high-intensity", action="store_true",
                   help="fix weather parameters at the extreme ends of the ranges")
    return p


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message, EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="weathercp", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("augment", parents=[common], help="add weather noise to one cloud")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path, help=".wvpc or .pcd")
    p.add_argument("--scenario-id", default="", help="key for per-scenario parameter sampling")

    p = sub.add_parser("voxelize", parents=[common], help="cloud -> labeled voxel summary (JSON)")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)

    p = sub.add_parser("encode", parents=[common], help="cloud -> SVGM message")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)

    p = sub.add_parser("denoise", parents=[common], help="labeled cloud -> denoised SVGM message + metrics")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--metrics", type=Path, help="write confusion and metrics JSON here")

    p = sub.add_parser("run", parents=[common], help="full experiment over a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scenario")
    p.add_argument("root", type=Path)
    p.add_argument("--vehicles", type=int, default=3)
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--spacing", type=float, default=20.0)
    p.add_argument("--scenarios", type=int, default=1)
    p.add_argument("--format", choices=("wvpc", "pcd"), default="wvpc")

    p = sub.add_parser("report", parents=[common], help="convert report JSON to CSV tables")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True, help="CSV path")
    p.add_argument("--kind", choices=("table", "messages"), default="table")
    return parser


def resolve_config(args) -> harness.ExperimentConfig:
    opt = vars(args)
    cfg = harness.load_config(opt["config"]) if "config" in opt else harness.ExperimentConfig()
    changes = {}
    if "seed" in opt:
        changes["seed"] = opt["seed"]
    if "weather" in opt:
        changes["weather"] = opt["weather"]
    if "scheme" in opt:
        changes["schemes"] = (opt["scheme"],)
    if "denoiser" in opt:
        changes["denoiser"] = dataclasses.replace(cfg.denoiser, name=opt["denoiser"])
    if opt.get("high_intensity"):
        changes["high_intensity"] = True
    try:
        return cfg.replace(**changes) if changes else cfg
    except harness.ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise harness.ConfigError("arguments", str(exc)) from None


def _write_cloud(cloud: PointCloud, path: Path):
    (write_pcd if path.suffix == ".pcd" else write_binary)(cloud, path)


def _write_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _resolved_sidecar(cfg, out: Path):
    _write_json(harness.config_to_json(cfg), out.with_name(out.name + ".config.json"))


def cmd_augment(args, cfg):
    cloud = read_cloud(args.input)
    kind = cfg.weather
    scenario_id = args.scenario_id or args.input.resolve().parent.parent.name
    if cfg.high_intensity:
        params = harness.high_intensity_params(cfg.ranges, kind)
    else:
        params = harness.sample_scenario_params(cfg.ranges, kind, scenario_id, cfg.seed)
    rng = RngStream(cfg.seed, (scenario_id, cloud.vehicle_id, cloud.frame_id))
    noisy = harness.augment(cloud, kind, params, cfg, rng)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    _write_cloud(noisy, args.output)
    _resolved_sidecar(cfg, args.output)
    return {"points_in": len(cloud), "points_out": len(noisy), "noise_points": int(noisy.labels.sum()),
            "params": harness.params_to_json(params), "seed": cfg.seed}


def _grid_summary(grid: SparseVoxelGrid) -> dict:
    return {
        "spec": grid.spec.to_json(),
        "voxels": len(grid),
        "noise_voxels": None if grid.labels is None else grid.noise_count,
        "coords": grid.coords.tolist(),
        "labels": None if grid.labels is None else grid.labels.tolist(),
    }


def cmd_voxelize(args, cfg):
    grid = voxelize(read_cloud(args.input), cfg.grid)
    _write_json(_grid_summary(grid), args.output)
    return {"voxels": len(grid), "noise_voxels": None if grid.labels is None else grid.noise_count}


def cmd_encode(args, cfg):
    grid = voxelize(read_cloud(args.input), cfg.grid)
    msg = encode(grid)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_bytes(msg)
    return {"voxels": len(grid), "bits": message_bits(grid)}


def cmd_denoise(args, cfg):
    cloud = read_cloud(args.input)
    grid = voxelize(cloud, cfg.grid)
    if cfg.denoiser.name == "oracle" and grid.labels is None:
        raise CLIError("input", "oracle denoiser needs a labeled cloud", path=str(args.input))
    pred = cfg.denoiser.build().classify(grid, cloud, RngStream(cfg.seed, ("denoise", cloud.frame_id, cloud.vehicle_id)))
    kept = apply_mask(grid, pred)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_bytes(encode(kept))
    result = {"voxels_in": len(grid), "voxels_out": len(kept), "bits": message_bits(kept), "seed": cfg.seed}
    if grid.labels is not None:
        from .denoise import evaluate

        cm, m = evaluate(pred, grid.labels)
        result["confusion"] = cm.to_json()
        result["metrics"] = m.to_json()
    if args.metrics:
        _write_json(result, args.metrics)
    return result


def cmd_run(args, cfg):
    report = harness.run_experiment(args.dataset, cfg)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    harness.emit_report(report, "json", out / "report.json")
    harness.emit_report(report, "csv", out / "messages.csv")
    (out / "table.csv").write_text(harness.table_csv([report]))
    _write_json(harness.config_to_json(cfg), out / "resolved_config.json")
    return {"report": str(out / "report.json"), "schemes": {k: v["bandwidth_mbps"] for k, v in report.schemes.items()}}


def cmd_synth(args, cfg):
    from .synth import SceneConfig, gen_synthetic_scene

    written = []
    for i in range(args.scenarios):
        scene = SceneConfig(
            n_vehicles=args.vehicles, points_per_cloud=args.points, n_frames=args.frames,
            spacing=args.spacing, seed=cfg.seed + i, scenario_id=f"synth_{i:03d}", fmt=args.format,
        )
        try:
            written.append(str(gen_synthetic_scene(args.root, scene)))
        except OSError as exc:
            raise CLIError("io", f"cannot write scene: {exc}", path=str(args.root)) from None
    return {"scenarios": written, "seed": cfg.seed}


def cmd_report(args, cfg):
    reports = [harness.load_report(p) for p in args.reports]
    if args.kind == "table":
        text = harness.table_csv(reports)
    else:
        text = "".join(
            harness.messages_csv(r) if i == 0 else harness.messages_csv(r).split("\n", 1)[1]
            for i, r in enumerate(reports)
        )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text)
    return {"rows": text.count("\n") - 1, "out": str(args.out)}


COMMANDS = {
    "augment": cmd_augment, "voxelize": cmd_voxelize, "encode": cmd_encode, "denoise": cmd_denoise,
    "run": cmd_run, "synth": cmd_synth, "report": cmd_report,
}


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        result = COMMANDS[args.command](args, cfg)
    except CLIError as exc:
        return _fail(exc.kind, str(exc), exc.code, **exc.extra)
    except harness.ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG, field=exc.field)
    except harness.DatasetError as exc:
        return _fail("dataset", str(exc), EXIT_INPUT, path=exc.path)
    except PCDParseError as exc:
        return _fail("pcd", str(exc), EXIT_INPUT, line=exc.line)
    except (WVPCFormatError, MessageError, DoubleAugmentationError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INPUT)
    except FileNotFoundError as exc:
        return _fail("io", str(exc), EXIT_INPUT, path=exc.filename)
    except (OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_INPUT)
    print(json.dumps(result, sort_keys=True, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else str(o)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
