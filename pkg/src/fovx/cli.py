"""Command-line entry points.

Batch subcommands (phantom, simulate, extend, complete, evaluate) wrap
the pipeline stages; tci, giou, and anthro are single-shot calculators
that print JSON to stdout. Exit codes: 0 success, 2 bad input, 3
numeric failure, 4 I/O failure. Set FOVX_LOG=debug|info|warning|error
to control verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import bcstats, extent, fovsim, inpaint, metrics, pipeline, raster
from .errors import FitError, NumericError

LOG = logging.getLogger("fovx")


def _setup_logging() -> None:
    level_name = os.environ.get("FOVX_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        LOG.warning("FOVX_LOG=%s not recognized; using WARNING", level_name)
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _print_json(obj: object) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_sim_config(args: argparse.Namespace) -> fovsim.SimConfig:
    if args.config is not None:
        cfg = fovsim.SimConfig.from_json(Path(args.config).read_text())
    else:
        cfg = fovsim.SimConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _load_solver_config(args: argparse.Namespace) -> inpaint.SolverConfig:
    fields = {}
    if args.config is not None:
        fields.update(json.loads(Path(args.config).read_text()))
    if args.tol is not None:
        fields["tol"] = args.tol
    if args.method is not None:
        fields["method"] = args.method
    if args.max_iters is not None:
        fields["max_iters"] = args.max_iters
    return inpaint.SolverConfig(**fields)


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_phantom(args: argparse.Namespace) -> int:
    man = pipeline.run_phantom(
        args.out,
        count=args.count,
        seed=args.seed if args.seed is not None else 0,
        dim=args.dim,
        spacing=args.spacing,
        force=args.force,
    )
    _print_json({"kind": man["kind"], "count": man["count"], "out": str(args.out)})
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_sim_config(args)
    man = pipeline.run_simulate(
        args.in_dir,
        args.out,
        cfg,
        per_slice=args.per_slice,
        validation=args.validation,
        jobs=args.jobs,
        force=args.force,
    )
    _print_json(
        {
            "kind": man["kind"],
            "n_samples": man["n_samples"],
            "severity_histogram": man["severity_histogram"],
            "out": str(args.out),
        }
    )
    return 0


def _cmd_extend(args: argparse.Namespace) -> int:
    man = pipeline.run_extend(args.in_dir, args.out, r0=args.r0, force=args.force)
    _print_json(
        {
            "kind": man["kind"],
            "n_samples": man["n_samples"],
            "coverage_rate": man["coverage_rate"],
            "out": str(args.out),
        }
    )
    return 0


def _cmd_complete(args: argparse.Namespace) -> int:
    cfg = _load_solver_config(args)
    man = pipeline.run_complete(
        args.in_dir,
        args.out,
        cfg=cfg,
        truth_dir=args.truth,
        jobs=args.jobs,
        force=args.force,
    )
    summary = {
        "kind": man["kind"],
        "n_samples": man["n_samples"],
        "max_residual": man["max_residual"],
        "out": str(args.out),
    }
    if "mean_rmse_comp" in man:
        summary["mean_rmse_trunc"] = man["mean_rmse_trunc"]
        summary["mean_rmse_comp"] = man["mean_rmse_comp"]
    _print_json(summary)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    report = pipeline.run_evaluate(
        args.in_dir,
        args.truth,
        args.out,
        seed=args.seed if args.seed is not None else 0,
        n_boot=args.n_boot,
        force=args.force,
    )
    _print_json(report)
    return 0


def _cmd_tci(args: argparse.Namespace) -> int:
    body = raster.read_mask(args.body)
    fov = raster.read_mask(args.fov)
    value = metrics.tci(body, fov)
    _print_json({"tci": value, "severity": metrics.severity_from_tci(value).value})
    return 0


def _cmd_giou(args: argparse.Namespace) -> int:
    pred = metrics.BBox(*args.coords[:4])
    gt = metrics.BBox(*args.coords[4:])
    losses = metrics.bbox_losses(pred, gt)
    _print_json(
        {
            "iou": metrics.box_iou(pred, gt),
            "giou": metrics.giou(pred, gt),
            "mse": losses.mse,
            "giou_loss": losses.giou_loss,
            "total": losses.total,
        }
    )
    return 0


def _cmd_anthro(args: argparse.Namespace) -> int:
    person = bcstats.Anthro(height=args.height, weight=args.weight, sex=args.sex)
    res = bcstats.anthro_ffm_fm(person)
    _print_json(
        {
            "ffm": res.ffm,
            "fm": res.fm,
            "ffm_index": res.ffm_index,
            "fm_index": res.fm_index,
            "bmi": person.weight / person.height**2,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fovx",
        description="Field-of-view truncation simulation, border extension, and completion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a corpus of complete phantom slices")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=10, help="number of phantoms")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--spacing", type=float, default=1.5, help="pixel spacing in mm")
    p.add_argument("--force", action="store_true", help="overwrite an existing out dir")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("simulate", help="draw synthetic truncation samples")
    p.add_argument("--in", dest="in_dir", required=True, help="phantom stage directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="simulation config JSON file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--per-slice", type=int, default=1, help="draws per input slice")
    p.add_argument(
        "--validation",
        action="store_true",
        help="cap samples per severity level per slice",
    )
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("extend", help="estimate body extent and extend borders")
    p.add_argument("--in", dest="in_dir", required=True, help="simulate stage directory")
    p.add_argument("--out", required=True)
    p.add_argument("--r0", type=float, default=extent.DEFAULT_R0, help="safety ratio")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_extend)

    p = sub.add_parser("complete", help="fill missing tissue harmonically")
    p.add_argument("--in", dest="in_dir", required=True, help="extend stage directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="solver config JSON file")
    p.add_argument("--tol", type=float, default=None, help="relative residual tolerance")
    p.add_argument("--method", choices=inpaint.SOLVER_METHODS, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument(
        "--truth",
        default=None,
        help="simulate stage directory; adds before/after RMSE to the manifest",
    )
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_complete)

    p = sub.add_parser("evaluate", help="score truncated and completed slices against truth")
    p.add_argument("--in", dest="in_dir", required=True, help="complete stage directory")
    p.add_argument("--truth", required=True, help="simulate stage directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="bootstrap seed")
    p.add_argument("--n-boot", type=int, default=1000, help="bootstrap replicates")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("tci", help="truncation severity of a body mask against a FOV mask")
    p.add_argument("--body", required=True, help="body mask PGM")
    p.add_argument("--fov", required=True, help="FOV mask PGM")
    p.set_defaults(func=_cmd_tci)

    p = sub.add_parser("giou", help="box overlap metrics for two boxes")
    p.add_argument(
        "coords",
        type=float,
        nargs=8,
        metavar="C",
        help="pred x_min y_min x_max y_max, then gt x_min y_min x_max y_max",
    )
    p.set_defaults(func=_cmd_giou)

    p = sub.add_parser("anthro", help="fat-free and fat mass from height/weight/sex")
    p.add_argument("--height", type=float, required=True, help="height in meters")
    p.add_argument("--weight", type=float, required=True, help="weight in kg")
    p.add_argument("--sex", choices=("male", "female"), required=True)
    p.set_defaults(func=_cmd_anthro)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"fovx: bad input: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FitError) as exc:
        print(f"fovx: numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"fovx: i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
