# app/cli.py
import argparse
import json
import os
import sys
from typing import Dict, List, Optional

from pydantic import ValidationError

from app.config import Settings, load_settings
from app.errors import InvalidInputError, SynthError
from app.logger_config import logger
from app.phantoms import PHANTOM_KINDS
from app.pipeline_service import synthesis_service
from app.schemas import PipelineConfig, SynthesisConfig, parse_parallel

FALLBACK_NAMES = {"random": "random", "keep": "keep_coarse", "keep_coarse": "keep_coarse", "majority": "majority"}
BENCH_SIZES = (64, 128, 256)


def _dims(text: str):
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) == 1:
        parts = parts * 3
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 64 or 64,64,32, got {text!r}")
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"dims need one or three values, got {text!r}")
    return dims


def _add_synthesis_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["hash", "kdtree", "interp"])
    parser.add_argument("--levels", type=int)
    parser.add_argument("--nbhd", type=int, choices=[3, 5])
    parser.add_argument("--radius", type=int)
    parser.add_argument("--fallback", choices=sorted(FALLBACK_NAMES))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--parallel", help="serial, shared:P or partitioned:P")
    parser.add_argument("--pca-dims", type=int)
    parser.add_argument("--upsample", choices=["nearest", "trilinear", "cubic-spline"])
    parser.add_argument("--neighbor-match", choices=["first", "closest"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synth", description="Template-guided voxel synthesis")
    parser.add_argument("--config", help="JSON file overriding the default settings")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="coarse-to-fine synthesis, meshing and evaluation")
    run.add_argument("--input", required=True)
    run.add_argument("--template", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--defective", help="defective volume to subtract for implant extraction")
    run.add_argument("--ground-truth", help="volume to score against (defaults to the template)")
    run.add_argument("--implant-gt", help="ground-truth implant")
    run.add_argument("--no-simulate-coarse", action="store_true",
                     help="treat a full-resolution input as the level to refine instead of downsampling it")
    run.add_argument("--denoise-keep", default="largest_component",
                     help="largest_component or a minimum component size")
    run.add_argument("--morph-radius", type=int)
    run.add_argument("--mesh-format", choices=["stl_binary", "obj"], default="stl_binary")
    _add_synthesis_args(run)

    ev = sub.add_parser("eval", help="DSC and Hausdorff distance of predictions against ground truth")
    ev.add_argument("--pred", nargs="+", required=True)
    ev.add_argument("--gt", nargs="+", required=True)

    mesh = sub.add_parser("mesh", help="marching cubes to STL or OBJ")
    mesh.add_argument("--input", required=True)
    mesh.add_argument("--out", required=True)

    ph = sub.add_parser("phantom", help="write a synthetic test volume")
    ph.add_argument("--kind", choices=PHANTOM_KINDS, required=True)
    ph.add_argument("--dims", type=_dims, default=(64, 64, 64))
    ph.add_argument("--params", default="{}", help='JSON object, e.g. {"r_in": 20, "r_out": 28}')
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--out", required=True)

    bench = sub.add_parser("bench", help="time one synthesis level on a shell phantom")
    bench.add_argument("--level-size", type=int, choices=BENCH_SIZES, default=64)
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--mode", choices=["serial", "shared", "partitioned"], default="shared")
    bench.add_argument("--backend", choices=["hash", "kdtree"])
    return parser


def _synthesis_config(args: argparse.Namespace, settings: Settings, mode: Optional[str] = None,
                      workers: Optional[int] = None) -> SynthesisConfig:
    overrides: Dict = {}
    for flag, field in (("backend", "backend"), ("levels", "levels"), ("nbhd", "nbhd_size"),
                        ("radius", "radius"), ("seed", "seed"), ("pca_dims", "pca_dims"),
                        ("upsample", "upsample_order"), ("neighbor_match", "neighbor_match")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "fallback", None):
        overrides["fallback"] = FALLBACK_NAMES[args.fallback]
    if getattr(args, "parallel", None):
        mode, workers = parse_parallel(args.parallel)
    if mode is not None:
        overrides["parallel"] = mode
        overrides["workers"] = workers

    env_threads = os.getenv("SYNTH_THREADS")
    if env_threads and overrides.get("parallel", settings.parallel) != "serial":
        overrides["workers"] = settings.threads
        logger.info(f"SYNTH_THREADS={env_threads} overrides the worker count")
    return SynthesisConfig.from_settings(settings, **overrides)


def _denoise_keep(text: str):
    if text == "largest_component":
        return text
    if text.isdigit() and int(text) >= 1:
        return int(text)
    raise InvalidInputError(f"--denoise-keep must be largest_component or a size >= 1, got {text!r}")


def _pipeline_config(**values) -> PipelineConfig:
    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        raise InvalidInputError(f"Invalid pipeline config: {e}") from e


def _print(payload) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def run_command(args: argparse.Namespace, settings: Settings) -> None:
    if args.command == "run":
        cfg = _pipeline_config(
            synthesis=_synthesis_config(args, settings),
            simulate_coarse=not args.no_simulate_coarse,
            defective_path=args.defective,
            ground_truth_path=args.ground_truth,
            implant_gt_path=args.implant_gt,
            denoise_keep=_denoise_keep(args.denoise_keep),
            morph_radius=settings.morph_radius if args.morph_radius is None else args.morph_radius,
            mesh_format=args.mesh_format,
        )
        report = synthesis_service.run_pipeline(args.input, args.template, cfg, args.out)
        print(report.to_json(include_runtime=True))
    elif args.command == "eval":
        _print(synthesis_service.evaluate(args.pred, args.gt))
    elif args.command == "mesh":
        _print(synthesis_service.mesh(args.input, args.out))
    elif args.command == "phantom":
        try:
            params = json.loads(args.params)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"--params is not valid JSON: {e}") from e
        grid = synthesis_service.phantom(args.kind, args.dims, params, args.seed, args.out)
        _print({"dims": list(grid.dims), "occupied": grid.occupied_count(), "out": args.out})
    elif args.command == "bench":
        workers = 1 if args.mode == "serial" else args.threads
        cfg = _synthesis_config(args, settings, mode=args.mode, workers=workers)
        _print(synthesis_service.bench(args.level_size, cfg))


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns 0 on success, 2 on invalid input, 3 on I/O failure, 4 otherwise."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_settings(args.config or os.getenv("SYNTH_CONFIG"))
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return InvalidInputError.exit_code

    try:
        run_command(args, settings)
        return 0
    except SynthError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        print(f"internal error: {e}", file=sys.stderr)
        return SynthError.exit_code
