# app/pipeline_service.py
import json
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import InvalidInputError, StageError, VolumeIOError
from app.hash_index import build_index
from app.kdtree_synthesis import build_kdtree_index, synthesize_level_kdtree_with_stats
from app.logger_config import logger
from app.metrics import dsc, hausdorff_pair
from app.phantoms import make_phantom
from app.schemas import LevelStats, MetricReport, PipelineConfig, SynthesisConfig
from app.surface import export_mesh, is_watertight, marching_cubes, mesh_area, mesh_volume, terracing_stats
from app.synthesis import synthesize_hierarchical_with_stats, synthesize_level_with_stats
from app.timing import StageTimer
from app.volume_io import load_volume, save_volume
from app.voxel_grid import VoxelGrid, crop, denoise, downsample2x, pad_to_pow2, subtract, upsample_interp

MESH_SUFFIX = {"stl_binary": ".stl", "obj": ".obj"}


@contextmanager
def _stage(timer: StageTimer, name: str):
    """Times a stage and wraps whatever it raises in a StageError naming it."""
    with timer.stage(name):
        try:
            yield
        except StageError:
            raise
        except Exception as e:
            raise StageError(name, e) from e


def _synthesize_single(
    coarse: VoxelGrid, template: VoxelGrid, cfg: SynthesisConfig
) -> Tuple[VoxelGrid, List[LevelStats]]:
    """One synthesis pass at full resolution, used when the input is already at template size."""
    coarse = VoxelGrid(coarse.dims, template.spacing, coarse.words)
    if cfg.backend == "interp":
        return coarse, []
    if cfg.backend == "kdtree":
        output, stats = synthesize_level_kdtree_with_stats(coarse, template, build_kdtree_index(template, cfg), cfg, 1)
        return output, [stats]
    index = None if cfg.parallel == "partitioned" else build_index(template, cfg)
    output, stats = synthesize_level_with_stats(coarse, template, index, cfg, 1)
    return output, [stats]


def _metric_values(prediction: VoxelGrid, truth: VoxelGrid) -> Tuple[float, Optional[float], Optional[float]]:
    hd, hd95 = hausdorff_pair(prediction, truth)
    return dsc(prediction, truth), hd, hd95


class SynthesisService:
    def __init__(self):
        pass

    def run_pipeline(
        self,
        input_path: str,
        template_path: str,
        cfg: PipelineConfig,
        out_dir: str,
    ) -> MetricReport:
        """
        Loads the coarse (or full-resolution) input and the template,
        synthesizes, optionally extracts the implant, meshes the result and
        writes output.nrrd, the mesh, report.json and timings.json to
        `out_dir`. A failing stage removes whatever this run already wrote.
        """
        logger.info(f"Starting run_pipeline for {input_path} against template {template_path}")
        syn = cfg.synthesis
        out = Path(out_dir)
        timer = StageTimer()
        written: List[Path] = []
        created_dir = not out.exists()

        try:
            with _stage(timer, "load"):
                source = load_volume(input_path)
                template = load_volume(template_path)
                defective = load_volume(cfg.defective_path) if cfg.defective_path else None
                truth = load_volume(cfg.ground_truth_path) if cfg.ground_truth_path else template
                implant_truth = load_volume(cfg.implant_gt_path) if cfg.implant_gt_path else None

            with _stage(timer, "pad"):
                template_p, original_dims = pad_to_pow2(template, syn.levels)

            with _stage(timer, "synthesis"):
                if source.dims == template.dims:
                    source_p, _ = pad_to_pow2(source, syn.levels)
                    if cfg.simulate_coarse:
                        coarse = source_p
                        for _ in range(syn.levels):
                            coarse = downsample2x(coarse, syn.downsample_mode, syn.gaussian_sigma, syn.gaussian_radius)
                        output, level_stats = synthesize_hierarchical_with_stats(coarse, template_p, syn)
                    else:
                        output, level_stats = _synthesize_single(source_p, template_p, syn)
                elif tuple(d * 2**syn.levels for d in source.dims) == template_p.dims:
                    output, level_stats = synthesize_hierarchical_with_stats(source, template_p, syn)
                else:
                    raise InvalidInputError(
                        f"input dims {source.dims} match neither the template {template.dims} "
                        f"nor its padded size {template_p.dims} / 2**{syn.levels}"
                    )
                output = crop(output, original_dims)

            implant = None
            if defective is not None:
                with _stage(timer, "implant"):
                    implant = denoise(subtract(output, defective), cfg.denoise_keep, cfg.morph_radius)

            with _stage(timer, "mesh"):
                surface = marching_cubes(implant if implant is not None else output)

            with _stage(timer, "metrics"):
                value, hd, hd95 = _metric_values(output, truth)
                implant_dsc = implant_hd = None
                if implant is not None and implant_truth is not None:
                    implant_dsc, implant_hd, _ = _metric_values(implant, implant_truth)
                report = MetricReport(
                    dsc=value,
                    hd_mm=hd,
                    hd95_mm=hd95,
                    implant_dsc=implant_dsc,
                    implant_hd_mm=implant_hd,
                    hit_rate=[s.hit_rate for s in level_stats],
                    bytes_index=max((s.bytes_index for s in level_stats), default=0),
                    bytes_features=max((s.bytes_features for s in level_stats), default=0),
                    levels=level_stats,
                )

            with _stage(timer, "export"):
                out.mkdir(parents=True, exist_ok=True)
                written.append(save_volume(output, out / "output.nrrd"))
                if implant is not None:
                    written.append(save_volume(implant, out / "implant.nrrd"))
                mesh_path = out / f"mesh{MESH_SUFFIX[cfg.mesh_format]}"
                written.append(mesh_path)
                export_mesh(surface, mesh_path, cfg.mesh_format)
                report_path = out / "report.json"
                written.append(report_path)
                report_path.write_text(report.to_json())

        except StageError as e:
            logger.error(f"Pipeline aborted in stage '{e.stage}': {e.cause}")
            self._remove_outputs(written, out if created_dir else None)
            raise

        report = report.model_copy(update={"runtime_s": dict(timer.runtime_s)})
        timings_path = out / "timings.json"
        try:
            timings_path.write_text(json.dumps(report.runtime_s, sort_keys=True, indent=2))
        except OSError as e:
            logger.error(f"Pipeline aborted writing {timings_path}: {e}")
            self._remove_outputs([*written, timings_path], out if created_dir else None)
            raise VolumeIOError(timings_path, e) from e
        logger.info(f"Pipeline finished: dsc={report.dsc:.4f}, hd={report.hd_mm}, outputs in {out}")
        return report

    @staticmethod
    def _remove_outputs(paths: Sequence[Path], directory: Optional[Path]) -> None:
        for path in paths:
            if path.exists():
                path.unlink()
                logger.info(f"Removed partial output {path}")
        if directory is not None and directory.exists() and not any(directory.iterdir()):
            directory.rmdir()

    def evaluate(self, pred_paths: Sequence[str], gt_paths: Sequence[str]) -> Dict:
        """Per-case metrics for each (prediction, ground truth) pair, plus their mean."""
        logger.info(f"Starting evaluate on {len(pred_paths)} case(s)")
        if not pred_paths or len(pred_paths) != len(gt_paths):
            raise InvalidInputError(
                f"need matching --pred and --gt lists, got {len(pred_paths)} and {len(gt_paths)}"
            )
        cases = []
        for pred_path, gt_path in zip(pred_paths, gt_paths):
            value, hd, hd95 = _metric_values(load_volume(pred_path), load_volume(gt_path))
            report = MetricReport(dsc=value, hd_mm=hd, hd95_mm=hd95)
            cases.append({"pred": str(pred_path), "gt": str(gt_path), **report.model_dump(include={"dsc", "hd_mm", "hd95_mm"})})

        def mean_of(key):
            values = [c[key] for c in cases if c[key] is not None]
            return float(np.mean(values)) if values else None

        return {"cases": cases, "mean": {k: mean_of(k) for k in ("dsc", "hd_mm", "hd95_mm")}}

    def mesh(self, input_path: str, out_path: str) -> Dict:
        logger.info(f"Starting mesh for {input_path}")
        grid = load_volume(input_path)
        surface = marching_cubes(grid)
        export_mesh(surface, out_path)
        steps = terracing_stats(grid)
        return {
            "vertices": surface.n_vertices,
            "triangles": surface.n_triangles,
            "area_mm2": mesh_area(surface),
            "volume_mm3": mesh_volume(surface),
            "watertight": is_watertight(surface),
            "mean_step": steps.mean_step,
            "derivative_sign_flips": steps.derivative_sign_flips,
        }

    def phantom(self, kind: str, dims, params: Dict, seed: int, out_path: str) -> VoxelGrid:
        logger.info(f"Starting phantom {kind} -> {out_path}")
        grid = make_phantom(kind, dims, params, seed)
        save_volume(grid, out_path)
        return grid

    def bench(self, level_size: int, cfg: SynthesisConfig) -> Dict:
        """
        Times one synthesis level on a spherical-shell phantom of edge
        `level_size`, fed the trilinear upsampling of its own downsampled copy.
        """
        logger.info(f"Starting bench at {level_size}^3 with {cfg.parallel}:{cfg.workers}")
        if cfg.backend == "interp":
            raise InvalidInputError("bench times a matching backend; interp has no index to build")
        r_out = level_size * 7 // 16
        template = make_phantom(
            "sphere_shell", (level_size,) * 3, {"r_in": r_out - level_size // 8, "r_out": r_out}
        )
        coarse = downsample2x(template, cfg.downsample_mode, cfg.gaussian_sigma, cfg.gaussian_radius)
        coarse_up = upsample_interp(coarse, 2, cfg.upsample_order)
        coarse_up = VoxelGrid(coarse_up.dims, template.spacing, coarse_up.words)

        start = time.perf_counter()
        if cfg.backend == "kdtree":
            index = build_kdtree_index(template, cfg)
        else:
            index = None if cfg.parallel == "partitioned" else build_index(template, cfg)
        build_s = time.perf_counter() - start

        start = time.perf_counter()
        if cfg.backend == "kdtree":
            _, stats = synthesize_level_kdtree_with_stats(coarse_up, template, index, cfg, 1)
        else:
            _, stats = synthesize_level_with_stats(coarse_up, template, index, cfg, 1)
        synth_s = time.perf_counter() - start

        result = {
            "level_size": level_size,
            "backend": cfg.backend,
            "parallel": cfg.parallel,
            "workers": cfg.workers,
            "build_s": round(build_s, 4),
            "synthesize_s": round(synth_s, 4),
            "stats": stats.model_dump(mode="json"),
        }
        logger.info(f"Bench finished: build {build_s:.2f}s, synthesis {synth_s:.2f}s, hit rate {stats.hit_rate:.4f}")
        return result


synthesis_service = SynthesisService()


def run_pipeline(input_path: str, template_path: str, cfg: PipelineConfig, out_dir: str) -> MetricReport:
    return synthesis_service.run_pipeline(input_path, template_path, cfg, out_dir)
