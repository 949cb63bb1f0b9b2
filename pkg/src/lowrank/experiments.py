"""Reusable experiment drivers behind the CLI: single runs, benchmarks, sweeps, spectra."""

import itertools
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from lowrank.image import ImageBuffer
from lowrank.io import ReportDocument, read_pgm
from lowrank.metrics import NoiseSpec, add_salt_pepper, psnr, ssim
from lowrank.nss import PatchGrid, PipelineParams, build_nss_group, match_similar, run_denoise
from lowrank.solvers import Method, SolverConfig, ialm_decompose, preset_config

ALL_METHODS = tuple(Method)
SWEEP_PARAMETERS = ("K", "p", "q", "ratio", "pq")


def load_corpus(directory) -> List[ImageBuffer]:
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm images in {directory}")
    return [read_pgm(p) for p in paths]


def effective_parameters(cfg: SolverConfig, params: PipelineParams, **extra) -> dict:
    return {"solver": cfg.to_dict(), "pipeline": params.to_dict(), **extra}


@dataclass
class DenoiseRun:
    restored: ImageBuffer
    report: ReportDocument
    psnr_trace: List[Tuple[int, float]]


def denoise_run(
    noisy: ImageBuffer,
    cfg: SolverConfig,
    params: PipelineParams = PipelineParams(),
    *,
    noise_level: Optional[float] = None,
    reference: Optional[ImageBuffer] = None,
    track: bool = False,
    threads: int = 1,
    extra: Optional[dict] = None,
) -> DenoiseRun:
    """Denoise one image and package the outcome as a report row.

    ``track`` records the per-iteration PSNR of the aggregated image (needs
    ``reference``).
    """
    start = time.perf_counter()
    outcome = run_denoise(
        noisy,
        cfg,
        params,
        noise_level=noise_level,
        reference=reference if track else None,
        threads=threads,
    )
    elapsed = time.perf_counter() - start
    score_psnr = score_ssim = None
    if reference is not None:
        score_psnr = psnr(reference, outcome.image)
        score_ssim = ssim(reference, outcome.image)
    doc = ReportDocument(
        method=cfg.method.value,
        image=noisy.name,
        noise_level=noise_level,
        parameters=effective_parameters(cfg, params, **(extra or {})),
        psnr=score_psnr,
        ssim=score_ssim,
        runtime_seconds=elapsed,
    )
    return DenoiseRun(outcome.image, doc, outcome.psnr_trace)


def corrupt(clean: ImageBuffer, level: float, seed: int) -> ImageBuffer:
    return add_salt_pepper(clean, NoiseSpec(level, seed=seed))


def benchmark(
    images: Sequence[ImageBuffer],
    levels: Iterable[float],
    methods: Iterable,
    *,
    seed: int = 0,
    params: PipelineParams = PipelineParams(),
    overrides: Optional[dict] = None,
    threads: int = 1,
) -> List[ReportDocument]:
    """Corrupt, denoise and score every image x level x method cell.

    Each cell uses the same noise realization for every method, so methods
    are compared on identical inputs.
    """
    levels, methods = list(levels), [Method.parse(m) for m in methods]
    docs = []
    for img in images:
        for level in levels:
            noisy = corrupt(img, level, seed)
            noisy_psnr = psnr(img, noisy)
            for method in methods:
                cfg = preset_config(method, level, **(overrides or {}))
                run = denoise_run(
                    noisy, cfg, params, noise_level=level, reference=img, threads=threads,
                    extra={"seed": seed},
                )
                run.report.extra["noisy_psnr"] = noisy_psnr
                docs.append(run.report)
    return docs


def sweep_grid(parameter: str, values: Sequence, second: Optional[Sequence] = None) -> List[Tuple]:
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")
    if parameter == "pq":
        if not second:
            raise ValueError("a (p, q) sweep needs both a p grid and a q grid")
        return list(itertools.product(values, second))
    return [(v,) for v in values]


def sweep(
    images: Sequence[ImageBuffer],
    parameter: str,
    values: Sequence,
    *,
    level: float,
    method="DWLP",
    second: Optional[Sequence] = None,
    seed: int = 0,
    params: PipelineParams = PipelineParams(),
    overrides: Optional[dict] = None,
    threads: int = 1,
) -> List[Dict]:
    """Mean PSNR/SSIM over ``images`` for each grid point of ``parameter``.

    ``parameter`` is one of ``K``, ``p``, ``q``, ``ratio`` or ``pq`` (a 2-D
    grid over ``values`` x ``second``).
    """
    grid = sweep_grid(parameter, values, second)
    noisy = [corrupt(img, level, seed) for img in images]
    rows = []
    for point in grid:
        cell_params, solver_kw = params, dict(overrides or {})
        if parameter == "K":
            cell_params = PipelineParams(**{**params.to_dict(), "K": int(point[0])})
        elif parameter == "pq":
            solver_kw.update(p=point[0], q=point[1])
        else:
            solver_kw[parameter] = point[0]
        cfg = preset_config(method, level, **solver_kw)
        scores = []
        for clean, dirty in zip(images, noisy):
            run = denoise_run(dirty, cfg, cell_params, noise_level=level, reference=clean, threads=threads)
            scores.append((run.report.psnr, run.report.ssim))
        row = {"psnr": float(np.mean([s[0] for s in scores])), "ssim": float(np.mean([s[1] for s in scores]))}
        if parameter == "pq":
            row = {"p": point[0], "q": point[1], **row}
        else:
            row = {parameter: point[0], **row}
        rows.append(row)
    return rows


def group_spectra(
    clean: ImageBuffer,
    anchor: Tuple[int, int],
    *,
    noise_level: Optional[float] = None,
    seed: int = 0,
    params: PipelineParams = PipelineParams(),
    methods: Iterable = ALL_METHODS,
    overrides: Optional[dict] = None,
) -> Dict[str, np.ndarray]:
    """Singular values of the NSS group at ``anchor``.

    The group's member positions are matched on the clean image so clean,
    noisy and recovered spectra describe the same patches. Without
    ``noise_level`` only the clean spectrum is returned. Recovered spectra
    are reported in the 8-bit intensity domain.
    """
    grid = PatchGrid.for_image(clean.height, clean.width, params.patch_size, params.step)
    coords = match_similar(clean, tuple(anchor), grid, params.K, params.search_radius)
    clean_D = build_nss_group(clean, coords, params.patch_size).D
    out = {"clean": np.linalg.svd(clean_D, compute_uv=False)}
    if noise_level is None:
        return out
    noisy = add_salt_pepper(clean, NoiseSpec(noise_level, seed=seed))
    D = build_nss_group(noisy, coords, params.patch_size).D
    out["noisy"] = np.linalg.svd(D, compute_uv=False)
    scale = params.intensity_scale
    for method in methods:
        cfg = preset_config(method, noise_level, **(overrides or {}))
        A = ialm_decompose(D * scale, cfg).A / scale
        out[Method.parse(method).value] = np.linalg.svd(A, compute_uv=False)
    return out


def spectrum_distance(recovered: np.ndarray, clean: np.ndarray, top: int = 10) -> float:
    n = min(top, len(recovered), len(clean))
    return float(math.sqrt(np.sum((recovered[:n] - clean[:n]) ** 2)))
