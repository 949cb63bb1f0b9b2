"""Nonlocal self-similarity (NSS) denoising pipeline.

For every anchor patch of a regular grid: find its K most similar patches in
a median-prefiltered copy of the image, stack the *noisy* patches at those
positions as columns of a ``c x K`` matrix, split that matrix into low-rank
plus sparse parts with the IALM solver, and average the recovered patches
back into the image.

Patches are vectorized in row-major raster order within the patch, so
``vec[i * patch_size + j]`` is pixel ``(row + i, col + j)``.
"""

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from lowrank.image import ImageBuffer, Provenance
from lowrank.linalg import SvdError
from lowrank.metrics import psnr
from lowrank.solvers import BatchIalm, SolverConfig

Coord = Tuple[int, int]


class AggregateMode(str, enum.Enum):
    REFERENCE_ONLY = "reference_only"
    FULL_GROUP = "full_group"

    @classmethod
    def parse(cls, value) -> "AggregateMode":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v in ("reference", "ref", "reference_only"):
            return cls.REFERENCE_ONLY
        if v in ("full", "full_group"):
            return cls.FULL_GROUP
        raise ValueError(f"unknown aggregate mode {value!r}")


class MatchError(ValueError):
    pass


class PipelineError(RuntimeError):
    """A per-anchor failure inside :func:`denoise_image`; ``anchor`` names the patch."""

    def __init__(self, message, anchor=None):
        super().__init__(message)
        self.anchor = anchor


@dataclass(frozen=True)
class PipelineParams:
    """Pipeline settings.

    ``median_window=None`` picks 3 for noise levels up to 30% (or unknown) and
    5 above. ``intensity_scale`` multiplies pixel values before decomposition
    and is divided out afterwards.
    """

    patch_size: int = 8
    step: int = 4
    K: int = 64
    search_radius: int = 20
    median_window: Optional[int] = None
    aggregate_mode: AggregateMode = AggregateMode.FULL_GROUP
    intensity_scale: float = 1.0 / 255.0
    chunk_size: int = 512

    def __post_init__(self):
        object.__setattr__(self, "aggregate_mode", AggregateMode.parse(self.aggregate_mode))
        for name in ("patch_size", "step", "K", "search_radius", "chunk_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.step > self.patch_size:
            raise ValueError(f"step {self.step} exceeds patch_size {self.patch_size}; pixels would go uncovered")
        if self.median_window is not None and (self.median_window < 3 or self.median_window % 2 == 0):
            raise ValueError(f"median_window must be odd and >= 3, got {self.median_window}")
        if not self.intensity_scale > 0:
            raise ValueError("intensity_scale must be positive")

    def window_for(self, noise_level: Optional[float]) -> int:
        if self.median_window is not None:
            return self.median_window
        return 5 if noise_level is not None and noise_level > 0.3 else 3

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["aggregate_mode"] = self.aggregate_mode.value
        return d


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    step: int
    anchors: Tuple[Coord, ...]

    @staticmethod
    def _positions(extent: int, patch_size: int, step: int) -> List[int]:
        last = extent - patch_size
        pos = list(range(0, last + 1, step))
        if pos[-1] != last:
            pos.append(last)
        return pos

    @classmethod
    def for_image(cls, height: int, width: int, patch_size: int = 8, step: int = 4) -> "PatchGrid":
        if patch_size > min(height, width):
            raise ValueError(f"patch size {patch_size} exceeds image size {height}x{width}")
        if not 1 <= step <= patch_size:
            raise ValueError(f"step must lie in [1, patch_size={patch_size}] so patches cover the image, got {step}")
        rows = cls._positions(height, patch_size, step)
        cols = cls._positions(width, patch_size, step)
        return cls(patch_size, step, tuple((r, c) for r in rows for c in cols))


@dataclass
class NssGroup:
    D: np.ndarray
    member_coords: List[Coord]

    @property
    def reference(self) -> Coord:
        return self.member_coords[0]


def _px(img) -> np.ndarray:
    return img.pixels if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)


def median_prefilter(img: ImageBuffer, window: int = 3) -> ImageBuffer:
    """Median filter with a ``window x window`` support and edge replication."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"median window must be odd and >= 3, got {window}")
    out = ndimage.median_filter(img.pixels, size=window, mode="nearest")
    return img.with_pixels(out, Provenance.PREFILTERED)


def _check_patch(shape, coord, patch_size) -> None:
    r, c = coord
    h, w = shape
    if not (0 <= r <= h - patch_size and 0 <= c <= w - patch_size):
        raise IndexError(f"patch at {coord} of size {patch_size} falls outside a {h}x{w} image")


def extract_patch(img, coord: Coord, patch_size: int = 8) -> np.ndarray:
    px = _px(img)
    _check_patch(px.shape, coord, patch_size)
    r, c = coord
    return px[r : r + patch_size, c : c + patch_size].reshape(-1).copy()


def place_patch(canvas: np.ndarray, vec, coord: Coord, patch_size: int = 8) -> None:
    _check_patch(canvas.shape, coord, patch_size)
    r, c = coord
    canvas[r : r + patch_size, c : c + patch_size] = np.asarray(vec).reshape(patch_size, patch_size)


class _Matcher:
    """Block matcher over all stride-1 patch positions of one image."""

    def __init__(self, image: np.ndarray, patch_size: int):
        self.patch_size = patch_size
        self.shape = image.shape
        self.patches = sliding_window_view(image, (patch_size, patch_size))

    def match(self, anchor: Coord, K: int, radius: int) -> np.ndarray:
        ps = self.patch_size
        h, w = self.shape
        _check_patch(self.shape, anchor, ps)
        r, c = anchor
        r0, r1 = max(0, r - radius), min(h - ps, r + radius)
        c0, c1 = max(0, c - radius), min(w - ps, c + radius)
        ncols = c1 - c0 + 1
        n = (r1 - r0 + 1) * ncols
        if n < K:
            raise MatchError(
                f"only {n} candidate patches around {anchor} but K={K}; increase search_radius"
            )
        cand = self.patches[r0 : r1 + 1, c0 : c1 + 1].reshape(n, ps * ps)
        ref = self.patches[r, c].reshape(ps * ps)
        diff = cand - ref
        dist = np.einsum("ij,ij->i", diff, diff)
        dist[(r - r0) * ncols + (c - c0)] = -1.0
        order = np.argsort(dist, kind="stable")[:K]
        return np.stack([r0 + order // ncols, c0 + order % ncols], axis=1)


def match_similar(prefiltered, anchor: Coord, grid: PatchGrid, K: int, search_radius: int) -> List[Coord]:
    """The ``K`` patches closest (Euclidean) to ``anchor`` within the search window.

    Candidates are every top-left position within ``search_radius`` of the
    anchor (stride 1, clipped to the image). The anchor always comes first;
    equal distances keep row-major candidate order.
    """
    if K < 1:
        raise ValueError("K must be positive")
    matcher = _Matcher(_px(prefiltered), grid.patch_size)
    return [tuple(int(v) for v in rc) for rc in matcher.match(tuple(anchor), K, search_radius)]


def build_nss_group(noisy, coords: Sequence[Coord], patch_size: int = 8) -> NssGroup:
    px = _px(noisy)
    cols = [extract_patch(px, tuple(rc), patch_size) for rc in coords]
    return NssGroup(np.stack(cols, axis=1), [tuple(int(v) for v in rc) for rc in coords])


class _Aggregator:
    """Scatter-add of recovered patch columns into per-pixel sums and counts."""

    def __init__(self, coords: np.ndarray, dims, patch_size: int, mode: AggregateMode):
        h, w = dims
        coords = np.asarray(coords, dtype=np.int64)
        if mode is AggregateMode.REFERENCE_ONLY:
            coords = coords[:, :1]
        self.ncols = coords.shape[1]
        self.size = h * w
        self.dims = (h, w)
        dr, dc = np.divmod(np.arange(patch_size * patch_size), patch_size)
        offsets = dr * w + dc
        base = coords[..., 0] * w + coords[..., 1]
        self.index = (base[..., None] + offsets).reshape(-1)
        self.counts = np.bincount(self.index, minlength=self.size).astype(np.float64)
        if np.any(self.counts == 0):
            r, c = divmod(int(np.flatnonzero(self.counts == 0)[0]), w)
            raise ValueError(f"pixel ({r}, {c}) is not covered by any recovered patch")

    def __call__(self, A: np.ndarray) -> np.ndarray:
        # A: (G, c, K) -> values ordered (G, K, c) to match self.index
        vals = np.ascontiguousarray(np.swapaxes(A[:, :, : self.ncols], 1, 2)).reshape(-1)
        sums = np.bincount(self.index, weights=vals, minlength=self.size)
        return (sums / self.counts).reshape(self.dims)


def aggregate(groups, image_dims, mode=AggregateMode.FULL_GROUP) -> ImageBuffer:
    """Average recovered patches into an image.

    ``groups`` is a sequence of ``(A, member_coords)`` with ``A`` of shape
    ``c x K``. ``reference_only`` places column 0 of each ``A`` at its first
    coordinate; ``full_group`` places every column. Raises ``ValueError`` if
    some pixel receives no patch. The result is not clamped.
    """
    mode = AggregateMode.parse(mode)
    groups = list(groups)
    if not groups:
        raise ValueError("no groups to aggregate")
    c = groups[0][0].shape[0]
    ps = math.isqrt(c)
    if ps * ps != c:
        raise ValueError(f"patch vector length {c} is not a perfect square")
    K = groups[0][0].shape[1]
    for A, coords in groups:
        if A.shape != (c, K) or len(coords) != K:
            raise ValueError("all recovered matrices must be c x K with K member coordinates")
    A = np.stack([np.asarray(g[0], dtype=np.float64) for g in groups])
    coords = np.array([g[1] for g in groups], dtype=np.int64)
    h, w = image_dims
    if coords[..., 0].min() < 0 or coords[..., 1].min() < 0 or coords[..., 0].max() > h - ps or coords[..., 1].max() > w - ps:
        raise IndexError("member coordinate outside the image")
    out = _Aggregator(coords, (h, w), ps, mode)(A)
    return ImageBuffer(np.clip(out, 0, 255), Provenance.RESTORED)


@dataclass
class DenoiseOutcome:
    image: ImageBuffer
    #: (iteration, PSNR of the aggregated image) pairs, filled when a reference is given
    psnr_trace: List[Tuple[int, float]] = field(default_factory=list)
    groups: int = 0
    prefiltered: Optional[ImageBuffer] = None


def _match_all(pre: np.ndarray, grid: PatchGrid, K: int, radius: int) -> np.ndarray:
    matcher = _Matcher(pre, grid.patch_size)
    out = np.empty((len(grid.anchors), K, 2), dtype=np.int64)
    for g, anchor in enumerate(grid.anchors):
        try:
            out[g] = matcher.match(anchor, K, radius)
        except MatchError as exc:
            raise PipelineError(f"matching failed at anchor {anchor}: {exc}", anchor) from exc
    return out


def _gather(px: np.ndarray, coords: np.ndarray, patch_size: int) -> np.ndarray:
    view = sliding_window_view(px, (patch_size, patch_size))
    patches = view[coords[..., 0], coords[..., 1]]  # (G, K, ps, ps)
    G, K = coords.shape[:2]
    return np.ascontiguousarray(patches.reshape(G, K, patch_size * patch_size).swapaxes(1, 2))


def _locate_failure(D: np.ndarray, cfg: SolverConfig, anchors) -> Optional[Coord]:
    for g in range(D.shape[0]):
        try:
            BatchIalm(D[g : g + 1], cfg).run()
        except (SvdError, ValueError):
            return anchors[g]
    return None


def run_denoise(
    noisy: ImageBuffer,
    cfg: SolverConfig,
    params: PipelineParams = PipelineParams(),
    *,
    noise_level: Optional[float] = None,
    reference: Optional[ImageBuffer] = None,
    threads: int = 1,
    on_iteration: Optional[Callable[[int, np.ndarray], None]] = None,
) -> DenoiseOutcome:
    """Full pipeline with optional per-iteration PSNR tracking.

    With ``reference`` (or ``on_iteration``) set, all groups advance in
    lockstep and the aggregated image is rebuilt after every iteration.
    Results do not depend on ``threads``: groups are independent and the
    aggregation order is fixed.
    """
    ps = params.patch_size
    if ps > min(noisy.shape):
        raise ValueError(f"patch size {ps} exceeds image size {noisy.shape}")
    pre = median_prefilter(noisy, params.window_for(noise_level))
    grid = PatchGrid.for_image(noisy.height, noisy.width, ps, params.step)
    coords = _match_all(pre.pixels, grid, params.K, params.search_radius)
    D = _gather(noisy.pixels * params.intensity_scale, coords, ps)
    agg = _Aggregator(coords, noisy.shape, ps, params.aggregate_mode)

    bounds = list(range(0, D.shape[0], params.chunk_size)) + [D.shape[0]]
    chunks = [BatchIalm(D[a:b], cfg) for a, b in zip(bounds[:-1], bounds[1:])]
    A = np.empty_like(D)

    def advance(i, to_end):
        st = chunks[i]
        try:
            st.run() if to_end else st.step()
        except (SvdError, ValueError) as exc:
            a, b = bounds[i], bounds[i + 1]
            anchor = _locate_failure(D[a:b], cfg, grid.anchors[a:b])
            raise PipelineError(f"decomposition failed at anchor {anchor}: {exc}", anchor) from exc
        A[bounds[i] : bounds[i + 1]] = st.A

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        def each(to_end):
            if pool is None:
                for i in range(len(chunks)):
                    advance(i, to_end)
            else:
                list(pool.map(lambda i: advance(i, to_end), range(len(chunks))))

        trace = []
        if reference is not None or on_iteration is not None:
            for k in range(1, cfg.max_iters + 1):
                if all(st.done for st in chunks):
                    break
                each(False)
                img = np.clip(agg(A) / params.intensity_scale, 0, 255)
                if reference is not None:
                    trace.append((k, psnr(reference, img)))
                if on_iteration is not None:
                    on_iteration(k, img)
        else:
            each(True)
    finally:
        if pool is not None:
            pool.shutdown()

    out = np.clip(agg(A) / params.intensity_scale, 0, 255)
    restored = ImageBuffer(out, Provenance.RESTORED, noisy.name)
    return DenoiseOutcome(restored, trace, len(grid.anchors), pre)


def denoise_image(
    noisy: ImageBuffer,
    cfg: SolverConfig,
    params: PipelineParams = PipelineParams(),
    *,
    noise_level: Optional[float] = None,
    threads: int = 1,
) -> ImageBuffer:
    """Prefilter, match, decompose every NSS group and aggregate; output in ``[0, 255]``."""
    return run_denoise(noisy, cfg, params, noise_level=noise_level, threads=threads).image
