"""Low-rank plus sparse matrix recovery and salt-and-pepper image denoising.

The solver is an inexact augmented Lagrange multiplier (IALM) loop over a
dual weighted lp-norm objective; presets reduce it to PCP, WNNM-RPCA,
WSNM-RPCA and DWLP(p=q=1).
"""

from lowrank.linalg import SvdError, SvdFactors, frobenius_norm, spectral_norm, svd
from lowrank.shrinkage import (
    WeightVector,
    p_shrink,
    soft_threshold,
    svt,
    weighted_p_shrink,
    weighted_schatten_p_shrink,
)
from lowrank.solvers import (
    DecompositionResult,
    IterationRecord,
    Method,
    SolverConfig,
    ialm_decompose,
    preset_config,
    relative_residual,
    solve_a_subproblem,
    solve_e_subproblem,
)
from lowrank.image import ImageBuffer, Provenance
from lowrank.metrics import NoiseSpec, add_salt_pepper, psnr, ssim
from lowrank.nss import (
    AggregateMode,
    NssGroup,
    PatchGrid,
    PipelineParams,
    aggregate,
    build_nss_group,
    denoise_image,
    extract_patch,
    match_similar,
    median_prefilter,
)

__version__ = "0.1.0"
