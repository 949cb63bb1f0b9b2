"""Acceptance criteria 1-8, one test each.

Each test records a one-line verdict that the terminal summary prints.
Expensive denoising runs are cached per session and shared between criteria.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from lowrank.experiments import corrupt, spectrum_distance
from lowrank.metrics import NoiseSpec, corruption_masks, psnr, ssim
from lowrank.nss import PipelineParams, run_denoise
from lowrank.shrinkage import p_shrink, soft_threshold, svt, weighted_schatten_p_shrink
from lowrank.solvers import ialm_decompose, preset_config

ROOT = Path(__file__).resolve().parents[1]
SEED = 0
K_VALUES = (36, 64, 78)


class RunCache:
    def __init__(self):
        self.runs = {}

    def get(self, key, clean, level, method, params=PipelineParams(), track=False):
        if key not in self.runs:
            noisy = corrupt(clean, level, SEED)
            start = time.perf_counter()
            outcome = run_denoise(
                noisy, preset_config(method, level), params,
                noise_level=level, reference=clean if track else None,
            )
            self.runs[key] = {
                "noisy_psnr": psnr(clean, noisy),
                "psnr": psnr(clean, outcome.image),
                "ssim": ssim(clean, outcome.image),
                "trace": outcome.psnr_trace,
                "seconds": time.perf_counter() - start,
            }
        return self.runs[key]


@pytest.fixture(scope="module")
def runs():
    return RunCache()


@pytest.fixture(scope="module")
def half_corpus(corpus):
    """The corpus block-averaged 2x2 down to 128x128."""
    out = {}
    for name, img in corpus.items():
        h, w = img.shape
        px = img.pixels.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
        out[name] = img.with_pixels(px)
    return out


def k_run(runs, half_corpus, name, K):
    # K = 64 runs track PSNR per iteration so criterion 6 can reuse them
    return runs.get(("half", name, K), half_corpus[name], 0.3, "DWLP",
                    PipelineParams(K=K), track=K == 64)


def test_criterion_1_operator_reductions(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    y = rng.normal(scale=3.0, size=100_000)
    phi = rng.uniform(0, 3.0, size=100_000)
    scalar_gap = float(np.max(np.abs(p_shrink(y, phi, 1.0) - soft_threshold(y, phi))))
    matrix_gap = 0.0
    for _ in range(100):
        Y = rng.standard_normal((16, 16))
        alpha = rng.uniform(0, 2.0)
        A, _ = weighted_schatten_p_shrink(Y, None, alpha, 1.0, 1.0)
        matrix_gap = max(matrix_gap, float(np.linalg.norm(A - svt(Y, alpha))))
    elapsed = time.perf_counter() - start
    ok = scalar_gap <= 1e-12 and matrix_gap <= 1e-10 and elapsed < 10
    acceptance_log[1] = (ok, f"max scalar gap {scalar_gap:.1e}, max Frobenius gap {matrix_gap:.1e}, {elapsed:.1f} s")
    assert ok


def synthetic_rpca(seed, m=64, rank=5, fraction=0.1):
    rng = np.random.default_rng(seed)
    L0 = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, m))
    amp = np.mean(np.abs(L0))
    S0 = np.where(rng.random((m, m)) < fraction, rng.choice([-amp, amp], size=(m, m)), 0.0)
    return L0, L0 + S0


def test_criterion_2_synthetic_recovery(acceptance_log):
    start = time.perf_counter()
    pcp = preset_config("PCP")
    dwlp = preset_config("DWLP", p=0.8, q=0.42, ratio=10.0)
    rel = lambda A, L0: np.linalg.norm(A - L0) / np.linalg.norm(L0)
    pcp_err, dwlp_err = [], []
    for seed in range(50):
        L0, D = synthetic_rpca(seed)
        pcp_err.append(rel(ialm_decompose(D, pcp).A, L0))
        dwlp_err.append(rel(ialm_decompose(D, dwlp).A, L0))
    pcp_err, dwlp_err = np.array(pcp_err), np.array(dwlp_err)
    # errors near 1e-7 are at solver tolerance; a tie there is not a loss
    wins = int(np.sum(dwlp_err <= pcp_err + 1e-6))
    elapsed = time.perf_counter() - start
    median = float(np.median(pcp_err))
    ok = median < 1e-2 and wins >= 45 and elapsed < 60
    acceptance_log[2] = (
        ok,
        f"PCP median error {median:.1e} ({int(np.sum(pcp_err < 1e-2))}/50 trials < 1e-2), "
        f"DWLP <= PCP on {wins}/50, {elapsed:.0f} s",
    )
    assert ok


def synthetic_group(seed, decay=0.7, c=64, K=64):
    """A clean 64x64 group in [0, 1]: per-pixel mean plus a geometrically decaying spectrum."""
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((c, c)))
    V, _ = np.linalg.qr(rng.standard_normal((K, K)))
    base = 0.25 + 0.5 * rng.random(c)
    L = np.clip(np.outer(base, np.ones(K)) + (U * (2.0 * decay ** np.arange(c))) @ V.T, 0.0, 1.0)
    salt, pepper = corruption_masks(L.shape, NoiseSpec(0.1, seed=seed))
    return L, np.where(salt, 1.0, np.where(pepper, 0.0, L))


def test_criterion_3_spectrum_ordering(acceptance_log):
    order = ["DWLP", "DWLP_11", "WSNM_RPCA", "WNNM_RPCA", "PCP"]
    dist = {m: [] for m in order}
    for seed in range(20):
        L, D = synthetic_group(seed)
        clean = np.linalg.svd(L, compute_uv=False)
        for m in order:
            A = ialm_decompose(D, preset_config(m, 0.1)).A
            dist[m].append(spectrum_distance(np.linalg.svd(A, compute_uv=False), clean))
    med = {m: float(np.median(v)) for m, v in dist.items()}
    d = [med[m] for m in order]
    checks = [d[0] < d[1], d[1] < d[2], d[2] <= d[3], d[3] < d[4]]
    ok = all(checks)
    broken = [f"{order[i]} vs {order[i + 1]}" for i, c in enumerate(checks) if not c]
    detail = ", ".join(f"{m} {v:.2e}" for m, v in med.items())
    acceptance_log[3] = (ok, detail + (f"; violated: {', '.join(broken)}" if broken else ""))
    assert ok, broken


def test_criterion_4_camera_margins(runs, corpus, acceptance_log):
    cam = corpus["camera"]
    dwlp = runs.get(("camera", 0.1, "DWLP"), cam, 0.1, "DWLP")
    pcp = runs.get(("camera", 0.1, "PCP"), cam, 0.1, "PCP")
    gain = dwlp["psnr"] - dwlp["noisy_psnr"]
    margin = dwlp["psnr"] - pcp["psnr"]
    ok = gain >= 15 and margin >= 3 and dwlp["seconds"] < 600
    acceptance_log[4] = (
        ok,
        f"noisy {dwlp['noisy_psnr']:.2f}, DWLP {dwlp['psnr']:.2f} (+{gain:.2f}), PCP {pcp['psnr']:.2f} "
        f"(DWLP margin {margin:.2f} dB), DWLP run {dwlp['seconds']:.0f} s single-threaded",
    )
    assert ok


def test_criterion_5_reference_numbers(runs, corpus, half_corpus, acceptance_log):
    # the published test photographs are not in the corpus, so this is report-only
    cam = runs.get(("camera", 0.1, "DWLP"), corpus["camera"], 0.1, "DWLP")
    at30 = [k_run(runs, half_corpus, name, 64) for name in sorted(half_corpus)]
    acceptance_log[5] = (
        "N/A",
        f"reference images unavailable; ours: camera 256 @10% {cam['psnr']:.2f} dB / SSIM {cam['ssim']:.3f}, "
        f"128px corpus @30% mean {np.mean([r['psnr'] for r in at30]):.2f} dB / "
        f"SSIM {np.mean([r['ssim'] for r in at30]):.3f}",
    )


def settle_iteration(trace, threshold=0.05):
    """First iteration after which every PSNR increment stays below ``threshold``."""
    values = [v for _, v in trace]
    for k in range(1, len(values)):
        if all(abs(b - a) < threshold for a, b in zip(values[k - 1 :], values[k:])):
            return trace[k][0]
    return None


def test_criterion_6_convergence(runs, half_corpus, acceptance_log):
    settled = {}
    for name in sorted(half_corpus):
        settled[name] = settle_iteration(k_run(runs, half_corpus, name, 64)["trace"])
    ok = all(k is not None and k < 30 for k in settled.values())
    acceptance_log[6] = (ok, "settles (< 0.05 dB/iter) at iteration " + ", ".join(f"{n} {k}" for n, k in settled.items()))
    assert ok


def test_criterion_7_k_sweep(runs, half_corpus, acceptance_log):
    mean = {K: float(np.mean([k_run(runs, half_corpus, n, K)["psnr"] for n in sorted(half_corpus)]))
            for K in K_VALUES}
    rise, tail = mean[64] - mean[36], mean[78] - mean[64]
    ok = rise > 2 and tail < 0.5
    acceptance_log[7] = (ok, f"mean PSNR K=36 {mean[36]:.2f}, K=64 {mean[64]:.2f}, K=78 {mean[78]:.2f} "
                             f"(rise {rise:+.2f}, tail {tail:+.2f})")
    assert ok


def test_criterion_8_property_suites(acceptance_log):
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "tests",
         "--ignore", str(Path(__file__).relative_to(ROOT))],
        cwd=ROOT, capture_output=True, text=True, timeout=900,
    )
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 300
    acceptance_log[8] = (ok, f"unit and property suites: {summary} ({elapsed:.0f} s)")
    assert ok, proc.stdout[-3000:]
