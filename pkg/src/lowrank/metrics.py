"""Salt-and-pepper noise injection and the PSNR / SSIM quality metrics."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d

from lowrank.image import ImageBuffer, Provenance

PEAK = 255.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class NoiseSpec:
    probability: float
    seed: int = 0
    salt_value: float = 255.0
    pepper_value: float = 0.0
    salt_fraction: float = 0.5

    def __post_init__(self):
        if not 0 < self.probability <= 1:
            raise ValueError(f"noise probability must lie in (0, 1], got {self.probability}")
        if not 0 <= self.salt_fraction <= 1:
            raise ValueError(f"salt_fraction must lie in [0, 1], got {self.salt_fraction}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _uniform_draws(shape, seed: int) -> np.ndarray:
    # PCG64, one double per pixel in row-major order
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.random(int(np.prod(shape))).reshape(shape)


def corruption_masks(shape, spec: NoiseSpec):
    """Return ``(salt_mask, pepper_mask)`` for an image of ``shape``.

    A pixel with draw ``u`` is corrupted when ``u < P``; it becomes salt when
    ``u < P * salt_fraction`` and pepper otherwise.
    """
    u = _uniform_draws(shape, spec.seed)
    corrupted = u < spec.probability
    salt = u < spec.probability * spec.salt_fraction
    return salt, corrupted & ~salt


def add_salt_pepper(img: ImageBuffer, spec: NoiseSpec) -> ImageBuffer:
    salt, pepper = corruption_masks(img.shape, spec)
    out = np.array(img.pixels)
    out[salt] = spec.salt_value
    out[pepper] = spec.pepper_value
    return img.with_pixels(out, Provenance.NOISY)


def _pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, ImageBuffer) else np.asarray(x, dtype=np.float64)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def psnr(reference, test) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    a, b = _pixels(reference), _pixels(test)
    _check_dims(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(reference, test) -> float:
    """Mean structural similarity over all valid 11x11 Gaussian window positions.

    Uses the usual constants ``K1=0.01``, ``K2=0.03``, ``L=255``. Images smaller
    than the window are scored with a single window covering the whole image.
    """
    a, b = _pixels(reference), _pixels(test)
    _check_dims(a, b)
    size = min(SSIM_WINDOW, *a.shape)
    w = gaussian_window(size, SSIM_SIGMA)

    def filt(x):
        return correlate2d(x, w, mode="valid")

    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
