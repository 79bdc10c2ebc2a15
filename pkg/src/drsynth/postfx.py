"""Camera-style degradations on the final 8-bit image: salt-and-pepper noise and Gaussian blur."""

from __future__ import annotations

import math

import numpy as np

from .config import PostFxConfig


def salt_pepper(image: np.ndarray, amount: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each pixel (all channels at once) with black or white with probability ``amount``."""
    if not 0.0 <= amount <= 1.0:
        raise ValueError("amount must be in [0, 1]")
    out = np.array(image, dtype=np.uint8, copy=True)
    h, w = out.shape[:2]
    hit = rng.random((h, w)) < amount
    white = rng.random((h, w)) < 0.5
    out[hit & white] = 255
    out[hit & ~white] = 0
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    # mode "symmetric" repeats the edge sample: (c b a | a b c)
    p = np.pad(a, pad, mode="symmetric")
    out = np.zeros_like(a)
    n = a.shape[axis]
    for j, wgt in enumerate(k):
        out += wgt * np.take(p, np.arange(j, j + n), axis=axis)
    return out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable blur, radius ceil(3 sigma), unit-sum kernel, reflected borders; rounds back to uint8."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    src = np.asarray(image)
    k = gaussian_kernel(sigma)
    a = src.astype(np.float64)
    a = _convolve_axis(_convolve_axis(a, k, 0), k, 1)
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def apply_postfx(image: np.ndarray, cfg: PostFxConfig, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Randomly blur then add noise. Returns the image and a record of what was applied."""
    do_noise = rng.random() < cfg.noise_probability
    do_blur = rng.random() < cfg.blur_probability
    amount = float(rng.uniform(*cfg.noise_amount)) if do_noise else None
    sigma = float(rng.uniform(*cfg.blur_sigma)) if do_blur else None
    flags: dict = {}
    out = np.asarray(image, dtype=np.uint8)
    if do_blur:
        out = gaussian_blur(out, sigma)
        flags["blur"] = {"sigma": round(sigma, 6)}
    if do_noise:
        out = salt_pepper(out, amount, rng)
        flags["noise"] = {"amount": round(amount, 6)}
    return out, flags
