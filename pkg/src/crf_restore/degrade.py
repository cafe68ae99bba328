"""Synthetic degradations: additive white Gaussian noise and Bernoulli masks.

All randomness goes through numpy's Philox bit generator, a counter-based
generator whose streams are stable across platforms and numpy releases, so
seeded outputs are reproducible bit-for-bit.  Noisy values are *not* clipped
to [0, 255]; the solver operates on the raw observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import as_image, load_image, save_image

__all__ = [
    "DegradationSpec",
    "add_noise",
    "make_mask",
    "apply_mask",
    "apply_degradation",
    "save_mask",
    "load_mask",
]


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class DegradationSpec:
    """Noise level, fraction of observed pixels, and the seed driving both."""

    noise_sigma: float = 0.0
    keep_probability: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 < self.keep_probability <= 1.0:
            raise ValueError("keep_probability must be in (0, 1]")


def add_noise(img, sigma: float, seed) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) to every pixel; deterministic given the seed."""
    img = as_image(img)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return img + _rng(seed).normal(0.0, sigma, size=img.shape)


def make_mask(shape, keep_probability: float, seed) -> np.ndarray:
    """Boolean mask of observed pixels, i.i.d. Bernoulli(keep_probability)."""
    if not 0.0 < keep_probability <= 1.0:
        raise ValueError("keep_probability must be in (0, 1]")
    return _rng(seed).random(size=tuple(shape)) < keep_probability


def apply_mask(img, mask, fill: float = 0.0) -> np.ndarray:
    """Copy observed pixels, set missing ones to ``fill`` (a placeholder, not data)."""
    img = as_image(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape:
        raise ValueError(f"mask shape {mask.shape} != image shape {img.shape}")
    return np.where(mask, img, fill)


def apply_degradation(img, spec: DegradationSpec, fill: float = 0.0):
    """Noise plus masking in one step; returns ``(degraded, mask)``.

    Independent substreams for noise and mask are derived from ``spec.seed``,
    so one seed reproduces the whole degradation.
    """
    noise_seq, mask_seq = np.random.SeedSequence(spec.seed).spawn(2)
    noisy = add_noise(img, spec.noise_sigma, noise_seq)
    if spec.keep_probability >= 1.0:
        mask = np.ones(noisy.shape, dtype=bool)
    else:
        mask = make_mask(noisy.shape, spec.keep_probability, mask_seq)
    return apply_mask(noisy, mask, fill), mask


# Masks on disk are PGM/PNG images with 0 = missing and 255 = observed; any
# nonzero sample counts as observed so third-party masks are usable.

def save_mask(mask, path) -> None:
    save_image(np.asarray(mask, dtype=bool) * 255.0, path)


def load_mask(path) -> np.ndarray:
    return load_image(path) > 0
