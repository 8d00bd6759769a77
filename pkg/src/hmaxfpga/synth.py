"""Seeded synthetic test images."""

from __future__ import annotations

import numpy as np

from .imgcore import NOMINAL_SIDE, GrayImage


def _to_gray(field: np.ndarray) -> GrayImage:
    lo, hi = field.min(), field.max()
    scaled = (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)
    return GrayImage(np.round(scaled * 255).astype(np.uint8))


def pink_noise(rng: np.random.Generator, side: int = NOMINAL_SIDE, exponent: float = 1.0) -> GrayImage:
    """Noise whose amplitude spectrum falls as 1/f**exponent (natural-image statistics)."""
    fy = np.fft.fftfreq(side)[:, None]
    fx = np.fft.rfftfreq(side)[None, :]
    f = np.hypot(fx, fy)
    f[0, 0] = 1.0
    spec = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f**exponent
    spec[0, 0] = 0.0
    return _to_gray(np.fft.irfft2(spec, s=(side, side)))


def white_noise(rng: np.random.Generator, side: int = NOMINAL_SIDE) -> GrayImage:
    return GrayImage(rng.integers(0, 256, (side, side), dtype=np.uint8))


def isotropic_noise(rng: np.random.Generator, side: int = NOMINAL_SIDE) -> GrayImage:
    return pink_noise(rng, side)


def grating(rng: np.random.Generator, side: int = NOMINAL_SIDE, noise: float = 0.3) -> GrayImage:
    """Sinusoidal grating at a random orientation, period and phase, plus 1/f noise."""
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(6.0, 20.0)
    phase = rng.uniform(0, 2 * np.pi)
    y, x = np.mgrid[0:side, 0:side].astype(np.float64)
    wave = np.cos(2 * np.pi * (x * np.cos(theta) + y * np.sin(theta)) / period + phase)
    bg = pink_noise(rng, side).pixels.astype(np.float64) / 127.5 - 1.0
    return _to_gray(wave + noise * bg)


def two_class_set(seed: int, n_per_class: int, side: int = NOMINAL_SIDE):
    """Balanced gratings (+1) vs isotropic 1/f noise (-1), interleaved."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for _ in range(n_per_class):
        images.append(grating(rng, side))
        labels.append(1)
        images.append(isotropic_noise(rng, side))
        labels.append(-1)
    return images, np.array(labels)
