"""Synthetic short-axis cine phantoms.

A dark background holds an elliptical torso with two darker lung fields and
a heart: an annular myocardium around a bright blood pool whose radius
contracts and relaxes sinusoidally over the stack (one cycle per stack).
Static tissue texture and per-frame noise are seeded, so a stack is a pure
function of ``(seed, size, frames)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .kspace import ParameterError, is_power_of_two


@dataclass(frozen=True)
class PhantomGeometry:
    torso_centre: tuple[float, float]
    torso_axes: tuple[float, float]
    torso_level: float
    lung_offset: float
    lung_axes: tuple[float, float]
    lung_level: float
    heart_centre: tuple[float, float]
    outer_radius: float
    myo_level: float
    blood_level: float
    inner_mean: float
    inner_amplitude: float
    texture_amplitude: float
    noise_sigma: float


def phantom_geometry(seed: int) -> PhantomGeometry:
    """Draw the closed-form shape parameters for a phantom seed."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    outer = rng.uniform(0.26, 0.34)
    return PhantomGeometry(
        torso_centre=(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)),
        torso_axes=(rng.uniform(0.55, 0.70), rng.uniform(0.78, 0.92)),
        torso_level=rng.uniform(0.30, 0.42),
        lung_offset=rng.uniform(0.45, 0.55),
        lung_axes=(rng.uniform(0.25, 0.35), rng.uniform(0.12, 0.18)),
        lung_level=rng.uniform(0.04, 0.10),
        heart_centre=(rng.uniform(-0.10, 0.10), rng.uniform(-0.12, 0.05)),
        outer_radius=outer,
        myo_level=rng.uniform(0.15, 0.25),
        blood_level=rng.uniform(0.75, 0.92),
        inner_mean=outer * rng.uniform(0.55, 0.62),
        inner_amplitude=outer * rng.uniform(0.12, 0.20),
        texture_amplitude=rng.uniform(0.02, 0.04),
        noise_sigma=0.01,
    )


def inner_radius(geom: PhantomGeometry, frame: int | np.ndarray, frames: int) -> np.ndarray:
    """Blood-pool radius at ``frame``: mean + amplitude * cos(2*pi*frame/frames)."""
    return geom.inner_mean + geom.inner_amplitude * np.cos(2.0 * np.pi * np.asarray(frame) / frames)


def _ellipse(yy, xx, centre, axes):
    return ((yy - centre[0]) / axes[0]) ** 2 + ((xx - centre[1]) / axes[1]) ** 2 <= 1.0


def render_frame(geom: PhantomGeometry, size: int, radius: float) -> np.ndarray:
    """Noise-free frame with the given blood-pool radius (normalised units)."""
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    img = np.zeros((size, size))
    img[_ellipse(yy, xx, geom.torso_centre, geom.torso_axes)] = geom.torso_level
    cy, cx = geom.torso_centre
    for side in (-1.0, 1.0):
        lung = _ellipse(yy, xx, (cy - 0.05, cx + side * geom.lung_offset), geom.lung_axes)
        img[lung] = geom.lung_level
    hy, hx = geom.heart_centre
    r = np.hypot(yy - hy, xx - hx)
    img[r <= geom.outer_radius] = geom.myo_level
    img[r <= radius] = geom.blood_level
    return img


def generate_phantom(seed: int, size: int = 64, frames: int = 16) -> np.ndarray:
    """Return a ``(frames, size, size)`` cine stack with values in [0, 1]."""
    if size < 32 or not is_power_of_two(size):
        raise ParameterError(f"phantom size must be a power of two >= 32, got {size}")
    if frames < 2:
        raise ParameterError(f"phantom needs at least 2 frames, got {frames}")
    geom = phantom_geometry(seed)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, 0x7E47])
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=1.5)
    texture *= geom.texture_amplitude / max(texture.std(), 1e-12)
    radii = inner_radius(geom, np.arange(frames), frames)
    stack = np.empty((frames, size, size))
    for t, radius in enumerate(radii):
        frame = ndimage.gaussian_filter(render_frame(geom, size, radius), sigma=0.6)
        body = frame > 0.02
        frame = frame + body * texture + geom.noise_sigma * rng.standard_normal((size, size))
        stack[t] = np.clip(frame, 0.0, 1.0)
    return stack
