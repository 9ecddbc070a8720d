"""Artefact injection through k-space manipulation.

Images are 2-D float arrays with values in [0, 1] and power-of-two sides
(>= 32 for corpus images; the transforms themselves accept any size so that
small grids can be checked against a direct DFT). Spectra use a unitary
normalisation and a DC-centred layout: array row ``r`` holds spatial
frequency ``r - H // 2``, so the DC coefficient sits at ``[H // 2, W // 2]``.

Every injector is a pure function of its arguments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ParameterError(ValueError):
    """Raised when an image or artefact parameter is outside its valid range."""


class ArtefactClass(str, enum.Enum):
    RESPIRATORY_MOTION = "RespiratoryMotion"
    CARDIAC_MOTION = "CardiacMotion"
    GIBBS = "Gibbs"
    ALIASING = "Aliasing"
    ARTEFACT_FREE = "ArtefactFree"

    @classmethod
    def parse(cls, value: "str | ArtefactClass") -> "ArtefactClass":
        if isinstance(value, cls):
            return value
        for member in cls:
            if value in (member.value, member.name):
                return member
        raise ParameterError(f"unknown artefact class {value!r}")


# canonical ordering used wherever classes need a stable order
CLASS_ORDER = tuple(ArtefactClass)


@dataclass(frozen=True)
class ArtefactParams:
    translation_px: int = 4
    sine_period: float = 8.0
    sine_duty: float = 0.5
    gibbs_keep_fraction: float = 0.3
    aliasing_factor: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.sine_period <= 0:
            raise ParameterError("sine_period must be positive")
        if not 0.0 < self.sine_duty <= 1.0:
            raise ParameterError("sine_duty must lie in (0, 1]")
        if not 0.0 < self.gibbs_keep_fraction <= 1.0:
            raise ParameterError("gibbs_keep_fraction must lie in (0, 1]")
        if self.aliasing_factor < 2:
            raise ParameterError("aliasing_factor must be >= 2")


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def check_image(img: np.ndarray, min_side: int = 32) -> np.ndarray:
    """Validate an ImageGray and return it as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {img.shape}")
    for side in img.shape:
        if side < min_side or not is_power_of_two(side):
            raise ParameterError(f"image sides must be powers of two >= {min_side}, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ParameterError("image intensities must be finite and within [0, 1]")
    return img


def check_cine(cine: np.ndarray, min_side: int = 32) -> np.ndarray:
    cine = np.asarray(cine, dtype=np.float64)
    if cine.ndim != 3:
        raise ParameterError(f"expected a (T, H, W) cine stack, got shape {cine.shape}")
    if cine.shape[0] < 2:
        raise ParameterError("cine stack needs at least 2 frames")
    for frame in cine:
        check_image(frame, min_side)
    return cine


def forward_fft(img: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT with the DC coefficient moved to the grid centre."""
    return np.fft.fftshift(np.fft.fft2(np.asarray(img, dtype=np.float64), norm="ortho"))


def inverse_fft(grid: np.ndarray) -> np.ndarray:
    """Magnitude reconstruction of a DC-centred spectrum, clamped to [0, 1]."""
    cplx = np.fft.ifft2(np.fft.ifftshift(grid), norm="ortho")
    return np.clip(np.abs(cplx), 0.0, 1.0)


def centred_frequencies(n: int) -> np.ndarray:
    """Signed frequency held by each row (or column) of a DC-centred grid."""
    return np.arange(n) - n // 2


def respiratory_row_mask(height: int, period: float, duty: float, seed: int) -> np.ndarray:
    """Rows of k-space taken from the moved image.

    Row ``j`` (array index in the DC-centred grid) is moved when
    ``(sin(2*pi*(j + phase) / period) + 1) / 2 < duty``; the phase is drawn
    uniformly from ``[0, period)`` using ``seed``.
    """
    phase = np.random.default_rng(seed).uniform(0.0, period)
    j = np.arange(height)
    level = (np.sin(2.0 * np.pi * (j + phase) / period) + 1.0) / 2.0
    return level < duty


def inject_respiratory_motion(img: np.ndarray, p: ArtefactParams, min_side: int = 32) -> np.ndarray:
    img = check_image(img, min_side)
    height = img.shape[0]
    if abs(p.translation_px) >= height / 4:
        raise ParameterError(f"|translation_px| must be < height/4 = {height / 4}")
    moved = np.roll(img, p.translation_px, axis=0)
    mask = respiratory_row_mask(height, p.sine_period, p.sine_duty, p.rng_seed)
    grid = forward_fft(img)
    grid[mask] = forward_fft(moved)[mask]
    return inverse_fft(grid)


def cardiac_row_sources(height: int, frames: int) -> np.ndarray:
    """Frame index feeding each k-space row: a monotone sweep floor(j*T/H)."""
    return (np.arange(height) * frames) // height


def inject_cardiac_motion(cine: np.ndarray, p: ArtefactParams | None = None, min_side: int = 32) -> np.ndarray:
    cine = check_cine(cine, min_side)
    frames, height, _ = cine.shape
    spectra = np.fft.fftshift(np.fft.fft2(cine, norm="ortho", axes=(1, 2)), axes=(1, 2))
    src = cardiac_row_sources(height, frames)
    grid = spectra[src, np.arange(height), :]
    return inverse_fft(grid)


def gibbs_block(n: int, keep_fraction: float) -> slice:
    """Central index range of length round(keep_fraction * n), always containing DC."""
    keep = min(n, max(1, int(round(keep_fraction * n))))
    start = n // 2 - keep // 2
    return slice(start, start + keep)


def inject_gibbs(img: np.ndarray, p: ArtefactParams, min_side: int = 32) -> np.ndarray:
    img = check_image(img, min_side)
    grid = forward_fft(img)
    rows = gibbs_block(img.shape[0], p.gibbs_keep_fraction)
    cols = gibbs_block(img.shape[1], p.gibbs_keep_fraction)
    filtered = np.zeros_like(grid)
    filtered[rows, cols] = grid[rows, cols]
    return inverse_fft(filtered)


def aliasing_row_mask(height: int, factor: int) -> np.ndarray:
    """Rows kept under undersampling: signed frequency divisible by ``factor``."""
    return centred_frequencies(height) % factor == 0


def inject_aliasing(img: np.ndarray, p: ArtefactParams, min_side: int = 32) -> np.ndarray:
    img = check_image(img, min_side)
    height = img.shape[0]
    if height % p.aliasing_factor:
        raise ParameterError(f"aliasing_factor {p.aliasing_factor} does not divide height {height}")
    grid = forward_fft(img)
    grid[~aliasing_row_mask(height, p.aliasing_factor)] = 0.0
    return inverse_fft(grid)


def synthesize_sample(source: np.ndarray, cls: ArtefactClass | str, p: ArtefactParams,
                      min_side: int = 32) -> np.ndarray:
    """Degrade frame 0 of ``source`` (or the whole stack for cardiac motion)."""
    cls = ArtefactClass.parse(cls)
    source = check_cine(source, min_side)
    if cls is ArtefactClass.CARDIAC_MOTION:
        return inject_cardiac_motion(source, p, min_side)
    frame = source[0]
    if cls is ArtefactClass.RESPIRATORY_MOTION:
        return inject_respiratory_motion(frame, p, min_side)
    if cls is ArtefactClass.GIBBS:
        return inject_gibbs(frame, p, min_side)
    if cls is ArtefactClass.ALIASING:
        return inject_aliasing(frame, p, min_side)
    return frame.copy()
