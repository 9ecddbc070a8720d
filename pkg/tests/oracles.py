"""Brute-force reference implementations used by the tests.

Nothing here calls numpy's FFT: transforms are explicit DFT sums built from
the definition, row selections are spelled out index by index.
"""

from __future__ import annotations

import cmath
import math

import numpy as np


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with rows ordered by signed frequency -n//2 .. n-n//2-1."""
    out = np.empty((n, n), dtype=complex)
    for r in range(n):
        f = r - n // 2
        for x in range(n):
            out[r, x] = cmath.exp(-2j * math.pi * f * x / n) / math.sqrt(n)
    return out


def direct_forward(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return dft_matrix(h) @ img @ dft_matrix(w).T


def direct_inverse(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    a, b = dft_matrix(h), dft_matrix(w)
    cplx = a.conj().T @ grid @ b.conj()
    return np.clip(np.abs(cplx), 0.0, 1.0)


def shift_rows(img: np.ndarray, t: int) -> np.ndarray:
    h = img.shape[0]
    out = np.empty_like(img)
    for y in range(h):
        out[(y + t) % h] = img[y]
    return out


def respiratory(img, t, period, duty, phase):
    grid = direct_forward(img)
    moved = direct_forward(shift_rows(img, t))
    for j in range(img.shape[0]):
        if (math.sin(2 * math.pi * (j + phase) / period) + 1) / 2 < duty:
            grid[j] = moved[j]
    return direct_inverse(grid)


def cardiac(cine):
    t_frames, h, _ = cine.shape
    spectra = [direct_forward(f) for f in cine]
    grid = np.empty_like(spectra[0])
    for j in range(h):
        grid[j] = spectra[math.floor(j * t_frames / h)][j]
    return direct_inverse(grid)


def gibbs(img, keep_fraction):
    h, w = img.shape
    grid = direct_forward(img)
    out = np.zeros_like(grid)
    kh, kw = round(keep_fraction * h), round(keep_fraction * w)
    for r in range(h):
        for c in range(w):
            fr, fc = r - h // 2, c - w // 2
            if -(kh // 2) <= fr < kh - kh // 2 and -(kw // 2) <= fc < kw - kw // 2:
                out[r, c] = grid[r, c]
    return direct_inverse(out)


def aliasing(img, factor):
    h = img.shape[0]
    grid = direct_forward(img)
    for r in range(h):
        if (r - h // 2) % factor != 0:
            grid[r] = 0
    return direct_inverse(grid)


def truncated_step(n: int, keep: int, low: float, high: float) -> np.ndarray:
    """Partial Fourier sum of a periodic step row, evaluated term by term."""
    signal = np.where((np.arange(n) >= n // 4) & (np.arange(n) < 3 * n // 4), high, low)
    freqs = [f for f in range(-(n // 2), n - n // 2) if -(keep // 2) <= f < keep - keep // 2]
    coefs = {f: sum(signal[y] * cmath.exp(-2j * math.pi * f * y / n) for y in range(n)) / n for f in freqs}
    out = np.zeros(n)
    for x in range(n):
        out[x] = abs(sum(c * cmath.exp(2j * math.pi * f * x / n) for f, c in coefs.items()))
    return out


def naive_conv(x, w, b):
    """Same-padded stride-1 correlation, one output value at a time. x: (N, H, W, C)."""
    n, h, wd, c = x.shape
    k, _, _, c_out = w.shape
    pad = k // 2
    out = np.zeros((n, h, wd, c_out))
    for s in range(n):
        for y in range(h):
            for z in range(wd):
                for o in range(c_out):
                    acc = b[o]
                    for i in range(k):
                        for j in range(k):
                            yy, zz = y + i - pad, z + j - pad
                            if 0 <= yy < h and 0 <= zz < wd:
                                acc += float(np.dot(x[s, yy, zz], w[i, j, :, o]))
                    out[s, y, z, o] = acc
    return out


def naive_pool(x):
    n, h, wd, c = x.shape
    out = np.zeros((n, h // 2, wd // 2, c))
    for s in range(n):
        for y in range(h // 2):
            for z in range(wd // 2):
                for ch in range(c):
                    out[s, y, z, ch] = max(x[s, 2 * y + a, 2 * z + bb, ch] for a in (0, 1) for bb in (0, 1))
    return out


def naive_forward(spec, params, x, running=None, eps=1e-5):
    """Layer-by-layer recomputation: conv, ReLU, pool blocks then FC/BN/ReLU modules."""
    h = np.asarray(x, dtype=np.float64)[..., None]
    for i in range(len(spec.conv_channels)):
        h = naive_conv(h, params[f"conv{i}.w"], params[f"conv{i}.b"])
        h = np.maximum(h, 0.0)
        h = naive_pool(h)
    h = h.reshape(h.shape[0], -1)
    names = spec.head_layer_names
    for idx, name in enumerate(names):
        h = h @ params[f"{name}.w"] + params[f"{name}.b"]
        if running is None:
            mu = h.mean(axis=0)
            var = ((h - mu) ** 2).mean(axis=0)
        else:
            mu, var = running[0][name], running[1][name]
        h = params[f"{name}.gamma"] * (h - mu) / np.sqrt(var + eps) + params[f"{name}.beta"]
        if idx < len(names) - 1 or spec.final_relu:
            h = np.maximum(h, 0.0)
    return h
