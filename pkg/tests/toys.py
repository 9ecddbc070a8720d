"""Gaussian-blob image classes: class c is a bright blob near its own anchor point."""

import numpy as np

from cmrmeta.data import LabelledSample

ANCHORS = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.5), (0.75, 0.15), (0.5, 0.85)]


def blob_images(cls: int, count: int, size: int = 64, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, cls])
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    out = np.empty((count, size, size))
    for i in range(count):
        cy, cx = (np.array(ANCHORS[cls]) + rng.normal(0, 0.04, 2)) * size
        sigma = size * rng.uniform(0.06, 0.1)
        img = 0.8 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        out[i] = np.clip(img + rng.normal(0, 0.05, img.shape) + 0.1, 0, 1)
    return out


def blob_samples(classes, count, codes=None, size=64, seed=0, id_base=0):
    codes = codes or {c: c + 1 for c in classes}
    samples = []
    for c in classes:
        for i, img in enumerate(blob_images(c, count, size, seed)):
            samples.append(LabelledSample(img, codes[c], id_base + c * 100_000 + i))
    return samples
