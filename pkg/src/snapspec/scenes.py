"""Synthetic radiance cubes for training and evaluation.

A scene is a convex mixture of a few smooth endmember spectra with smooth
spatial abundance maps (sums of random Gaussian blobs, normalized to a
partition of unity per pixel), rescaled so the cube peaks at 0.9. This
gives spatially and spectrally correlated data that a learned prior can
actually exploit, unlike white noise.
"""

import numpy as np

from .forward_model import HyperCube
from .rng import Xoshiro256
from .spectra import wavelength_grid


def _endmember(rng, grid):
    n_lobes = rng.integers(2, 5)
    centers = rng.uniform(n_lobes, grid[0], grid[-1])
    span = grid[-1] - grid[0]
    widths = rng.uniform(n_lobes, 0.05 * span, 0.35 * span)
    amps = rng.uniform(n_lobes, 0.3, 1.0)
    d = grid[None, :] - centers[:, None]
    curve = (amps[:, None] * np.exp(-0.5 * (d / widths[:, None]) ** 2)).sum(axis=0)
    lo, hi = curve.min(), curve.max()
    if hi - lo < 1e-9:
        return np.full(grid.size, 0.5)
    return 0.1 + 0.9 * (curve - lo) / (hi - lo)


def _abundance_stack(rng, n_maps, height, width, blobs_range):
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    stack = np.empty((n_maps, height, width))
    for e in range(n_maps):
        n_blobs = rng.integers(*blobs_range)
        cy = rng.uniform(n_blobs, 0, height)
        cx = rng.uniform(n_blobs, 0, width)
        sg = rng.uniform(n_blobs, height / 8.0, height / 2.0)
        am = rng.uniform(n_blobs, 0.5, 1.5)
        f = np.zeros((height, width))
        for b in range(n_blobs):
            f += am[b] * np.exp(
                -((yy - cy[b]) ** 2 + (xx - cx[b]) ** 2) / (2.0 * sg[b] ** 2)
            )
        stack[e] = f + 1e-3  # keep strictly positive for the normalization
    return stack / stack.sum(axis=0, keepdims=True)


def generate_scenes(
    count,
    height,
    width,
    bands,
    seed,
    grid=None,
    endmembers_range=(3, 7),
    blobs_range=(3, 9),
):
    """Deterministic list of `count` scenes, one child stream per scene."""
    if count < 1:
        raise ValueError("need count >= 1")
    if height % 4 or width % 4:
        raise ValueError("scene H and W must be divisible by 4")
    if grid is None:
        grid = wavelength_grid(bands)
    root = Xoshiro256(seed)
    scenes = []
    for i in range(count):
        rng = root.spawn(i)
        n_end = rng.integers(*endmembers_range)
        spectra = np.stack([_endmember(rng, grid) for _ in range(n_end)])
        abund = _abundance_stack(rng, n_end, height, width, blobs_range)
        cube = np.einsum("ehw,eb->hwb", abund, spectra)
        cube *= 0.9 / cube.max()
        scenes.append(HyperCube(data=cube.astype(np.float32), grid=grid))
    return scenes
