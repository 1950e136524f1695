"""Project a spectral cube through the filter mosaic and look at what's left.

Builds the periodic filter array, encodes a synthetic scene into a single
2D snapshot, checks the forward/adjoint pairing numerically, and scores the
energy-normalized adjoint that later serves as the solver's starting point.
"""

import numpy as np

from snapspec.forward_model import (
    adjoint,
    build_mosaic,
    coding_energy,
    encode,
    init_estimate,
)
from snapspec.metrics import psnr, ssim
from snapspec.rng import Xoshiro256
from snapspec.scenes import generate_scenes
from snapspec.selection import select_fps
from snapspec.spectra import generate_synthetic

S, H, W, BANDS = 3, 48, 48, 24

bank = generate_synthetic(80, seed=7, bands=BANDS, g_max=0.3)
chosen = select_fps(bank, S * S)
phi = build_mosaic(chosen.theta, H, W, S)
print(f"mosaic: {S}x{S} tile over {H}x{W} pixels, {BANDS} bands")
print(f"coding energy per pixel: min {coding_energy(phi).min():.3f}, "
      f"max {coding_energy(phi).max():.3f}")

scene = generate_scenes(1, H, W, BANDS, seed=1)[0]
meas = encode(scene, phi, sigma=0.0)
print(f"\nscene {scene.data.shape} -> snapshot {meas.y.shape} "
      f"({scene.data.size // meas.y.size}x compression)")

# the transpose test every linear operator must pass
rng = Xoshiro256(3)
x = rng.normal(scene.data.shape)
y = rng.normal(meas.y.shape)
lhs = float((encode(x, phi).y * y).sum())
rhs = float((x * adjoint(y, phi)).sum())
print(f"<Ax, y> = {lhs:.10f}")
print(f"<x, A'y> = {rhs:.10f}   (gap {abs(lhs - rhs):.2e})")

# zeroth iterate: adjoint scaled by per-pixel coding energy
x0 = init_estimate(meas.y, phi)
print(f"\ninitial estimate vs truth: {psnr(x0, scene.data):.2f} dB, "
      f"ssim {ssim(np.clip(x0, 0, 1), scene.data):.3f}")

# noise behaves like noise
noisy = encode(scene, phi, sigma=0.01, seed=5)
print(f"with sigma=0.01 readout noise: snapshot rmse "
      f"{np.sqrt(np.mean((noisy.y - meas.y) ** 2)):.4f}")
