"""Mosaic spectral coding: the camera forward model and its adjoint.

A FilterArray tiles k = s*s chosen filter spectra periodically over the
sensor, giving a per-pixel coding vector. A snapshot measurement is the
spectral inner product of scene and coding at each pixel plus optional
Gaussian sensor noise. The adjoint spreads a 2-D measurement back along
the spectral axis; init_estimate additionally normalizes by the per-pixel
coding energy, which is the starting cube for iterative reconstruction.

Public arrays are (H, W, bands) with the spectral axis last; files store
float32 in exactly that (band-fastest) order.
"""

from dataclasses import dataclass, field
import struct

import numpy as np

from .rng import Xoshiro256

CUBE_MAGIC = b"HSC1"
MEAS_MAGIC = b"MSR1"


@dataclass
class HyperCube:
    data: np.ndarray            # (H, W, bands) float32 in [0, 1]
    grid: np.ndarray            # (bands,) float64 nm

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != self.grid.size:
            raise ValueError("cube shape does not match grid")
        if d.shape[0] % 4 or d.shape[1] % 4:
            raise ValueError("cube H and W must be divisible by 4")
        if not np.isfinite(d).all():
            raise ValueError("cube contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("cube values must lie in [0, 1]")


@dataclass
class FilterArray:
    theta: np.ndarray           # (s*s, bands) basis spectra
    s: int                      # mosaic period
    mosaic: np.ndarray          # (H, W, bands) tiled coding tensor


@dataclass
class Measurement:
    y: np.ndarray               # (H, W)
    noise_sigma: float = 0.0
    seed: int = 0


def _cube_data(x):
    return x.data if isinstance(x, HyperCube) else np.asarray(x)


def _meas_data(y):
    return y.y if isinstance(y, Measurement) else np.asarray(y)


def build_mosaic(selection_or_theta, height, width, s):
    """Tile s*s spectra so pixel (h, w) carries row (h mod s)*s + (w mod s)."""
    theta = getattr(selection_or_theta, "theta", selection_or_theta)
    theta = np.asarray(theta)
    if theta.ndim != 2 or theta.shape[0] != s * s:
        raise ValueError(f"need s*s = {s * s} spectra, got shape {theta.shape}")
    if height % s or width % s:
        raise ValueError(f"H={height}, W={width} not divisible by period s={s}")
    rows = (np.arange(height)[:, None] % s) * s + (np.arange(width)[None, :] % s)
    mosaic = theta[rows]  # (H, W, bands)
    return FilterArray(theta=theta.copy(), s=s, mosaic=mosaic)


def encode(x, phi, sigma=0.0, seed=0):
    """y[h,w] = sum_b mosaic[h,w,b] * x[h,w,b] + Gaussian(0, sigma^2) noise.

    Accumulation runs in float64; the result keeps the wider of the input
    dtypes so 64-bit callers get 64-bit measurements.
    """
    data = _cube_data(x)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if data.shape != phi.mosaic.shape:
        raise ValueError(f"cube {data.shape} vs mosaic {phi.mosaic.shape}")
    if isinstance(x, HyperCube) and phi.theta.shape[1] != x.grid.size:
        raise ValueError("cube and filter array disagree on band count")
    acc = (phi.mosaic.astype(np.float64) * data.astype(np.float64)).sum(axis=2)
    if sigma > 0.0:
        acc = acc + sigma * Xoshiro256(seed).normal(acc.shape)
    out_dtype = np.result_type(data.dtype, phi.mosaic.dtype)
    return Measurement(y=acc.astype(out_dtype), noise_sigma=float(sigma), seed=int(seed))


def adjoint(y, phi):
    """out[h,w,b] = mosaic[h,w,b] * y[h,w]."""
    ym = _meas_data(y)
    if ym.shape != phi.mosaic.shape[:2]:
        raise ValueError(f"measurement {ym.shape} vs mosaic {phi.mosaic.shape[:2]}")
    return phi.mosaic * ym[:, :, None]


def coding_energy(phi):
    """Per-pixel spectral energy of the coding, sum_b mosaic^2."""
    m = phi.mosaic.astype(np.float64)
    return (m * m).sum(axis=2)


def init_estimate(y, phi, eps=1e-8):
    """Energy-normalized adjoint: the standard zeroth iterate."""
    ym = _meas_data(y)
    if ym.shape != phi.mosaic.shape[:2]:
        raise ValueError(f"measurement {ym.shape} vs mosaic {phi.mosaic.shape[:2]}")
    energy = np.maximum(coding_energy(phi), eps)
    scaled = (ym.astype(np.float64) / energy).astype(phi.mosaic.dtype)
    return phi.mosaic * scaled[:, :, None]


# ---- file formats ----


def save_cube(path, cube):
    data = np.ascontiguousarray(cube.data, dtype="<f4")
    h, w, bands = data.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<III", h, w, bands))
        fh.write(data.tobytes())


def load_cube(path, grid=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CUBE_MAGIC:
        raise ValueError(f"{path}: not a cube file (bad magic)")
    h, w, bands = struct.unpack("<III", blob[4:16])
    need = 16 + 4 * h * w * bands
    if len(blob) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, bands).copy()
    if grid is None:
        grid = np.linspace(1000.0, 2500.0, bands)
    return HyperCube(data=data, grid=np.asarray(grid, dtype=np.float64))


def save_measurement(path, meas):
    y = np.ascontiguousarray(meas.y, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MEAS_MAGIC)
        fh.write(struct.pack("<II", y.shape[0], y.shape[1]))
        fh.write(y.tobytes())
        fh.write(struct.pack("<f", meas.noise_sigma))
        fh.write(struct.pack("<Q", meas.seed))


def load_measurement(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MEAS_MAGIC:
        raise ValueError(f"{path}: not a measurement file (bad magic)")
    h, w = struct.unpack("<II", blob[4:12])
    need = 12 + 4 * h * w + 4 + 8
    if len(blob) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(blob)}")
    y = np.frombuffer(blob, dtype="<f4", count=h * w, offset=12).reshape(h, w).copy()
    (sigma,) = struct.unpack("<f", blob[12 + 4 * h * w : 16 + 4 * h * w])
    (seed,) = struct.unpack("<Q", blob[16 + 4 * h * w :])
    return Measurement(y=y, noise_sigma=float(sigma), seed=int(seed))
