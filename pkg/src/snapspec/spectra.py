"""Candidate filter transmission spectra: synthesis, stats, persistence.

A SpectrumBank holds N transmittance curves sampled on a shared wavelength
grid (default 300 points over 1000-2500 nm). Curves are synthesized as
sums of random Gaussian lobes, rescaled into [0.05, 0.95], and accepted
only if they are smooth (bounded adjacent-sample step) and have enough
peak-to-valley swing; rejected draws are resampled from the same stream so
results stay seed-deterministic. Correlation statistics use population
normalization (divide by the band count), which is what the greedy
selection downstream expects.
"""

from dataclasses import dataclass, field
import struct

import numpy as np

from .rng import Xoshiro256

SPECTRA_MAGIC = b"SPC1"

# resampling cap per spectrum before declaring the constraints infeasible
REJECTION_BUDGET = 1000


class RejectionBudgetError(RuntimeError):
    pass


class DegenerateSpectrumError(ValueError):
    pass


def wavelength_grid(bands=300, lo_nm=1000.0, hi_nm=2500.0):
    if bands < 2:
        raise ValueError("need at least 2 grid points")
    return np.linspace(lo_nm, hi_nm, bands)


@dataclass
class SpectrumBank:
    grid: np.ndarray            # (bands,) float64, nm, strictly increasing
    values: np.ndarray          # (count, bands) float32 in [0, 1]
    meta: dict = field(default_factory=dict)

    @property
    def count(self):
        return self.values.shape[0]

    @property
    def bands(self):
        return self.values.shape[1]


@dataclass
class CorrelationStats:
    mu: np.ndarray              # (N,) row means
    sigma: np.ndarray           # (N,) population std devs
    cov: np.ndarray             # (N, N) population covariance
    p: np.ndarray               # (N, N) Pearson matrix


def _lobe_curve(rng, grid, n_lobes_range):
    lo, hi = n_lobes_range
    n_lobes = rng.integers(lo, hi + 1)
    centers = rng.uniform(n_lobes, grid[0], grid[-1])
    widths = rng.uniform(n_lobes, 30.0, 250.0)
    amps = rng.uniform(n_lobes, 0.3, 1.0)
    d = grid[None, :] - centers[:, None]
    return (amps[:, None] * np.exp(-0.5 * (d / widths[:, None]) ** 2)).sum(axis=0)


def generate_synthetic(
    n, seed, g_max=0.08, r_min=0.3, n_lobes_range=(2, 8), bands=300, grid=None
):
    """Synthesize n validated transmittance curves, deterministically."""
    if n < 1:
        raise ValueError("need n >= 1 spectra")
    if not (0.0 < g_max <= 1.0):
        raise ValueError("g_max must lie in (0, 1]")
    if not (0.0 < r_min < 0.9):
        raise ValueError("r_min must lie in (0, 0.9)")
    if grid is None:
        grid = wavelength_grid(bands)
    root = Xoshiro256(seed)
    rows = np.empty((n, grid.size), dtype=np.float32)
    for i in range(n):
        child = root.spawn(i)
        for attempt in range(REJECTION_BUDGET):
            raw = _lobe_curve(child, grid, n_lobes_range)
            ptp = raw.max() - raw.min()
            if ptp < 1e-9:
                continue
            span = child.uniform(None, r_min, 0.9)
            base = child.uniform(None, 0.05, 0.95 - span)
            vals = (base + span * (raw - raw.min()) / ptp).astype(np.float32)
            if _row_ok(vals, g_max, r_min):
                rows[i] = vals
                break
        else:
            raise RejectionBudgetError(
                f"spectrum {i}: no candidate met g_max={g_max}, r_min={r_min} "
                f"within {REJECTION_BUDGET} draws"
            )
    meta = {
        "seed": int(seed),
        "g_max": float(g_max),
        "r_min": float(r_min),
        "n_lobes_range": tuple(n_lobes_range),
    }
    return SpectrumBank(grid=grid, values=rows, meta=meta)


def _row_ok(vals, g_max, r_min):
    if vals.min() < 0.0 or vals.max() > 1.0:
        return False
    if np.abs(np.diff(vals.astype(np.float64))).max() > g_max:
        return False
    return float(vals.max()) - float(vals.min()) >= r_min


def validate_bank(bank, g_max=0.08, r_min=0.3):
    """Re-check every invariant; raises naming the first offending row."""
    grid, vals = bank.grid, bank.values
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("wavelength grid must be 1-D strictly increasing")
    if vals.ndim != 2 or vals.shape[1] != grid.size:
        raise ValueError("spectra shape does not match grid")
    for i, row in enumerate(vals):
        if row.min() < 0.0 or row.max() > 1.0:
            raise ValueError(f"row {i}: transmittance outside [0, 1]")
        if np.abs(np.diff(row.astype(np.float64))).max() > g_max:
            raise ValueError(f"row {i}: adjacent step exceeds g_max={g_max}")
        if float(row.max()) - float(row.min()) < r_min:
            raise ValueError(f"row {i}: peak-to-valley range below r_min={r_min}")


def pearson_stats(bank_or_values):
    """Population-normalized mean/std/cov and the Pearson matrix.

    All divisions use the band count (not count-1): downstream selection
    assumes this exact normalization.
    """
    vals = bank_or_values.values if isinstance(bank_or_values, SpectrumBank) else bank_or_values
    m = np.asarray(vals, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a 2-D spectra matrix")
    n, bands = m.shape
    mu = m.mean(axis=1)
    xc = m - mu[:, None]
    sigma2 = (xc * xc).mean(axis=1)
    bad = np.nonzero(sigma2 < 1e-24)[0]
    if bad.size:
        raise DegenerateSpectrumError(f"row {int(bad[0])} has zero variance")
    sigma = np.sqrt(sigma2)
    cov = (xc @ xc.T) / bands
    p = cov / np.outer(sigma, sigma)
    return CorrelationStats(mu=mu, sigma=sigma, cov=cov, p=p)


def save_spectra(path, bank):
    grid = np.ascontiguousarray(bank.grid, dtype="<f8")
    vals = np.ascontiguousarray(bank.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(SPECTRA_MAGIC)
        fh.write(struct.pack("<II", vals.shape[0], vals.shape[1]))
        fh.write(grid.tobytes())
        fh.write(vals.tobytes())


def load_spectra(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SPECTRA_MAGIC:
        raise ValueError(f"{path}: not a spectra file (bad magic)")
    if len(blob) < 12:
        raise ValueError(f"{path}: truncated header")
    n, bands = struct.unpack("<II", blob[4:12])
    need = 12 + 8 * bands + 4 * n * bands
    if len(blob) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(blob)}")
    grid = np.frombuffer(blob, dtype="<f8", count=bands, offset=12).copy()
    vals = (
        np.frombuffer(blob, dtype="<f4", count=n * bands, offset=12 + 8 * bands)
        .reshape(n, bands)
        .copy()
    )
    if np.any(np.diff(grid) <= 0):
        raise ValueError(f"{path}: grid is not strictly increasing")
    return SpectrumBank(grid=grid, values=vals, meta={"path": str(path)})


def export_csv(path, bank):
    """One spectrum per row; header row is the wavelength grid."""
    header = ",".join(f"{w:.6f}" for w in bank.grid)
    np.savetxt(path, bank.values, fmt="%.9g", delimiter=",", header=header, comments="")
