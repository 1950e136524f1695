"""K-stage unrolled ISTA solver for mosaic-coded snapshot measurements.

Each stage takes a gradient step on the data-fidelity term

    r = x - rho * adjoint(encode(x) - y)

and then applies a proximal operator: either classical soft thresholding
(sparse prior, fixed step size) or the learned denoiser from prior_net with
one learnable step size per stage. Training unrolls the whole solver and
backpropagates a mean-squared reconstruction error through every stage.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .forward_model import _cube_data, _meas_data, adjoint, build_mosaic, coding_energy, encode, init_estimate
from .optim import Adam
from .rng import Xoshiro256
from .tensor import Tensor

PROX_KINDS = ("classical_soft_threshold", "erra")


@dataclass
class UnfoldingConfig:
    stages: int
    rho_init: float = None  # None = 1 / max pixel coding energy (classical mode)
    share_params: bool = True
    prox_kind: str = "classical_soft_threshold"
    reg_weight: float = 1e-3

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        if self.rho_init is not None and not self.rho_init > 0:
            raise ValueError(f"rho_init must be > 0, got {self.rho_init}")
        if self.prox_kind not in PROX_KINDS:
            raise ValueError(f"prox_kind must be one of {PROX_KINDS}, got {self.prox_kind!r}")
        if self.reg_weight < 0:
            raise ValueError(f"reg_weight must be >= 0, got {self.reg_weight}")


@dataclass
class UnfoldingResult:
    estimate: np.ndarray  # (H, W, bands)
    fidelity: list = field(default_factory=list)  # 0.5*||encode(x_k)-y||^2 per stage


@dataclass
class ReconObjective:
    fidelity: float
    reg_weight: float
    sparsity: float

    @property
    def total(self):
        return self.fidelity + self.reg_weight * self.sparsity


def gradient_step(x, y, phi, rho):
    """One fidelity gradient step: x - rho * adjoint(encode(x) - y)."""
    xd = _cube_data(x)
    if not math.isfinite(rho):
        raise ValueError(f"rho must be finite, got {rho}")
    resid = encode(xd, phi).y - _meas_data(y)
    return xd - rho * adjoint(resid, phi)


def prox_soft_threshold(r, t):
    """Elementwise sign(r) * max(|r| - t, 0)."""
    if t < 0:
        raise ValueError(f"threshold must be >= 0, got {t}")
    r = np.asarray(r)
    return np.sign(r) * np.maximum(np.abs(r) - t, 0.0)


def measure_objective(x, y, phi, reg_weight=0.0):
    xd = _cube_data(x).astype(np.float64)
    resid = encode(xd, phi).y - _meas_data(y).astype(np.float64)
    fidelity = 0.5 * float((resid * resid).sum())
    sparsity = float(np.abs(xd).sum())
    return ReconObjective(fidelity=fidelity, reg_weight=float(reg_weight), sparsity=sparsity)


def _channel_first(cube, dtype):
    return np.ascontiguousarray(np.moveaxis(np.asarray(cube), 2, 0)).astype(dtype, copy=False)


def _stage_fidelity(x_cf, mosaic_cf, y):
    resid = (x_cf.astype(np.float64) * mosaic_cf.astype(np.float64)).sum(axis=0) - y.astype(np.float64)
    return 0.5 * float((resid * resid).sum())


def _unfold_tensor(y, phi, model, x0):
    """Differentiable unrolled solve; returns (estimate tensor, fidelity list).

    Everything runs channel-first: x is (bands, H, W), the mosaic is a
    constant of the same layout, and encode/adjoint become a broadcasted
    multiply plus a band sum.
    """
    dtype = model.step_raw[0].data.dtype
    mosaic_cf = Tensor(_channel_first(phi.mosaic, dtype))
    y_arr = _meas_data(y)
    y_t = Tensor(y_arr.astype(dtype, copy=False))
    x = Tensor(_channel_first(x0, dtype))
    fidelity = []
    for k in range(model.stages):
        rho = model.step_size(k)
        pred = T.tsum(T.mul(x, mosaic_cf), axis=0)
        back = T.mul(mosaic_cf, T.add(pred, T.neg(y_t)))
        r = T.add(x, T.neg(T.mul(back, rho)))
        x = model.stage_network(k)(r)
        if not np.all(np.isfinite(x.data)):
            raise FloatingPointError(f"non-finite estimate at stage {k + 1}")
        fidelity.append(_stage_fidelity(x.data, mosaic_cf.data, y_arr))
    return x, fidelity


def run_unfolding(y, phi, config, model=None, x0=None):
    """Reconstruct a cube from one snapshot. Returns UnfoldingResult."""
    yd = _meas_data(y)
    if yd.shape != phi.mosaic.shape[:2]:
        raise ValueError(f"measurement {yd.shape} does not match mosaic {phi.mosaic.shape[:2]}")
    x0d = init_estimate(yd, phi) if x0 is None else _cube_data(x0)

    if config.prox_kind == "erra":
        if model is None:
            raise ValueError("erra prox requires a trained model")
        if model.stages != config.stages:
            raise ValueError(f"config has {config.stages} stages but model has {model.stages}")
        if model.bands != phi.mosaic.shape[2]:
            raise ValueError(f"model expects {model.bands} bands, mosaic has {phi.mosaic.shape[2]}")
        with T.no_grad():
            xt, fidelity = _unfold_tensor(yd, phi, model, x0d)
        return UnfoldingResult(estimate=np.moveaxis(xt.data, 0, 2).copy(), fidelity=fidelity)

    rho = config.rho_init
    if rho is None:
        rho = 1.0 / float(coding_energy(phi).max())
    threshold = rho * config.reg_weight
    x = x0d.astype(np.float64)
    fidelity = []
    for k in range(config.stages):
        r = gradient_step(x, yd, phi, rho)
        x = prox_soft_threshold(r, threshold)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite estimate at stage {k + 1}")
        resid = encode(x, phi).y - yd
        with np.errstate(over="ignore"):  # a diverging run reports inf
            fidelity.append(0.5 * float((resid * resid).sum()))
    return UnfoldingResult(estimate=x, fidelity=fidelity)


def _augment_sample(cube, phi, rng, crop):
    """Seeded crop / right-angle rotation / flips; re-encodes afterwards.

    Crop offsets snap to the mosaic period so the cropped scene sees the
    same filter tiling; rotation only applies to square crops (it swaps the
    spatial axes).
    """
    x = np.asarray(cube)
    h, w, _ = x.shape
    s = phi.s
    phi_use = phi
    if crop is not None:
        ch, cw = (crop, crop) if np.isscalar(crop) else crop
        for size, limit in ((ch, h), (cw, w)):
            if size % 4 != 0 or size % s != 0:
                raise ValueError(f"crop size {size} must be divisible by 4 and by s={s}")
            if size > limit:
                raise ValueError(f"crop size {size} exceeds scene dim {limit}")
        oi = s * rng.integers(0, (h - ch) // s + 1)
        oj = s * rng.integers(0, (w - cw) // s + 1)
        x = x[oi:oi + ch, oj:oj + cw]
        if (ch, cw) != (h, w):
            phi_use = build_mosaic(phi.theta, ch, cw, s)
    if x.shape[0] == x.shape[1]:
        x = np.rot90(x, rng.integers(0, 4), axes=(0, 1))
    if rng.uniform() < 0.5:
        x = np.flip(x, axis=0)
    if rng.uniform() < 0.5:
        x = np.flip(x, axis=1)
    x = np.ascontiguousarray(x)
    return x, phi_use, encode(x, phi_use, 0.0).y


def train(
    model,
    dataset,
    phi,
    epochs,
    lr=2e-4,
    batch=1,
    seed=0,
    augment=True,
    crop=None,
    loss_csv=None,
):
    """Fit the unrolled solver to (cube, measurement) pairs.

    Augmented samples are re-encoded through the mosaic, so the measurement
    always matches the (possibly cropped/rotated/flipped) target cube.
    Batching accumulates gradients over `batch` samples before each
    optimizer step. Returns the per-epoch mean training loss; optionally
    writes it as CSV.
    """
    pairs = [( _cube_data(x), _meas_data(y)) for x, y in dataset]
    if not pairs:
        raise ValueError("dataset is empty")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    dtype = model.step_raw[0].data.dtype
    opt = Adam(model.parameters(), lr=lr)
    root = Xoshiro256(seed)
    losses = []
    for epoch in range(epochs):
        # child 0 of a seed is taken by model init; epochs start at child 1
        # so model and trainer can share one root seed without stream reuse
        erng = root.spawn(epoch + 1)
        order = erng.permutation(len(pairs))
        total = 0.0
        pending = 0
        for pos, idx in enumerate(order):
            x_np, y_np = pairs[idx]
            if augment:
                srng = erng.spawn(pos + 1)
                x_np, phi_use, y_np = _augment_sample(x_np, phi, srng, crop)
            else:
                phi_use = phi
            x0 = init_estimate(y_np, phi_use)
            xhat, _ = _unfold_tensor(y_np, phi_use, model, x0)
            target = Tensor(_channel_first(x_np, dtype))
            diff = T.add(xhat, T.neg(target))
            loss = T.tmean(T.mul(diff, diff))
            value = float(loss.data)
            if not math.isfinite(value):
                raise RuntimeError(
                    f"training diverged: loss={value} at epoch {epoch + 1}, sample {idx}"
                )
            total += value
            if batch > 1:
                loss = T.mul(loss, 1.0 / batch)
            loss.backward()
            pending += 1
            if pending == batch or pos == len(order) - 1:
                opt.step()
                opt.zero_grad()
                pending = 0
        losses.append(total / len(pairs))
    if loss_csv is not None:
        lines = ["epoch,loss"]
        lines += [f"{i + 1},{v:.9g}" for i, v in enumerate(losses)]
        with open(loss_csv, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return losses
