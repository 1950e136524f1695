"""Learned proximal operator for the unrolled reconstruction.

A three-level U-shaped denoiser built from channel-attention blocks:

* ``SpatialSpectralAttention`` — band-to-band self-attention (the attention
  map is channels x channels, so its cost is independent of image size) plus
  a 3x3 convolutional spatial branch.
* ``LowRankAttention`` — gates each channel by mixing a small bank of learned
  query vectors; the bank is a single shared object across every unrolled
  stage, so each stage's gradient accumulates into the same array.
* ``FeatureBridge`` — combines both encoder scales into attention-weighted
  skip features instead of plain skip connections.

Output projections start at zero so an untrained network is an exact
identity map; the unrolled solver then begins as plain gradient descent.
"""

import math

import numpy as np

from . import tensor as T
from .modules import Conv2d, ConvTranspose2d, LayerNorm, Linear, Module, Parameter, _uniform_init
from .rng import Xoshiro256
from .tensor import DEFAULT_DTYPE


def _inv_softplus(value):
    # exact inverse of log(1+e^x); value must be > 0
    if value <= 0:
        raise ValueError(f"softplus-parameterized value must be positive, got {value}")
    return math.log(math.expm1(value))


class SpatialSpectralAttention(Module):
    """Channel self-attention with a parallel 3x3 conv + GELU spatial branch.

    Query/key/value are 1x1 conv embeddings flattened over space; the
    attention map softmax((K Q) / alpha) is CxC with rows summing to one.
    alpha is a learned positive temperature (softplus reparameterized).
    """

    def __init__(self, channels, rng, alpha_init=None, zero_init=True, dtype=DEFAULT_DTYPE):
        self.channels = channels
        self.to_query = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.to_key = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.to_value = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.out_proj = Conv2d(channels, channels, 1, rng, zero_init=zero_init, dtype=dtype)
        self.spatial = Conv2d(channels, channels, 3, rng, padding=1, zero_init=zero_init, dtype=dtype)
        if alpha_init is None:
            alpha_init = math.sqrt(channels)
        self.alpha_raw = Parameter(np.asarray(_inv_softplus(alpha_init), dtype=dtype))

    def attention_map(self, x):
        c = self.channels
        hw = x.shape[1] * x.shape[2]
        q = T.reshape(self.to_query(x), (c, hw))
        k = T.reshape(self.to_key(x), (c, hw))
        scores = T.matmul(k, T.transpose2d(q))
        alpha = T.softplus(self.alpha_raw)
        return T.softmax(T.mul(scores, T.reciprocal(alpha)), axis=-1)

    def forward(self, x):
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise ValueError(f"expected ({self.channels}, H, W) feature, got {x.shape}")
        c = self.channels
        h, w = x.shape[1], x.shape[2]
        attn = self.attention_map(x)
        v = T.reshape(self.to_value(x), (c, h * w))
        # rows of V^T are pixels; mix channels with the attention map
        mixed = T.transpose2d(T.matmul(T.transpose2d(v), attn))
        spectral = self.out_proj(T.reshape(mixed, (c, h, w)))
        spatial = T.gelu(self.spatial(x))
        return T.add(spectral, spatial)

    __call__ = forward


class LowRankAttention(Module):
    """Rescales channels using attention over a shared learned query bank.

    The pooled feature is squeezed to C/r dims, matched against the m bank
    rows (scaled dot product, softmax over the bank), and the mixed bank
    vector is expanded back to a per-channel gate: out = x * gate.
    """

    def __init__(self, channels, rng, bank, rank_ratio=4, zero_init=True, dtype=DEFAULT_DTYPE):
        if channels % rank_ratio != 0:
            raise ValueError(f"rank_ratio {rank_ratio} must divide channels {channels}")
        reduced = channels // rank_ratio
        if bank.shape[1] != reduced:
            raise ValueError(f"bank is {bank.shape}, expected (m, {reduced})")
        self.channels = channels
        self.reduced = reduced
        self.scale = 1.0 / math.sqrt(reduced)
        self.squeeze = Linear(channels, reduced, rng, dtype=dtype)
        self.bank = bank
        self.expand = Linear(reduced, channels, rng, zero_init=zero_init, dtype=dtype)

    def bank_weights(self, x):
        pooled = T.reshape(T.global_avgpool(x), (1, self.channels))
        key = self.squeeze(pooled)
        scores = T.mul(T.matmul(key, T.transpose2d(self.bank)), self.scale)
        return T.softmax(scores, axis=-1)

    def forward(self, x):
        weights = self.bank_weights(x)
        mixed = T.matmul(weights, self.bank)
        gate = self.expand(mixed)
        return T.mul(x, T.reshape(gate, (self.channels, 1, 1)))

    __call__ = forward


def make_query_bank(channels, rng, rank_ratio=4, bank_size=8, dtype=DEFAULT_DTYPE):
    if channels % rank_ratio != 0:
        raise ValueError(f"rank_ratio {rank_ratio} must divide channels {channels}")
    reduced = channels // rank_ratio
    return Parameter(_uniform_init(rng, (bank_size, reduced), reduced, dtype))


class FeedForward(Module):
    """1x1 conv -> GELU -> 1x1 conv, expansion factor 2."""

    def __init__(self, channels, rng, expansion=2, zero_init=True, dtype=DEFAULT_DTYPE):
        wide = expansion * channels
        self.widen = Conv2d(channels, wide, 1, rng, dtype=dtype)
        self.narrow = Conv2d(wide, channels, 1, rng, zero_init=zero_init, dtype=dtype)

    def forward(self, x):
        return self.narrow(T.gelu(self.widen(x)))

    __call__ = forward


class FusionBlock(Module):
    """Merges concatenated features: 1x1 conv -> GELU -> 1x1 conv."""

    def __init__(self, cin, cout, rng, dtype=DEFAULT_DTYPE):
        self.reduce = Conv2d(cin, cout, 1, rng, dtype=dtype)
        self.refine = Conv2d(cout, cout, 1, rng, dtype=dtype)

    def forward(self, x):
        return self.refine(T.gelu(self.reduce(x)))

    __call__ = forward


class PriorBlock(Module):
    """Residual attention block: norm -> parallel attention branches -> norm -> FFN.

    x1 = x + spectral(LN(x)) [+ lowrank(LN(x))]; out = x1 + FFN(LN(x1)).
    One normalization feeds both attention branches. Decoder blocks drop the
    low-rank branch (use_lowrank=False).
    """

    def __init__(
        self,
        channels,
        rng,
        bank=None,
        rank_ratio=4,
        bank_size=8,
        use_lowrank=True,
        zero_init=True,
        dtype=DEFAULT_DTYPE,
    ):
        self.norm_attn = LayerNorm(channels, dtype=dtype)
        self.spectral = SpatialSpectralAttention(channels, rng, zero_init=zero_init, dtype=dtype)
        if use_lowrank:
            if bank is None:
                bank = make_query_bank(channels, rng, rank_ratio, bank_size, dtype)
            self.lowrank = LowRankAttention(
                channels, rng, bank, rank_ratio=rank_ratio, zero_init=zero_init, dtype=dtype
            )
        else:
            self.lowrank = None
        self.norm_ffn = LayerNorm(channels, dtype=dtype)
        self.ffn = FeedForward(channels, rng, zero_init=zero_init, dtype=dtype)

    def forward(self, x):
        normed = self.norm_attn(x)
        branches = T.add(x, self.spectral(normed))
        if self.lowrank is not None:
            branches = T.add(branches, self.lowrank(normed))
        return T.add(branches, self.ffn(self.norm_ffn(branches)))

    __call__ = forward


class Downsample(Module):
    """2x2 max pool then 3x3 conv doubling the channel count."""

    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        self.conv = Conv2d(channels, 2 * channels, 3, rng, padding=1, dtype=dtype)

    def forward(self, x):
        return self.conv(T.maxpool2d(x, 2))

    __call__ = forward


class FeatureBridge(Module):
    """Attention-weighted skip connections between the two encoder scales.

    Both encoder features are reduced to (C/2, H/2, W/2); their product
    highlights content present at both scales and their sum keeps what is
    exclusive to either. A 5x5 depthwise conv over the concatenated pair
    (followed by a 1x1 projection back to C/2 so the map matches the reduced
    features) yields the attention map that reweights each reduced feature
    before it is restored to its original scale and fused with the raw
    encoder output.
    """

    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        c = channels
        if c % 2 != 0:
            raise ValueError(f"bridge channels must be even, got {c}")
        # 2x2 stride-2 kernel halves even spatial dims exactly
        self.reduce1 = Conv2d(c, c // 2, 2, rng, stride=2, dtype=dtype)
        self.reduce2 = Conv2d(2 * c, c // 2, 3, rng, padding=1, dtype=dtype)
        self.mix_depth = Conv2d(c, c, 5, rng, padding=2, groups=c, dtype=dtype)
        self.mix_point = Conv2d(c, c // 2, 1, rng, dtype=dtype)
        self.restore1 = Conv2d(c // 2, c, 3, rng, padding=1, dtype=dtype)
        self.restore1_up = ConvTranspose2d(c, c, 3, rng, stride=2, padding=1, output_padding=1, dtype=dtype)
        self.restore2 = Conv2d(c // 2, 2 * c, 3, rng, padding=1, dtype=dtype)
        self.fusion1 = FusionBlock(2 * c, c, rng, dtype=dtype)
        self.fusion2 = FusionBlock(4 * c, 2 * c, rng, dtype=dtype)

    def _attention_parts(self, e1, e2):
        r1 = self.reduce1(e1)
        r2 = self.reduce2(e2)
        shared = T.mul(r1, r2)
        exclusive = T.add(r1, r2)
        attn = self.mix_point(self.mix_depth(T.concat([shared, exclusive], axis=0)))
        return r1, r2, shared, exclusive, attn

    def forward(self, e1, e2):
        if e1.shape[1] != 2 * e2.shape[1] or e1.shape[2] != 2 * e2.shape[2]:
            raise ValueError(f"scale mismatch: e1 {e1.shape} vs e2 {e2.shape}")
        if 2 * e1.shape[0] != e2.shape[0]:
            raise ValueError(f"channel mismatch: e1 {e1.shape} vs e2 {e2.shape}")
        r1, r2, _, _, attn = self._attention_parts(e1, e2)
        back1 = self.restore1_up(self.restore1(T.mul(attn, r1)))
        back2 = self.restore2(T.mul(attn, r2))
        out1 = self.fusion1(T.concat([e1, back1], axis=0))
        out2 = self.fusion2(T.concat([e2, back2], axis=0))
        return out1, out2

    __call__ = forward


class ProximalUNet(Module):
    """Three-level U-shaped denoiser acting on a (bands, H, W) residual cube.

    Encoder blocks and the bottleneck carry the low-rank branch (three query
    banks, one per level); decoder blocks are spectral-attention only. The
    final 3x3 projection starts at zero, so the whole network is an identity
    map until trained.
    """

    def __init__(
        self,
        bands,
        rng,
        base_channels=32,
        rank_ratio=4,
        bank_size=8,
        banks=None,
        zero_init=True,
        dtype=DEFAULT_DTYPE,
    ):
        if base_channels % rank_ratio != 0:
            raise ValueError(f"rank_ratio {rank_ratio} must divide base_channels {base_channels}")
        c = base_channels
        self.bands = bands
        self.base_channels = c
        if banks is None:
            banks = [
                make_query_bank(mult * c, rng, rank_ratio, bank_size, dtype) for mult in (1, 2, 4)
            ]
        self.query_banks = list(banks)
        self.in_proj = Conv2d(bands, c, 3, rng, padding=1, dtype=dtype)
        self.enc1 = PriorBlock(
            c, rng, bank=self.query_banks[0], rank_ratio=rank_ratio, zero_init=zero_init, dtype=dtype
        )
        self.down1 = Downsample(c, rng, dtype=dtype)
        self.enc2 = PriorBlock(
            2 * c, rng, bank=self.query_banks[1], rank_ratio=rank_ratio, zero_init=zero_init, dtype=dtype
        )
        self.down2 = Downsample(2 * c, rng, dtype=dtype)
        self.mid = PriorBlock(
            4 * c, rng, bank=self.query_banks[2], rank_ratio=rank_ratio, zero_init=zero_init, dtype=dtype
        )
        self.bridge = FeatureBridge(c, rng, dtype=dtype)
        self.up2 = ConvTranspose2d(4 * c, 2 * c, 3, rng, stride=2, padding=1, output_padding=1, dtype=dtype)
        self.fuse2 = FusionBlock(4 * c, 2 * c, rng, dtype=dtype)
        self.dec2 = PriorBlock(2 * c, rng, use_lowrank=False, zero_init=zero_init, dtype=dtype)
        self.up1 = ConvTranspose2d(2 * c, c, 3, rng, stride=2, padding=1, output_padding=1, dtype=dtype)
        self.fuse1 = FusionBlock(2 * c, c, rng, dtype=dtype)
        self.dec1 = PriorBlock(c, rng, use_lowrank=False, zero_init=zero_init, dtype=dtype)
        self.out_proj = Conv2d(c, bands, 3, rng, padding=1, zero_init=zero_init, dtype=dtype)

    def forward(self, r_cube):
        if r_cube.ndim != 3 or r_cube.shape[0] != self.bands:
            raise ValueError(f"expected ({self.bands}, H, W) cube, got {r_cube.shape}")
        if r_cube.shape[1] % 4 != 0 or r_cube.shape[2] % 4 != 0:
            raise ValueError(f"spatial dims must be divisible by 4, got {r_cube.shape}")
        e1 = self.enc1(self.in_proj(r_cube))
        e2 = self.enc2(self.down1(e1))
        mid = self.mid(self.down2(e2))
        skip1, skip2 = self.bridge(e1, e2)
        d2 = self.dec2(self.fuse2(T.concat([self.up2(mid), skip2], axis=0)))
        d1 = self.dec1(self.fuse1(T.concat([self.up1(d2), skip1], axis=0)))
        return T.add(r_cube, self.out_proj(d1))

    __call__ = forward


class ReconstructionModel(Module):
    """Holds everything the unrolled solver learns.

    One softplus-parameterized step size per stage (always per-stage, even
    when the denoiser weights are shared). share_params=True keeps a single
    denoiser used by every stage; False builds an independent copy per stage,
    but the three query banks stay shared objects across all copies.
    """

    def __init__(
        self,
        bands,
        stages,
        base_channels=32,
        rank_ratio=4,
        bank_size=8,
        share_params=True,
        rho_init=1.0,
        zero_init=True,
        seed=0,
        dtype=DEFAULT_DTYPE,
    ):
        if stages < 1:
            raise ValueError(f"need at least one stage, got {stages}")
        rng = Xoshiro256(seed).spawn(0)
        self.bands = bands
        self.stages = stages
        self.base_channels = base_channels
        self.rank_ratio = rank_ratio
        self.bank_size = bank_size
        self.share_params = bool(share_params)
        raw = _inv_softplus(rho_init)
        self.step_raw = [Parameter(np.asarray(raw, dtype=dtype)) for _ in range(stages)]
        self.query_banks = [
            make_query_bank(mult * base_channels, rng, rank_ratio, bank_size, dtype)
            for mult in (1, 2, 4)
        ]
        copies = 1 if self.share_params else stages
        self.nets = [
            ProximalUNet(
                bands,
                rng,
                base_channels=base_channels,
                rank_ratio=rank_ratio,
                bank_size=bank_size,
                banks=self.query_banks,
                zero_init=zero_init,
                dtype=dtype,
            )
            for _ in range(copies)
        ]

    def step_size(self, stage):
        return T.softplus(self.step_raw[stage])

    def stage_network(self, stage):
        if not 0 <= stage < self.stages:
            raise IndexError(f"stage {stage} out of range for {self.stages}-stage model")
        return self.nets[0] if self.share_params else self.nets[stage]


def model_from_arrays(arrays, dtype=DEFAULT_DTYPE):
    """Rebuild a ReconstructionModel sized to match a saved state dict.

    Every structural hyperparameter is recoverable from array names and
    shapes, so a checkpoint alone is enough to reconstruct the solver.
    """
    try:
        in_proj = arrays["nets.0.in_proj.weight"]
        bank = arrays["query_banks.0"]
    except KeyError as exc:
        raise ValueError(f"state dict is missing {exc.args[0]}") from None
    stages = sum(1 for name in arrays if name.startswith("step_raw."))
    if stages < 1:
        raise ValueError("state dict holds no step sizes")
    shared = not any(name.startswith("nets.1.") for name in arrays)
    base_channels, bands = int(in_proj.shape[0]), int(in_proj.shape[1])
    bank_size, reduced = (int(d) for d in bank.shape)
    model = ReconstructionModel(
        bands=bands,
        stages=stages,
        base_channels=base_channels,
        rank_ratio=base_channels // reduced,
        bank_size=bank_size,
        share_params=shared,
        dtype=dtype,
    )
    model.load_state_dict(arrays)
    return model
