import numpy as np
import pytest

from snapspec import tensor as T
from snapspec.checkpoint import load_checkpoint, save_checkpoint
from snapspec.gradcheck import grad_check
from snapspec.prior_net import (
    FeatureBridge,
    FeedForward,
    FusionBlock,
    LowRankAttention,
    PriorBlock,
    ProximalUNet,
    ReconstructionModel,
    SpatialSpectralAttention,
    make_query_bank,
)
from snapspec.rng import Xoshiro256
from snapspec.tensor import Tensor


def _rand_feature(shape, seed, dtype=np.float64):
    return Tensor(Xoshiro256(seed).uniform(shape, -1.0, 1.0).astype(dtype))


# ---------------- spatial-spectral attention ----------------


def test_attention_map_shape_independent_of_image_size():
    rng = Xoshiro256(1).spawn(0)
    attn = SpatialSpectralAttention(6, rng, zero_init=False, dtype=np.float64)
    for h, w in [(4, 4), (8, 12), (16, 4)]:
        a = attn.attention_map(_rand_feature((6, h, w), seed=h * 100 + w))
        assert a.shape == (6, 6)


def test_attention_rows_sum_to_one():
    rng = Xoshiro256(2).spawn(0)
    attn = SpatialSpectralAttention(5, rng, zero_init=False, dtype=np.float64)
    a = attn.attention_map(_rand_feature((5, 6, 6), seed=3))
    assert np.abs(a.data.sum(axis=-1) - 1.0).max() < 1e-6


def test_doubling_alpha_flattens_attention():
    rng = Xoshiro256(3).spawn(0)
    attn = SpatialSpectralAttention(8, rng, zero_init=False, dtype=np.float64)
    x = _rand_feature((8, 8, 8), seed=4)

    def max_row_entropy():
        a = attn.attention_map(x).data
        return (-(a * np.log(a + 1e-300)).sum(axis=-1)).max()

    before = max_row_entropy()
    alpha = np.log1p(np.exp(attn.alpha_raw.data))
    attn.alpha_raw.data = np.log(np.expm1(2.0 * alpha))
    after = max_row_entropy()
    assert after > before


def test_attention_output_shape_and_wrong_channels():
    rng = Xoshiro256(4).spawn(0)
    attn = SpatialSpectralAttention(4, rng, zero_init=False, dtype=np.float64)
    out = attn(_rand_feature((4, 6, 10), seed=5))
    assert out.shape == (4, 6, 10)
    with pytest.raises(ValueError):
        attn(_rand_feature((5, 6, 10), seed=6))


def test_zero_init_attention_outputs_zero():
    rng = Xoshiro256(5).spawn(0)
    attn = SpatialSpectralAttention(4, rng, zero_init=True, dtype=np.float64)
    out = attn(_rand_feature((4, 4, 4), seed=7))
    assert np.all(out.data == 0.0)


# ---------------- low-rank channel attention ----------------


def test_bank_weights_normalized():
    rng = Xoshiro256(6).spawn(0)
    bank = make_query_bank(8, rng, rank_ratio=4, bank_size=5, dtype=np.float64)
    gate = LowRankAttention(8, rng, bank, rank_ratio=4, zero_init=False, dtype=np.float64)
    w = gate.bank_weights(_rand_feature((8, 6, 6), seed=8)).data
    assert w.shape == (1, 5)
    assert (w >= 0).all()
    assert abs(w.sum() - 1.0) < 1e-6


def test_single_query_bank_weight_is_exactly_one():
    rng = Xoshiro256(7).spawn(0)
    bank = make_query_bank(8, rng, rank_ratio=4, bank_size=1, dtype=np.float64)
    gate = LowRankAttention(8, rng, bank, rank_ratio=4, zero_init=False, dtype=np.float64)
    w = gate.bank_weights(_rand_feature((8, 4, 4), seed=9)).data
    assert w.shape == (1, 1)
    assert w[0, 0] == 1.0


def test_constant_input_stays_spatially_constant():
    rng = Xoshiro256(8).spawn(0)
    bank = make_query_bank(4, rng, rank_ratio=4, bank_size=3, dtype=np.float64)
    gate = LowRankAttention(4, rng, bank, rank_ratio=4, zero_init=False, dtype=np.float64)
    levels = np.array([0.3, -1.2, 0.0, 2.5])
    x = Tensor(np.broadcast_to(levels[:, None, None], (4, 6, 6)).copy())
    out = gate(x).data
    for c in range(4):
        assert np.ptp(out[c]) == 0.0


def test_rank_ratio_must_divide_channels():
    rng = Xoshiro256(9).spawn(0)
    bank = make_query_bank(8, rng, rank_ratio=4, bank_size=3, dtype=np.float64)
    with pytest.raises(ValueError):
        LowRankAttention(6, rng, bank, rank_ratio=4, dtype=np.float64)
    with pytest.raises(ValueError):
        make_query_bank(6, rng, rank_ratio=4, bank_size=3)


def test_zero_init_gate_outputs_zero():
    rng = Xoshiro256(10).spawn(0)
    bank = make_query_bank(4, rng, rank_ratio=4, bank_size=3, dtype=np.float64)
    gate = LowRankAttention(4, rng, bank, rank_ratio=4, zero_init=True, dtype=np.float64)
    out = gate(_rand_feature((4, 4, 4), seed=11))
    assert np.all(out.data == 0.0)


# ---------------- block building pieces ----------------


def test_feedforward_and_fusion_shapes():
    rng = Xoshiro256(11).spawn(0)
    ffn = FeedForward(6, rng, zero_init=False, dtype=np.float64)
    assert ffn(_rand_feature((6, 4, 4), seed=12)).shape == (6, 4, 4)
    fuse = FusionBlock(10, 4, rng, dtype=np.float64)
    assert fuse(_rand_feature((10, 4, 4), seed=13)).shape == (4, 4, 4)


def test_prior_block_preserves_shape_and_identity_at_init():
    rng = Xoshiro256(12).spawn(0)
    block = PriorBlock(4, rng, rank_ratio=4, zero_init=True, dtype=np.float64)
    x = _rand_feature((4, 8, 8), seed=14)
    out = block(x)
    assert out.shape == x.shape
    assert np.array_equal(out.data, x.data)


def test_prior_block_gradient_check():
    rng = Xoshiro256(13).spawn(0)
    block = PriorBlock(4, rng, rank_ratio=4, zero_init=False, dtype=np.float64)
    x = _rand_feature((4, 8, 8), seed=15)
    x.requires_grad = True
    w = Xoshiro256(999).normal((4, 8, 8))

    def f():
        return T.tsum(T.mul(block(x), Tensor(w)))

    rel = grad_check(f, block.parameters() + [x], epsilon=1e-6)
    assert rel < 1e-4


def test_decoder_block_has_no_lowrank_branch():
    rng = Xoshiro256(14).spawn(0)
    block = PriorBlock(4, rng, use_lowrank=False, zero_init=False, dtype=np.float64)
    assert block.lowrank is None
    names = [n for n, _ in block.named_parameters()]
    assert not any("bank" in n for n in names)


# ---------------- encoder-decoder feature bridge ----------------


def test_bridge_output_shapes():
    rng = Xoshiro256(15).spawn(0)
    bridge = FeatureBridge(4, rng, dtype=np.float64)
    e1 = _rand_feature((4, 8, 8), seed=16)
    e2 = _rand_feature((8, 4, 4), seed=17)
    out1, out2 = bridge(e1, e2)
    assert out1.shape == (4, 8, 8)
    assert out2.shape == (8, 4, 4)


def test_bridge_zero_inputs_give_zero_products_and_sums():
    # fresh convs have zero biases, so zero features stay zero everywhere
    rng = Xoshiro256(16).spawn(0)
    bridge = FeatureBridge(4, rng, dtype=np.float64)
    e1 = Tensor(np.zeros((4, 8, 8)))
    e2 = Tensor(np.zeros((8, 4, 4)))
    _, _, shared, exclusive, attn = bridge._attention_parts(e1, e2)
    assert np.all(shared.data == 0.0)
    assert np.all(exclusive.data == 0.0)
    assert np.all(attn.data == 0.0)
    out1, out2 = bridge(e1, e2)
    assert np.all(out1.data == 0.0)
    assert np.all(out2.data == 0.0)


def test_bridge_gradient_reaches_both_inputs():
    rng = Xoshiro256(17).spawn(0)
    bridge = FeatureBridge(4, rng, dtype=np.float64)
    e1 = _rand_feature((4, 8, 8), seed=18)
    e2 = _rand_feature((8, 4, 4), seed=19)
    e1.requires_grad = True
    e2.requires_grad = True
    w = Xoshiro256(998).normal((4, 8, 8))

    def f():
        out1, _ = bridge(e1, e2)
        return T.tsum(T.mul(out1, Tensor(w)))

    rel = grad_check(f, [e1, e2], epsilon=1e-6)
    assert rel < 1e-4
    f().backward()
    assert np.abs(e1.grad).max() > 0
    assert np.abs(e2.grad).max() > 0


def test_bridge_rejects_mismatched_scales():
    rng = Xoshiro256(18).spawn(0)
    bridge = FeatureBridge(4, rng, dtype=np.float64)
    with pytest.raises(ValueError):
        bridge(_rand_feature((4, 8, 8), seed=20), _rand_feature((8, 8, 8), seed=21))
    with pytest.raises(ValueError):
        bridge(_rand_feature((4, 8, 8), seed=22), _rand_feature((4, 4, 4), seed=23))


# ---------------- full denoiser ----------------


def test_unet_shape_preserved_and_identity_at_init():
    rng = Xoshiro256(19).spawn(0)
    net = ProximalUNet(8, rng, base_channels=8, dtype=np.float64)
    x = _rand_feature((8, 12, 8), seed=24)
    out = net(x)
    assert out.shape == (8, 12, 8)
    assert np.array_equal(out.data, x.data)


def test_unet_rejects_bad_spatial_dims():
    rng = Xoshiro256(20).spawn(0)
    net = ProximalUNet(4, rng, base_channels=4, dtype=np.float64)
    with pytest.raises(ValueError):
        net(_rand_feature((4, 6, 8), seed=25))
    with pytest.raises(ValueError):
        net(_rand_feature((3, 8, 8), seed=26))


def test_unet_sampled_gradient_check():
    rng = Xoshiro256(21).spawn(0)
    net = ProximalUNet(4, rng, base_channels=4, zero_init=False, dtype=np.float64)
    x = _rand_feature((4, 8, 8), seed=27)
    w = Xoshiro256(997).normal((4, 8, 8))

    def f():
        return T.tsum(T.mul(net(x), Tensor(w)))

    # finite differences through the full depth bottom out near 1.6e-4
    # (truncation/roundoff V-curve); the network-level contract is 1e-3
    rel = grad_check(f, net.parameters(), epsilon=1e-6, sample=40, seed=5)
    assert rel < 1e-3


def _conv_count(cin, cout, k, groups=1):
    return cout * (cin // groups) * k * k + cout


def _linear_count(cin, cout):
    return cin * cout + cout


def _attention_count(c):
    return 4 * _conv_count(c, c, 1) + _conv_count(c, c, 3) + 1


def _gate_count(c, r):
    return _linear_count(c, c // r) + _linear_count(c // r, c)


def _ffn_count(c):
    return _conv_count(c, 2 * c, 1) + _conv_count(2 * c, c, 1)


def _block_count(c, r, lowrank):
    n = 4 * c + _attention_count(c) + _ffn_count(c)
    if lowrank:
        n += _gate_count(c, r)
    return n


def _fusion_count(cin, cout):
    return _conv_count(cin, cout, 1) + _conv_count(cout, cout, 1)


def _bridge_count(c):
    n = _conv_count(c, c // 2, 2)
    n += _conv_count(2 * c, c // 2, 3)
    n += _conv_count(c, c, 5, groups=c)
    n += _conv_count(c, c // 2, 1)
    n += _conv_count(c // 2, c, 3) + _conv_count(c, c, 3)  # restore1 + its upsample
    n += _conv_count(c // 2, 2 * c, 3)
    n += _fusion_count(2 * c, c) + _fusion_count(4 * c, 2 * c)
    return n


def _unet_count(bands, c, r, m, with_banks=True):
    n = _conv_count(bands, c, 3)
    n += _block_count(c, r, True) + _conv_count(c, 2 * c, 3)
    n += _block_count(2 * c, r, True) + _conv_count(2 * c, 4 * c, 3)
    n += _block_count(4 * c, r, True)
    n += _bridge_count(c)
    n += _conv_count(4 * c, 2 * c, 3) + _fusion_count(4 * c, 2 * c) + _block_count(2 * c, r, False)
    n += _conv_count(2 * c, c, 3) + _fusion_count(2 * c, c) + _block_count(c, r, False)
    n += _conv_count(c, bands, 3)
    if with_banks:
        n += m * (c // r) + m * (2 * c // r) + m * (4 * c // r)
    return n


@pytest.mark.parametrize("bands,c,r,m", [(4, 4, 4, 8), (8, 8, 4, 8), (6, 8, 2, 5)])
def test_parameter_count_matches_layer_formulas(bands, c, r, m):
    rng = Xoshiro256(22).spawn(0)
    net = ProximalUNet(bands, rng, base_channels=c, rank_ratio=r, bank_size=m, dtype=np.float64)
    assert sum(p.size for p in net.parameters()) == _unet_count(bands, c, r, m)


@pytest.mark.parametrize("share", [True, False])
def test_model_parameter_count(share):
    stages = 3
    m = ReconstructionModel(4, stages, base_channels=4, share_params=share, seed=1)
    net_only = _unet_count(4, 4, 4, 8, with_banks=False)
    banks = 8 * (4 // 4) + 8 * (8 // 4) + 8 * (16 // 4)
    copies = 1 if share else stages
    expected = stages + banks + copies * net_only
    assert sum(p.size for p in m.parameters()) == expected


# ---------------- model-level behavior ----------------


def test_step_sizes_start_at_rho_init_and_stay_per_stage():
    m = ReconstructionModel(4, 3, base_channels=4, rho_init=1.0, seed=2)
    for k in range(3):
        assert abs(m.step_size(k).item() - 1.0) < 1e-6
    assert len(m.step_raw) == 3
    assert m.step_raw[0] is not m.step_raw[1]
    with pytest.raises(IndexError):
        m.stage_network(3)


def test_shared_model_uses_one_network():
    m = ReconstructionModel(4, 4, base_channels=4, share_params=True, seed=3)
    assert m.stage_network(0) is m.stage_network(3)
    m2 = ReconstructionModel(4, 4, base_channels=4, share_params=False, seed=3)
    assert m2.stage_network(0) is not m2.stage_network(3)


def test_query_banks_shared_across_unshared_stages():
    m = ReconstructionModel(4, 3, base_channels=4, share_params=False, seed=4)
    for k in range(1, 3):
        for a, b in zip(m.stage_network(0).query_banks, m.stage_network(k).query_banks):
            assert a is b
    # and the model reports each bank exactly once
    names = [n for n, p in m.named_parameters() if p in m.query_banks]
    assert sorted(names) == ["query_banks.0", "query_banks.1", "query_banks.2"]


def test_bank_gradient_sums_over_stages():
    # replace the banks seen by one stage with equal-valued copies; the
    # shared-bank gradient must equal the sum of the two per-stage parts
    def build():
        return ReconstructionModel(
            4, 2, base_channels=4, share_params=False, zero_init=False, seed=5, dtype=np.float64
        )

    x = Tensor(Xoshiro256(30).uniform((4, 8, 8), 0.0, 1.0))
    w = Xoshiro256(31).normal((4, 8, 8))

    def loss_through_both_stages(model):
        h = x
        for k in range(2):
            h = model.stage_network(k)(h)
        return T.tsum(T.mul(h, Tensor(w)))

    def detach_banks(model, stage):
        from snapspec.modules import Parameter

        net = model.stage_network(stage)
        for blk, copy in zip(
            (net.enc1, net.enc2, net.mid),
            [Parameter(b.data.copy()) for b in net.query_banks],
        ):
            blk.lowrank.bank = copy
        net.query_banks = [blk.lowrank.bank for blk in (net.enc1, net.enc2, net.mid)]

    shared = build()
    loss_through_both_stages(shared).backward()
    total = [b.grad.copy() for b in shared.query_banks]

    only_stage0 = build()
    detach_banks(only_stage0, 1)
    loss_through_both_stages(only_stage0).backward()
    part0 = [b.grad.copy() for b in only_stage0.query_banks]

    only_stage1 = build()
    detach_banks(only_stage1, 0)
    loss_through_both_stages(only_stage1).backward()
    part1 = [b.grad.copy() for b in only_stage1.query_banks]

    for t, a, b in zip(total, part0, part1):
        assert np.abs(t - (a + b)).max() < 1e-10
        assert np.abs(a).max() > 0
        assert np.abs(b).max() > 0


def test_state_dict_round_trips_through_checkpoint(tmp_path):
    m = ReconstructionModel(4, 2, base_channels=4, zero_init=False, seed=6)
    path = tmp_path / "model.erp"
    save_checkpoint(path, m.state_dict())
    m2 = ReconstructionModel(4, 2, base_channels=4, zero_init=True, seed=7)
    m2.load_state_dict(load_checkpoint(path))
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), m2.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)
