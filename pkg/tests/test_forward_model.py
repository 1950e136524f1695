import numpy as np
import pytest

from snapspec.forward_model import (
    FilterArray,
    HyperCube,
    Measurement,
    adjoint,
    build_mosaic,
    coding_energy,
    encode,
    init_estimate,
    load_cube,
    load_measurement,
    save_cube,
    save_measurement,
)
from snapspec.rng import Xoshiro256
from snapspec.scenes import generate_scenes
from snapspec.spectra import wavelength_grid


def random_phi(seed, s, height, width, bands):
    theta = Xoshiro256(seed).uniform((s * s, bands), 0.05, 0.95)
    return build_mosaic(theta, height, width, s)


def encode_loops(x, mosaic):
    """Naive triple-loop reference for the noiseless measurement."""
    h, w, bands = x.shape
    y = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            for b in range(bands):
                y[i, j] += mosaic[i, j, b] * x[i, j, b]
    return y


def test_mosaic_layout_and_periodicity():
    theta = np.arange(9 * 4, dtype=np.float64).reshape(9, 4) / 100.0
    phi = build_mosaic(theta, 6, 6, 3)
    for h in range(6):
        for w in range(6):
            row = (h % 3) * 3 + (w % 3)
            assert np.array_equal(phi.mosaic[h, w], theta[row])
    assert np.array_equal(phi.mosaic[0], phi.mosaic[3])
    assert np.array_equal(phi.mosaic[:, 0], phi.mosaic[:, 3])
    # each spectrum claims exactly (6/3)^2 = 4 pixels
    flat = phi.mosaic.reshape(-1, 4)
    for row in theta:
        assert (flat == row).all(axis=1).sum() == 4


def test_mosaic_s1_is_constant():
    theta = np.full((1, 5), 0.3)
    phi = build_mosaic(theta, 4, 4, 1)
    assert np.allclose(phi.mosaic, 0.3)


def test_mosaic_validates():
    theta = np.ones((9, 4))
    with pytest.raises(ValueError):
        build_mosaic(theta, 6, 6, 4)  # 16 != 9
    with pytest.raises(ValueError):
        build_mosaic(theta, 7, 6, 3)  # 7 % 3 != 0


def test_encode_trivial_cases():
    bands = 6
    phi = build_mosaic(np.ones((4, bands)), 4, 4, 2)
    ones = np.ones((4, 4, bands))
    m = encode(ones, phi, sigma=0.0)
    assert np.allclose(m.y, bands, atol=1e-12)
    zero = np.zeros((4, 4, bands))
    m0 = encode(zero, phi, sigma=0.5, seed=9)
    expect_noise = 0.5 * Xoshiro256(9).normal((4, 4))
    assert np.allclose(m0.y, expect_noise.astype(m0.y.dtype), atol=1e-7)


def test_encode_matches_triple_loops():
    rng = Xoshiro256(1)
    x = rng.uniform((12, 12, 8), 0, 1)
    phi = random_phi(2, 3, 12, 12, 8)
    got = encode(x, phi, sigma=0.0).y
    assert np.allclose(got, encode_loops(x, phi.mosaic), atol=1e-6)


def test_encode_linearity():
    rng = Xoshiro256(3)
    x1 = rng.uniform((8, 8, 5))
    x2 = rng.uniform((8, 8, 5))
    phi = random_phi(4, 2, 8, 8, 5)
    lhs = encode(0.7 * x1 + 1.3 * x2, phi).y
    rhs = 0.7 * encode(x1, phi).y + 1.3 * encode(x2, phi).y
    assert np.allclose(lhs, rhs, atol=1e-6)


def test_noise_is_seed_deterministic():
    x = np.zeros((8, 8, 5))
    phi = random_phi(5, 2, 8, 8, 5)
    a = encode(x, phi, sigma=0.1, seed=42).y
    b = encode(x, phi, sigma=0.1, seed=42).y
    c = encode(x, phi, sigma=0.1, seed=43).y
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_adjoint_identity_64bit():
    for seed in range(25):
        rng = Xoshiro256(seed)
        x = rng.uniform((8, 8, 6))
        y = rng.normal((8, 8))
        phi = random_phi(1000 + seed, 2, 8, 8, 6)
        lhs = float((encode(x, phi).y * y).sum())
        rhs = float((x * adjoint(y, phi)).sum())
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_adjoint_trivia():
    phi = random_phi(7, 2, 8, 8, 5)
    assert np.allclose(adjoint(np.zeros((8, 8)), phi), 0.0)
    phi1 = build_mosaic(np.ones((4, 5)), 8, 8, 2)
    y = Xoshiro256(8).uniform((8, 8))
    out = adjoint(y, phi1)
    for b in range(5):
        assert np.allclose(out[:, :, b], y, atol=1e-7)


def test_init_estimate_inverts_single_band_coding():
    # one nonzero band per pixel: init recovers x exactly at that band
    bands = 4
    theta = np.zeros((4, bands), dtype=np.float64)
    for i in range(4):
        theta[i, i % bands] = 0.8
    phi = build_mosaic(theta, 4, 4, 2)
    x = Xoshiro256(11).uniform((4, 4, bands), 0.1, 0.9)
    y = encode(x, phi).y
    x0 = init_estimate(y, phi)
    mask = phi.mosaic > 0
    assert np.allclose(x0[mask], x[mask], atol=1e-10)
    assert np.allclose(init_estimate(np.zeros((4, 4)), phi), 0.0)


def test_coding_energy_matches_direct():
    phi = random_phi(13, 3, 6, 6, 7)
    direct = (phi.mosaic.astype(np.float64) ** 2).sum(axis=2)
    assert np.allclose(coding_energy(phi), direct, atol=1e-12)


def test_cube_file_round_trip(tmp_path):
    scene = generate_scenes(1, 8, 12, 5, seed=3)[0]
    path = tmp_path / "cube.hsc"
    save_cube(path, scene)
    back = load_cube(path, grid=scene.grid)
    assert np.array_equal(back.data, scene.data)
    bad = tmp_path / "bad.hsc"
    bad.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_cube(bad)


def test_measurement_file_round_trip(tmp_path):
    phi = random_phi(2, 2, 8, 8, 5)
    x = Xoshiro256(1).uniform((8, 8, 5)).astype(np.float32)
    m = encode(x, phi, sigma=0.05, seed=77)
    path = tmp_path / "m.msr"
    save_measurement(path, m)
    back = load_measurement(path)
    assert np.array_equal(back.y, m.y.astype(np.float32))
    assert back.seed == 77
    assert abs(back.noise_sigma - 0.05) < 1e-8
    (tmp_path / "t.msr").write_bytes(path.read_bytes()[:-2])
    with pytest.raises(ValueError):
        load_measurement(tmp_path / "t.msr")


def test_cube_type_validates():
    grid = wavelength_grid(5)
    with pytest.raises(ValueError):
        HyperCube(data=np.zeros((7, 8, 5), dtype=np.float32), grid=grid)
    with pytest.raises(ValueError):
        HyperCube(data=np.full((8, 8, 5), 1.5, dtype=np.float32), grid=grid)
    bad = np.zeros((8, 8, 5), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        HyperCube(data=bad, grid=grid)


def test_scene_generator_properties():
    scenes = generate_scenes(3, 16, 16, 8, seed=5)
    again = generate_scenes(3, 16, 16, 8, seed=5)
    for a, b in zip(scenes, again):
        assert np.array_equal(a.data, b.data)
    for sc in scenes:
        assert sc.data.shape == (16, 16, 8)
        assert sc.data.min() >= 0.0 and abs(sc.data.max() - 0.9) < 1e-5
        # spatial smoothness: neighbor deltas well below the dynamic range
        d = np.abs(np.diff(sc.data, axis=0)).mean()
        assert d < 0.05
