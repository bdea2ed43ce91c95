import numpy as np
import pytest

import mh2fnet as m


def micro_config(**overrides):
    kwargs = dict(num_mheb=2, base_channels=8, dcr_units_per_stream=1, dcr_growth=4, seed=3)
    kwargs.update(overrides)
    return m.ModelConfig(**kwargs)


def random_batch(rng, n=1, h=16, w=16):
    return rng.random((n, 3, h, w)).astype(np.float32)


def test_version():
    assert m.__version__


def test_forward_shape_and_range():
    net = m.Network(micro_config())
    x = random_batch(np.random.default_rng(0), n=2, h=32, w=32)
    y = net.forward(x)
    assert y.shape == (2, 3, 32, 32)
    assert y.min() >= 0.0 and y.max() <= 1.0


def test_forward_is_deterministic_per_seed():
    x = random_batch(np.random.default_rng(1))
    a = m.Network(micro_config()).forward(x)
    b = m.Network(micro_config()).forward(x)
    assert np.array_equal(a, b)
    c = m.Network(micro_config(seed=4)).forward(x)
    assert not np.array_equal(a, c)


def test_forward_validates_input():
    net = m.Network(micro_config())
    with pytest.raises(ValueError):
        net.forward(np.full((1, 3, 10, 10), 0.5, np.float32))  # not divisible by 4
    with pytest.raises(ValueError):
        net.forward(np.full((1, 3, 16, 16), 1.5, np.float32))  # out of range


def test_derain_handles_odd_sizes():
    net = m.Network(micro_config())
    img = np.random.default_rng(2).random((37, 41, 3)).astype(np.float32)
    out = net.derain(img)
    assert out.shape == (37, 41, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_network_save_load_round_trip(tmp_path):
    net = m.Network(micro_config())
    path = str(tmp_path / "model.ckpt")
    net.save(path)
    loaded = m.Network.load(path)
    x = random_batch(np.random.default_rng(3))
    assert np.array_equal(net.forward(x), loaded.forward(x))


def test_param_count_monotone_in_depth():
    counts = [m.param_count(micro_config(num_mheb=n)) for n in (2, 4, 6, 8)]
    assert counts == sorted(counts)
    assert len(set(counts)) == len(counts)


def test_psnr_closed_forms():
    a = np.random.default_rng(4).random((1, 3, 8, 8))
    assert m.psnr(a, a) == 100.0
    gt = np.full((1, 3, 8, 8), 0.2)
    assert m.psnr(gt + 0.1, gt) == pytest.approx(20.0, abs=1e-9)


def test_ssim_and_hybrid_identities():
    rng = np.random.default_rng(5)
    a = rng.random((1, 3, 32, 32))
    b = rng.random((1, 3, 32, 32))
    assert m.ssim_index(a, a) == pytest.approx(1.0, abs=1e-9)
    assert m.ssim_index(a, b) == m.ssim_index(b, a)
    h = m.hybrid_loss(a, b)
    assert h["total"] == pytest.approx(h["l1"] + 0.2 * h["ssim_loss"], abs=1e-9)
    assert m.l1_loss(a, a) == 0.0


def test_rain_synthesis():
    k = m.make_streak_kernel(0.0, 5)
    assert k.shape == (5, 5)
    assert k.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(k[:, 2], 0.2)

    zero = m.synth_rain_layer(32, 32, density=0.0, seed=7)
    assert not zero.any()

    a = m.synth_rain_layer(32, 32, density=0.05, seed=8)
    b = m.synth_rain_layer(32, 32, density=0.05, seed=8)
    assert np.array_equal(a, b)

    clean = np.random.default_rng(6).random((1, 3, 32, 32)).astype(np.float32) * 0.5
    rainy, rain = m.apply_rain(clean, density=0.05, seed=9)
    assert rainy.shape == clean.shape
    assert rain.shape == (32, 32)
    assert (rainy >= clean - 1e-7).all()


def test_gradient_check_passes_for_the_dense_block():
    rep = m.gradient_check("dcr")
    assert rep["pass"]
    assert rep["max_rel_err"] < 1e-3
    assert len(rep["rows"]) == 9

    with pytest.raises(ValueError):
        m.gradient_check("not-a-block")
