"""Denoiser CNN tests."""

import numpy as np
import pytest

from adamri import autodiff, conditioning, denoiser
from adamri.errors import ContractError


def make_film(c, dtype=np.float32, scales=None):
    lam = autodiff.Tensor(np.asarray(1.0, dtype=dtype))
    film = conditioning.identity_film(c, lam, dtype=dtype)
    if scales is not None:
        film.scales.data[...] = scales
    return film


def wake_output_layer(cnn, seed=0, scale=0.3):
    # the output conv starts at zero (identity residual block); several tests
    # need the network to actually produce something
    w, _ = cnn.convs[-1]
    rng = np.random.default_rng(seed)
    w.data[...] = (scale * rng.standard_normal(w.data.shape)).astype(w.data.dtype)


def test_param_counts():
    assert denoiser.count_cnn_params(64) == 113154
    assert denoiser.count_cnn_params(8) == 2050
    cnn = denoiser.init_cnn(8, seed=0)
    assert sum(t.data.size for t in cnn.tensors().values()) == 2050


def test_zero_weights_is_identity():
    cnn = denoiser.init_cnn(6, seed=1)
    for w, b in cnn.convs:
        w.data[...] = 0.0
        b.data[...] = 0.0
    rng = np.random.default_rng(0)
    x = autodiff.Tensor(rng.standard_normal((1, 2, 10, 10)).astype(np.float32))
    out = denoiser.denoise(x, cnn, make_film(6))
    assert np.array_equal(out.data, x.data)


def test_fresh_init_is_identity():
    # the output layer initializes to zero, so an untrained block passes the
    # image through untouched no matter what the hidden layers hold
    cnn = denoiser.init_cnn(6, seed=11)
    rng = np.random.default_rng(5)
    x = autodiff.Tensor(rng.standard_normal((1, 2, 9, 13)).astype(np.float32))
    out = denoiser.denoise(x, cnn, make_film(6))
    assert np.array_equal(out.data, x.data)
    assert np.any(cnn.convs[1][0].data != 0)  # hidden layers are not zero


def test_unit_scales_change_nothing():
    # modulation by exactly ones must be bit-identical to no modulation
    rng = np.random.default_rng(1)
    cnn = denoiser.init_cnn(4, seed=2)
    wake_output_layer(cnn, seed=2)
    x = autodiff.Tensor(rng.standard_normal((1, 2, 8, 8)).astype(np.float32))
    a = denoiser.denoise(x, cnn, make_film(4)).data

    film2 = make_film(4)
    film2.scales.data[...] = 1.0
    b = denoiser.denoise(x, cnn, film2).data
    assert np.array_equal(a, b)


def test_scales_actually_modulate():
    rng = np.random.default_rng(2)
    cnn = denoiser.init_cnn(4, seed=3)
    wake_output_layer(cnn, seed=3)
    x = autodiff.Tensor(rng.standard_normal((1, 2, 8, 8)).astype(np.float32))
    a = denoiser.denoise(x, cnn, make_film(4)).data
    b = denoiser.denoise(x, cnn, make_film(4, scales=0.5)).data
    assert not np.array_equal(a, b)


def test_output_shape_preserved():
    cnn = denoiser.init_cnn(4, seed=4)
    for h, w in ((8, 8), (12, 20), (9, 7)):
        x = autodiff.Tensor(np.zeros((1, 2, h, w), dtype=np.float32))
        assert denoiser.denoise(x, cnn, make_film(4)).data.shape == (1, 2, h, w)


def test_receptive_field_locality():
    # five 3x3 layers: an impulse cannot influence pixels more than 5 away
    cnn = denoiser.init_cnn(4, seed=5, dtype=np.float64)
    wake_output_layer(cnn, seed=5)
    film = make_film(4, dtype=np.float64)
    base = np.zeros((1, 2, 17, 17))
    a = denoiser.denoise(autodiff.Tensor(base), cnn, film).data
    bumped = base.copy()
    bumped[0, 0, 8, 8] = 1.0
    b = denoiser.denoise(autodiff.Tensor(bumped), cnn, film).data
    diff = np.abs(a - b).max(axis=(0, 1))
    yy, xx = np.nonzero(diff > 1e-14)
    assert np.abs(yy - 8).max() <= 5 and np.abs(xx - 8).max() <= 5


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    cnn = denoiser.init_cnn(3, seed=6, dtype=np.float64)
    wake_output_layer(cnn, seed=6)
    lam = autodiff.Tensor(np.asarray(1.0, dtype=np.float64))
    scales = autodiff.Tensor(rng.uniform(0.5, 1.5, 12), requires_grad=True)
    film = conditioning.FilmParams(scales=scales, lam=lam, num_channels=3)
    x = autodiff.Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
    c = rng.standard_normal((1, 2, 6, 6))

    def build():
        return autodiff.tsum(denoiser.denoise(x, cnn, film) * autodiff.Tensor(c))

    loss = build()
    autodiff.backward(loss)

    eps = 1e-6
    checked = [("x", x), ("scales", scales), ("w0", cnn.convs[0][0]), ("b2", cnn.convs[2][1])]
    for name, t in checked:
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        step = max(1, flat.size // 6)
        for i in range(0, flat.size, step):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(build().data)
            flat[i] = orig - eps
            lo = float(build().data)
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            assert abs(gflat[i] - fd) < 1e-6, f"{name}[{i}]: {gflat[i]} vs {fd}"


def test_width_mismatch_rejected():
    cnn = denoiser.init_cnn(4, seed=7)
    x = autodiff.Tensor(np.zeros((1, 2, 8, 8), dtype=np.float32))
    with pytest.raises(ContractError):
        denoiser.denoise(x, cnn, make_film(8))


def test_return_activations():
    cnn = denoiser.init_cnn(4, seed=8)
    x = autodiff.Tensor(np.zeros((1, 2, 8, 8), dtype=np.float32))
    out, acts = denoiser.denoise(x, cnn, make_film(4), return_activations=True)
    assert len(acts) == denoiser.NUM_CONV_LAYERS
    assert acts[0].data.shape == (1, 4, 8, 8)
    assert acts[-1].data.shape == (1, 2, 8, 8)
