import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nn_core.layers import AvgPool, Conv2d, Dense, ReLU
from nn_core.losses import xent_loss
from nn_core.model_zoo import ModelZoo
from nn_core.network import Network
from reparam.groups import ParameterGroup, partition_model
from reparam.init import decoder_variance, init_latents, surrogate_bound
from reparam.latents import DecoderTransform, LatentTensor, decode, quantize, ste_backward
from reparam.model import LATENT_SUFFIX, PSI_SUFFIX, ReparamModel
from utils.config import RunConfig
from utils.errors import ConfigError, NonFiniteError, ShapeMismatchError

from tests.conftest import numeric_grad, rel_err


def test_quantize_rounds_halves_away_from_zero():
    x = np.array([0.49, 0.5, 1.5, -0.5, -1.49, -2.5, 0.0])
    assert quantize(x).tolist() == [0.0, 1.0, 2.0, -1.0, -1.0, -3.0, 0.0]


def test_quantize_just_below_half_rounds_to_zero_in_float32():
    below = np.nextafter(np.float32(0.5), np.float32(0))
    x = np.array([below, -below, 0.5, -1.5], dtype=np.float32)
    out = quantize(x)
    assert out.dtype == np.float32
    assert out.tolist() == [0.0, 0.0, 1.0, -2.0]


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
def test_quantize_is_idempotent(x):
    once = quantize(x)
    np.testing.assert_array_equal(quantize(once), once)


def test_quantize_rejects_nan():
    with pytest.raises(NonFiniteError):
        quantize(np.array([1.0, np.nan]))


def test_decode_matches_worked_example():
    latent = LatentTensor("c", np.array([[1.0, -1.0], [0.4, 2.6]]), (2, 1, 1, 2))
    psi = np.array([[1.0, 0.0], [1.0, 1.0]])
    w = decode(latent, psi)
    assert w.shape == (2, 1, 1, 2)
    assert w.reshape(2, 2).tolist() == [[0.0, -1.0], [3.0, 3.0]]


def test_decode_zero_rows_give_zero_slices(rng):
    s = rng.normal(0, 3, size=(6, 9))
    s[[1, 4]] = 0.2
    latent = LatentTensor("c", s, (3, 2, 3, 3))
    w = decode(latent, rng.normal(size=(9, 9)))
    assert np.all(w[0, 1] == 0) and np.all(w[2, 0] == 0)


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_decode_is_linear_in_rounded_latents(l_side, rows, seed):
    gen = np.random.default_rng(seed)
    l = l_side * l_side
    a = gen.integers(-5, 6, size=(rows, l)).astype(np.float64)
    b = gen.integers(-5, 6, size=(rows, l)).astype(np.float64)
    psi = gen.normal(size=(l, l))
    shape = (rows, 1, l_side, l_side)
    lhs = decode(LatentTensor("x", a + b, shape), psi)
    rhs = decode(LatentTensor("a", a, shape), psi) + decode(LatentTensor("b", b, shape), psi)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_decode_of_basis_row_is_psi_row(rng):
    psi = rng.normal(size=(4, 4))
    s = np.zeros((1, 4))
    s[0, 2] = 1.0
    w = decode(LatentTensor("e", s, (1, 1, 2, 2)), psi)
    np.testing.assert_allclose(w.ravel(), psi[2])


def test_decode_rejects_wrong_decoder(rng):
    latent = LatentTensor.zeros("c", (2, 2, 3, 3))
    with pytest.raises(ShapeMismatchError):
        decode(latent, np.eye(4))
    with pytest.raises(ShapeMismatchError):
        DecoderTransform(np.ones((3, 2)))
    with pytest.raises(NonFiniteError):
        DecoderTransform(np.array([[np.inf]]))


def test_ste_backward_is_adjoint_of_linear_decode(rng):
    s = rng.integers(-3, 4, size=(6, 9)).astype(np.float64)
    latent = LatentTensor("c", s, (2, 3, 3, 3))
    psi = rng.normal(size=(9, 9))
    g = rng.normal(size=(2, 3, 3, 3))
    x = rng.normal(size=(6, 9))
    g_hat, g_psi = ste_backward(g, psi, latent)
    assert np.isclose(np.sum(g.reshape(6, 9) * (x @ psi)), np.sum(g_hat * x))
    delta = rng.normal(size=(9, 9))
    assert np.isclose(np.sum(g.reshape(6, 9) * (s @ delta)), np.sum(g_psi * delta))


def _net_7x7():
    return Network(
        [Conv2d("stem", 1, 4, 7, 1), ReLU("r"), Conv2d("c", 4, 4, 3, 1), AvgPool("p"), Dense("fc", 4, 10)],
        (1, 9, 9), 10,
    )


def test_partition_groups_by_kind_and_kernel():
    mini = partition_model(ModelZoo.build("miniconv", (1, 12, 12), width=4))
    assert [(g.name, g.l) for g in mini] == [("conv3x3", 9), ("dense", 1)]
    assert mini[0].members == ["conv1", "conv2", "conv3", "conv4"]
    assert [g.name for g in partition_model(_net_7x7())] == ["conv7x7", "conv3x3", "dense"]
    mlp = partition_model(ModelZoo.build("mlp", (1, 28, 28), width=8))
    assert [g.name for g in mlp] == ["dense"] and mlp[0].members == ["fc1", "fc2"]


def test_decoder_variance_example():
    assert decoder_variance(9, 64, 0.5) == pytest.approx(24 / (9 * 64 * 3))
    assert decoder_variance(9, 64, 0.5) == pytest.approx(0.013889, abs=1e-6)


def test_widest_layer_gets_smallest_bound():
    assert surrogate_bound(144, 144, 2.0) == pytest.approx(2.0)
    assert surrogate_bound(36, 144, 2.0) > 2.0


def test_init_rejects_small_b_min(rng):
    group = ParameterGroup("dense", "dense", 1, ["fc"], DecoderTransform.identity(1))
    with pytest.raises(ConfigError):
        init_latents(group, {"fc": 8}, {"fc": (8, 1)}, 0.5, rng)


def _decoded_variance(group, fans, shapes, b_min, trials, rng):
    values = {name: [] for name in group.members}
    for _ in range(trials):
        surrogates, psi = init_latents(group, fans, shapes, b_min, rng, np.float64)
        for name, s in surrogates.items():
            values[name].append((quantize(s) @ psi).ravel())
    return {name: float(np.mean(np.concatenate(v) ** 2)) for name, v in values.items()}


def test_decoded_weights_have_he_variance():
    # rounding U[-b, b] loses about b/(b+1) of the discrete-uniform variance,
    # so the check runs with a wide interval and fresh decoders per trial
    gen = np.random.default_rng(0)
    conv = ParameterGroup("conv3x3", "conv2d", 3, ["wide", "narrow"], DecoderTransform.identity(9))
    fans = {"wide": 144, "narrow": 36}
    shapes = {"wide": (8 * 16, 9), "narrow": (8 * 4, 9)}
    var = _decoded_variance(conv, fans, shapes, 30.0, 300, gen)
    for name, f in fans.items():
        assert var[name] == pytest.approx(2.0 / f, rel=0.1), name

    dense = ParameterGroup("dense", "dense", 1, ["fc"], DecoderTransform.identity(1))
    var = _decoded_variance(dense, {"fc": 64}, {"fc": (20, 1)}, 30.0, 5000, gen)
    assert var["fc"] == pytest.approx(2.0 / 64, rel=0.1)


def _rounded_uniform_second_moment(b):
    """E[round(u)^2] for u ~ U[-b, b], rounding halves away from zero"""
    total = 0.0
    for k in range(1, int(np.floor(b + 0.5)) + 1):
        total += k * k * (min(k + 0.5, b) - (k - 0.5))
    return total / b


def test_decoded_variance_at_default_b_min_matches_rounded_uniform():
    # at b_min = 2 rounding keeps 3/4 of the He variance for the widest layer
    gen = np.random.default_rng(2)
    b_min = RunConfig().b_min
    conv = ParameterGroup("conv3x3", "conv2d", 3, ["wide", "narrow"], DecoderTransform.identity(9))
    fans = {"wide": 144, "narrow": 36}
    shapes = {"wide": (8 * 16, 9), "narrow": (8 * 4, 9)}
    var = _decoded_variance(conv, fans, shapes, b_min, 300, gen)
    v = decoder_variance(9, 144, b_min)
    for name, f in fans.items():
        expected = 9 * v * _rounded_uniform_second_moment(surrogate_bound(f, 144, b_min))
        assert var[name] == pytest.approx(expected, rel=0.1), name
    assert var["wide"] / (2.0 / 144) == pytest.approx(0.75, rel=0.1)


def test_rounding_shrinks_variance_at_small_bounds():
    gen = np.random.default_rng(1)
    r = quantize(gen.uniform(-1.0, 1.0, 200_000))
    assert np.var(r) == pytest.approx(0.5, abs=0.01)
    assert np.var(r) < 1 * (1 + 1) / 3


def test_initialize_decodes_into_network(rng):
    net = ModelZoo.build("miniconv", (1, 12, 12), width=4)
    model = ReparamModel.initialize(net, 2.0, rng)
    for name, latent in model.latents.items():
        group = model.group_of(name)
        np.testing.assert_array_equal(net.layer(name).params["weight"], decode(latent, group.decoder))
    assert model.group_surrogates(model.groups[0]).shape[1] == 9
    keys = set(model.trainable())
    assert "conv1" + LATENT_SUFFIX in keys and "conv3x3" + PSI_SUFFIX in keys and "bn1.gamma" in keys
    assert "conv1.weight" not in keys


def test_decoder_gradient_matches_finite_differences():
    gen = np.random.default_rng(4)
    net = Network([Conv2d("c1", 1, 2, 3, 1), ReLU("r"), Conv2d("c2", 2, 3, 3, 2), AvgPool("p"), Dense("fc", 3, 4)],
                  (1, 6, 6), 4).astype(np.float64)
    model = ReparamModel.initialize(net, 2.0, gen)
    x = gen.normal(size=(3, 1, 6, 6))
    y = np.array([0, 3, 1])

    def loss():
        model.decode_into()
        return xent_loss(net.forward(x, train=True)[0], y)[0]

    model.decode_into()
    logits, cache = net.forward(x, train=True)
    g_w = net.backward(xent_loss(logits, y)[1], cache)
    grads = model.backprop(g_w)
    for group in model.groups:
        num = numeric_grad(loss, group.decoder.psi)
        assert rel_err(grads[group.name + PSI_SUFFIX], num) < 1e-5, group.name
    # surrogate gradient is the straight-through one
    for name, latent in model.latents.items():
        expected, _ = ste_backward(g_w[f"{name}.weight"], model.group_of(name).decoder, latent)
        np.testing.assert_allclose(grads[name + LATENT_SUFFIX], expected, atol=1e-12)
