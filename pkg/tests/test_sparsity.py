import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reparam.latents import LatentTensor
from sparsity.penalties import (
    SparsityConfig,
    compute_loss,
    group_penalty,
    penalty_terms,
    slice_sparsity,
    unstructured_penalty,
    unstructured_sparsity,
)

from tests.conftest import numeric_grad, rel_err

W = np.array([[3.0, 4.0]])


def test_unstructured_examples():
    assert unstructured_penalty(W, SparsityConfig(lambda_u=0.1))[0] == pytest.approx(2.5)
    assert unstructured_penalty(W, SparsityConfig(lambda_u=0.1, unstructured_norm="l1"))[0] == pytest.approx(0.7)


def test_group_examples():
    assert group_penalty(W, 2, SparsityConfig(lambda_s=1.0))[0] == pytest.approx(7.0711, abs=1e-4)
    assert group_penalty(W, 2, SparsityConfig(lambda_s=1.0, group_norm="linf"))[0] == pytest.approx(5.6569, abs=1e-4)


def test_combined_loss_example():
    latent = LatentTensor("c", np.array([[0.0, 0.0], [3.0, 4.0]]), (2, 1, 1, 2))
    total, grads = compute_loss([latent], SparsityConfig(lambda_u=0.1, lambda_s=0.01))
    assert total == pytest.approx(2.570711, abs=1e-6)
    np.testing.assert_array_equal(grads["c"][0], [0.0, 0.0])


def test_zero_row_has_zero_subgradient():
    _, grad = group_penalty(np.zeros((2, 3)), 3, SparsityConfig(lambda_s=1.0))
    assert np.all(grad == 0)
    _, grad = group_penalty(np.zeros((2, 3)), 3, SparsityConfig(lambda_s=1.0, group_norm="linf"))
    assert np.all(grad == 0)


def test_linf_ties_split_gradient():
    _, grad = group_penalty(np.array([[2.0, -2.0, 1.0]]), 1, SparsityConfig(lambda_s=1.0, group_norm="linf"))
    np.testing.assert_allclose(grad, [[0.5, -0.5, 0.0]])


@pytest.mark.parametrize("unorm,gnorm", [("l2", "l2"), ("l1", "l2"), ("l2", "linf")])
def test_gradients_match_finite_differences(unorm, gnorm):
    gen = np.random.default_rng(2)
    s = gen.normal(size=(5, 4))
    latent = LatentTensor("c", s, (5, 1, 2, 2))
    cfg = SparsityConfig(lambda_u=0.3, lambda_s=0.7, unstructured_norm=unorm, group_norm=gnorm)
    _, grads = compute_loss([latent], cfg)
    num = numeric_grad(lambda: compute_loss([latent], cfg)[0], s)
    assert rel_err(grads["c"], num) < 1e-6


@settings(max_examples=50)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2 ** 31 - 1))
def test_penalties_are_scale_covariant(c, seed):
    w = np.random.default_rng(seed).normal(size=(4, 3))
    cfg = SparsityConfig(lambda_u=1.0, lambda_s=1.0)
    assert unstructured_penalty(c * w, cfg)[0] == pytest.approx(c * c * unstructured_penalty(w, cfg)[0], rel=1e-9)
    assert group_penalty(c * w, 3, cfg)[0] == pytest.approx(abs(c) * group_penalty(w, 3, cfg)[0], rel=1e-9)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["l2", "linf"]))
def test_group_penalty_ignores_row_order(seed, gnorm):
    gen = np.random.default_rng(seed)
    w = gen.normal(size=(6, 4))
    cfg = SparsityConfig(lambda_s=0.5, group_norm=gnorm)
    assert group_penalty(w[gen.permutation(6)], 4, cfg)[0] == pytest.approx(group_penalty(w, 4, cfg)[0])


def test_rho_rules():
    assert SparsityConfig().rho(9) == 9.0
    assert SparsityConfig(rho_rule="unit").rho(9) == 1.0


@pytest.mark.parametrize("kwargs", [
    {"lambda_u": -1.0}, {"lambda_s": float("nan")}, {"unstructured_norm": "l3"},
    {"group_norm": "l1"}, {"rho_rule": "sqrt"},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SparsityConfig(**kwargs).validate()


def test_zero_lambdas_give_no_gradients():
    latent = LatentTensor("c", np.ones((2, 2)), (2, 1, 1, 2))
    assert compute_loss([latent], SparsityConfig()) == (0.0, {})


def test_penalty_terms_split_totals():
    latent = LatentTensor("c", np.array([[0.0, 0.0], [3.0, 4.0]]), (2, 1, 1, 2))
    u, s = penalty_terms([latent], SparsityConfig(lambda_u=0.1, lambda_s=0.01))
    assert u == pytest.approx(2.5)
    assert s == pytest.approx(0.070711, abs=1e-6)


def test_sparsity_fractions():
    a = LatentTensor("a", np.array([[0.2, -0.4], [1.0, 0.0]]), (2, 1, 1, 2))
    b = LatentTensor("b", np.array([[0.0, 0.3], [0.0, 0.0]]), (2, 1, 1, 2))
    assert unstructured_sparsity([a, b]) == pytest.approx(7 / 8)
    assert slice_sparsity([a, b]) == pytest.approx(3 / 4)
    assert slice_sparsity([]) == 0.0
