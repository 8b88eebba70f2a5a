import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nn_core.conv import conv2d_forward
from nn_core.layers import AvgPool, Conv2d, Dense
from nn_core.model_zoo import ModelZoo
from nn_core.network import Network
from reparam.latents import DecoderTransform, LatentTensor, decode
from reparam.model import ReparamModel
from sparse_infer.bench import bench_speedup, thread_setting
from sparse_infer.block_sparse import BlockSparseConv2d, block_sparse_conv, block_sparse_network
from sparse_infer.flops import count_flops
from sparse_infer.masks import SliceMask, masks_for, slice_mask
from sparse_infer.pruning import PrunedConv2d, plan_pruning, prune_network
from sparse_infer.report import build_sparsity_report
from sparsity.penalties import slice_sparsity
from utils.errors import StaleMaskError

from tests.conftest import randomize_bn


def _single_conv(c_in, c_out, hw=6):
    return Network([Conv2d("c", c_in, c_out, 3, 1), AvgPool("p"), Dense("fc", c_out, 2)], (c_in, hw, hw), 2)


def test_slice_mask_marks_zero_rows():
    s = np.array([[0.1, -0.3], [0.0, 1.2], [0.0, 0.0], [2.0, 0.0]])
    m = slice_mask(LatentTensor("c", s, (2, 2, 1, 2)))
    assert m.mask.tolist() == [True, False, True, False]
    assert m.zero_count == 2 and m.nonzero_count == 2 and m.sparsity == 0.5
    assert m.grid().tolist() == [[True, False], [True, False]]


def test_flops_example_one_dead_input_channel():
    net = _single_conv(2, 2, hw=5)
    mask = SliceMask("c", np.array([True, False, True, False]), 2, 2)
    row = {r.name: r for r in count_flops(net, {"c": mask}).layers}["c"]
    assert (row.dense, row.slice, row.structured) == (900, 450, 450)


def test_slice_macs_scale_with_slice_sparsity():
    net = _single_conv(4, 5)
    gen = np.random.default_rng(0)
    mask = np.zeros(20, dtype=bool)
    mask[gen.choice(20, 14, replace=False)] = True
    row = count_flops(net, {"c": SliceMask("c", mask, 5, 4)}).layers[0]
    assert row.slice * 10 == row.dense * 3


def _brute_force_slice_macs(mask_grid, hw):
    total = 0
    c_out, c_in = mask_grid.shape
    for o in range(c_out):
        for i in range(c_in):
            for _ in range(hw):
                if not mask_grid[o, i]:
                    total += 9
    return total


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31 - 1), st.floats(0.0, 1.0))
def test_mac_counts_match_brute_force_and_order(c_in, c_out, seed, p):
    gen = np.random.default_rng(seed)
    grid = gen.random((c_out, c_in)) < p
    net = _single_conv(c_in, c_out, hw=4)
    row = count_flops(net, {"c": SliceMask("c", grid.ravel(), c_out, c_in)}).layers[0]
    hw = 16
    assert row.slice == _brute_force_slice_macs(grid, hw)
    live = ~grid
    assert row.structured == int(live.any(axis=0).sum()) * int(live.any(axis=1).sum()) * 9 * hw
    assert row.slice <= row.structured <= row.dense


def _zero_rows(latent, rows):
    latent.surrogate[rows] = 0.0


def _miniconv_with_dead_channels(state):
    lt = state.reparam.latents["conv2"]
    c_in = lt.shape[1]
    _zero_rows(lt, list(range(c_in)))                                 # filter 0
    _zero_rows(lt, [o * c_in + 1 for o in range(lt.shape[0])])        # input channel 1
    bn = state.network.layer("bn2")
    bn.buffers["running_mean"][0] = 0.0
    bn.params["beta"][0] = -0.5
    state.reparam.decode_into()
    return masks_for(state.reparam.latents)


def test_zero_propagation_removes_downstream_channels(miniconv_state):
    masks = _miniconv_with_dead_channels(miniconv_state)
    plans = plan_pruning(miniconv_state.network, masks)
    assert 1 not in plans["conv2"].live_in
    assert 0 not in plans["conv2"].live_out
    assert 0 not in plans["conv3"].live_in
    flops = count_flops(miniconv_state.network, masks)
    assert flops.slice <= flops.dense and flops.structured <= flops.dense
    conv3 = {r.name: r for r in flops.layers}["conv3"]
    assert conv3.structured < conv3.dense


def test_pruned_miniconv_matches_dense(miniconv_state):
    masks = _miniconv_with_dead_channels(miniconv_state)
    pruned = prune_network(miniconv_state.network, masks)
    assert isinstance(pruned.layer("conv3"), PrunedConv2d)
    x = np.random.default_rng(1).normal(size=(8, 1, 12, 12)).astype(np.float32)
    dense, _ = miniconv_state.network.forward(x)
    sparse, _ = pruned.forward(x)
    np.testing.assert_allclose(sparse, dense, atol=1e-5)
    # the original stays untouched
    assert not isinstance(miniconv_state.network.layer("conv3"), PrunedConv2d)


def test_pruned_resnet_matches_dense():
    gen = np.random.default_rng(2)
    net = ModelZoo.build("resnet20", (3, 8, 8), width=2)
    model = ReparamModel.initialize(net, 2.0, gen)
    randomize_bn(net, gen)
    for lt in model.latents.values():
        if lt.l == 9:
            rows = gen.choice(lt.rows, size=int(0.4 * lt.rows), replace=False)
            _zero_rows(lt, rows)
    model.decode_into()
    pruned = prune_network(net, masks_for(model.latents))
    x = gen.normal(size=(4, 3, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(pruned.forward(x)[0], net.forward(x)[0], rtol=1e-4, atol=1e-4)
    with pytest.raises(NotImplementedError):
        pruned.layer("stem").backward(None, None)


def test_block_sparse_network_matches_dense(miniconv_state):
    _miniconv_with_dead_channels(miniconv_state)
    net = block_sparse_network(miniconv_state.reparam)
    assert isinstance(net.layer("conv2"), BlockSparseConv2d)
    assert not isinstance(miniconv_state.network.layer("conv2"), BlockSparseConv2d)
    x = np.random.default_rng(3).normal(size=(8, 1, 12, 12)).astype(np.float32)
    np.testing.assert_allclose(net.forward(x)[0], miniconv_state.network.forward(x)[0], atol=1e-5)


def test_block_sparse_resnet_matches_dense():
    gen = np.random.default_rng(4)
    net = ModelZoo.build("resnet20", (3, 8, 8), width=2)
    model = ReparamModel.initialize(net, 2.0, gen)
    randomize_bn(net, gen)
    for lt in model.latents.values():
        if lt.l == 9:
            _zero_rows(lt, gen.choice(lt.rows, size=int(0.5 * lt.rows), replace=False))
    model.decode_into()
    sparse = block_sparse_network(model)
    assert isinstance(sparse.layer("stage2.0.conv1"), BlockSparseConv2d)
    x = gen.normal(size=(4, 3, 8, 8)).astype(np.float32)
    np.testing.assert_allclose(sparse.forward(x)[0], net.forward(x)[0], rtol=1e-4, atol=1e-4)


def _conv_case(gen, sparsity):
    s = gen.integers(-3, 4, size=(6 * 4, 9)).astype(np.float64)
    s[gen.random(s.shape[0]) < sparsity] = 0.0
    latent = LatentTensor("c", s, (6, 4, 3, 3))
    decoder = DecoderTransform(gen.normal(size=(9, 9)))
    x = gen.normal(size=(2, 4, 7, 7))
    return latent, decoder, x


def test_block_sparse_without_masked_slices_is_exact():
    gen = np.random.default_rng(3)
    latent, decoder, x = _conv_case(gen, 0.0)
    latent.surrogate[np.all(latent.rounded == 0, axis=1)] = 1.0
    ref, _ = conv2d_forward(x, decode(latent, decoder), None, 1, 1)
    np.testing.assert_array_equal(block_sparse_conv(x, latent, decoder, slice_mask(latent)), ref)


def test_block_sparse_all_masked_gives_zeros():
    gen = np.random.default_rng(4)
    latent, decoder, x = _conv_case(gen, 1.0)
    out = block_sparse_conv(x, latent, decoder, slice_mask(latent), stride=2)
    assert out.shape == (2, 6, 4, 4) and np.all(out == 0)


def test_block_sparse_matches_dense_at_high_sparsity():
    gen = np.random.default_rng(5)
    latent, decoder, x = _conv_case(gen, 0.8)
    bias = gen.normal(size=6)
    ref, _ = conv2d_forward(x, decode(latent, decoder), bias, 2, 1)
    out = block_sparse_conv(x, latent, decoder, slice_mask(latent), stride=2, bias=bias)
    assert np.max(np.abs(out - ref)) < 1e-5


def test_block_sparse_rejects_stale_mask():
    gen = np.random.default_rng(6)
    latent, decoder, x = _conv_case(gen, 0.5)
    mask = slice_mask(latent)
    latent.surrogate[int(np.flatnonzero(mask.mask)[0])] = 2.0
    with pytest.raises(StaleMaskError):
        block_sparse_conv(x, latent, decoder, mask)


def test_block_sparse_layer_matches_conv_layer():
    gen = np.random.default_rng(7)
    latent, decoder, x = _conv_case(gen, 0.5)
    conv = Conv2d("c", 4, 6, 3, 1)
    conv.astype(np.float64)
    conv.params["weight"] = decode(latent, decoder)
    layer = BlockSparseConv2d(conv, latent, decoder)
    assert layer.output_shape((4, 7, 7)) == (6, 7, 7)
    np.testing.assert_allclose(layer.forward(x, False)[0], conv.forward(x, False)[0], atol=1e-10)


def test_bench_on_identical_networks(miniconv_state):
    images = np.random.default_rng(8).normal(size=(256, 1, 12, 12)).astype(np.float32)
    result = bench_speedup(miniconv_state.network, miniconv_state.network, images, batch_size=64,
                           warmup=1, repeats=5)
    assert result.examples == 256 and result.batch_size == 64
    assert 0.33 < result.speedup < 3.0
    assert set(result.to_dict()) == {"dense_ms", "pruned_ms", "speedup", "batch_size", "examples", "threads",
                                     "block_sparse_ms"}
    assert result.block_sparse_ms is None


def test_thread_setting_reads_environment(monkeypatch):
    monkeypatch.setenv("OMP_NUM_THREADS", "1")
    assert thread_setting() == "1"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    assert thread_setting().startswith("unpinned")


def test_sparsity_report(miniconv_state):
    masks = _miniconv_with_dead_channels(miniconv_state)
    report = build_sparsity_report(miniconv_state.reparam)
    assert report.slice_sparsity == pytest.approx(slice_sparsity(miniconv_state.reparam.latents.values()))
    assert [l.name for l in report.layers] == list(miniconv_state.reparam.latents)
    conv2 = {l.name: l for l in report.layers}["conv2"]
    assert conv2.slice_sparsity == pytest.approx(masks["conv2"].sparsity)
    assert 0.0 < report.sflops_fraction < 1.0
    assert report.structured_fraction <= 1.0
    data = json.loads(json.dumps(report.to_dict()))
    assert data["convention"].startswith("MACs") and data["dense_ms"] is None
