import os

import numpy as np
import pytest

from entropy_model.density import FactorizedDensity
from nn_core.layers import AvgPool, BatchNorm, Conv2d, Dense, ReLU
from nn_core.model_zoo import ModelZoo
from nn_core.network import Network
from reparam.model import ReparamModel
from engine.state import ModelState
from utils.metrics import Metrics


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f() wrt every entry of x, perturbed in place"""
    grad = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def randomize_bn(network: Network, rng: np.random.Generator) -> None:
    for leaf in network.leaves():
        if isinstance(leaf, BatchNorm):
            c = leaf.channels
            leaf.params["gamma"] = rng.uniform(0.5, 1.5, c).astype(network.dtype)
            leaf.params["beta"] = rng.uniform(-0.5, 0.5, c).astype(network.dtype)
            leaf.buffers["running_mean"] = rng.normal(0, 0.2, c).astype(network.dtype)
            leaf.buffers["running_var"] = rng.uniform(0.5, 2.0, c).astype(network.dtype)
    network.touch()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_network():
    """conv-bn-relu-conv-pool-dense in float64 with random weights"""
    net = Network(
        [
            Conv2d("c1", 2, 3, 3, 1),
            BatchNorm("bn1", 3),
            ReLU("r1"),
            Conv2d("c2", 3, 4, 3, 2),
            AvgPool("pool"),
            Dense("fc", 4, 5),
        ],
        (2, 6, 6),
        5,
    ).astype(np.float64)
    gen = np.random.default_rng(7)
    for leaf in net.leaves():
        for k, v in leaf.params.items():
            leaf.params[k] = gen.normal(0, 0.5, v.shape) + (1.0 if k == "gamma" else 0.0)
    net.touch()
    return net


@pytest.fixture
def miniconv_state():
    """Width-4 MiniConv on 12x12 inputs with densities and random BN statistics"""
    gen = np.random.default_rng(11)
    net = ModelZoo.build("miniconv", (1, 12, 12), width=4)
    reparam = ReparamModel.initialize(net, 2.0, gen, density_factory=lambda l: FactorizedDensity(l, rng=gen))
    randomize_bn(net, gen)
    reparam.decode_into()
    return ModelState(net, reparam)


@pytest.fixture(autouse=True)
def _isolate_env(monkeypatch, tmp_path):
    monkeypatch.setenv("LILNETX_OUTPUT_DIR", str(tmp_path / "runs"))
    Metrics().reset()
    yield


def real_data_dir(name: str):
    root = os.getenv("LILNETX_DATA_DIR")
    if not root:
        return None
    path = os.path.join(root, name)
    return path if os.path.isdir(path) else None
