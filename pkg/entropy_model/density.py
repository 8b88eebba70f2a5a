"""
Fully factorized learned density over latent values.

Each of the l dimensions of a group has its own univariate CDF, modeled as a
small monotone network: a chain of layers h <- softplus(M) h + b with a
tanh gating term on all but the last layer. Positive matrices and gates with
factor tanh(a) > -1 keep every layer nondecreasing in its input.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

LIKELIHOOD_BOUND = 2.0 ** -20
MIN_WARM_SCALE = 0.05


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class FactorizedDensity:
    def __init__(
        self,
        channels: int,
        filters: Sequence[int] = (3, 3, 3),
        init_scale: float = 10.0,
        rng: Optional[np.random.Generator] = None,
        likelihood_bound: float = LIKELIHOOD_BOUND,
    ):
        """
        Args:
            channels: Number of independent dimensions (the group's slice length)
            filters: Hidden widths; len(filters) + 1 layers in total
            init_scale: Initial spread of every CDF
            rng: Generator for the bias initialization
            likelihood_bound: Floor applied to bin probabilities
        """
        self.channels = int(channels)
        self.filters = tuple(int(f) for f in filters)
        self.init_scale = float(init_scale)
        self.likelihood_bound = float(likelihood_bound)
        rng = rng or np.random.default_rng(0)

        dims = (1,) + self.filters + (1,)
        scale = self.init_scale ** (1.0 / (len(self.filters) + 1))
        self.params: Dict[str, np.ndarray] = {}
        for k in range(len(self.filters) + 1):
            init = np.log(np.expm1(1.0 / scale / dims[k + 1]))
            self.params[f"matrix{k}"] = np.full((self.channels, dims[k + 1], dims[k]), init, dtype=np.float64)
            self.params[f"bias{k}"] = rng.uniform(-0.5, 0.5, (self.channels, dims[k + 1], 1))
            if k < len(self.filters):
                self.params[f"factor{k}"] = np.zeros((self.channels, dims[k + 1], 1), dtype=np.float64)

    @property
    def num_layers(self) -> int:
        return len(self.filters) + 1

    def warm_start(self, samples: np.ndarray, min_scale: float = MIN_WARM_SCALE) -> None:
        """
        Reset every dimension to a logistic CDF with the median and spread of samples.

        With zero gates the layer chain is affine, so each layer takes an equal
        share of the scale and the first bias carries the location. The
        resulting CDF is sigmoid((x - median) / s) with s = std * sqrt(3) / pi.

        Args:
            samples: (N, channels) values, typically noisy surrogates
        """
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != self.channels or samples.shape[0] == 0:
            raise ValueError(f"warm start needs (N, {self.channels}) samples, got shape {samples.shape}")
        center = np.median(samples, axis=0)
        s = np.maximum(samples.std(axis=0) * np.sqrt(3.0) / np.pi, min_scale)
        per_layer = s ** (1.0 / self.num_layers)
        dims = (1,) + self.filters + (1,)
        for k in range(self.num_layers):
            init = np.log(np.expm1(1.0 / per_layer / dims[k + 1]))
            self.params[f"matrix{k}"] = np.broadcast_to(
                init[:, None, None], (self.channels, dims[k + 1], dims[k])).copy()
            self.params[f"bias{k}"] = np.zeros((self.channels, dims[k + 1], 1))
            if k < len(self.filters):
                self.params[f"factor{k}"] = np.zeros((self.channels, dims[k + 1], 1))
        self.params["bias0"] = -softplus(self.params["matrix0"]) * center[:, None, None]
        logger.debug(f"Warm-started {self.channels} density dimensions, scales {np.round(s, 3).tolist()}")

    def logits_cumulative(self, x: np.ndarray) -> Tuple[np.ndarray, List[tuple]]:
        """
        Args:
            x: (channels, 1, N) inputs

        Returns:
            (logits of shape (channels, 1, N), cache for logits_backward)
        """
        h = x
        cache = []
        for k in range(self.num_layers):
            s = softplus(self.params[f"matrix{k}"])
            z = s @ h + self.params[f"bias{k}"]
            cache.append((h, z, s))
            if k < self.num_layers - 1:
                h = z + np.tanh(self.params[f"factor{k}"]) * np.tanh(z)
            else:
                h = z
        return h, cache

    def logits_backward(self, grad: np.ndarray, cache: List[tuple]) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        grads: Dict[str, np.ndarray] = {}
        g = grad
        for k in reversed(range(self.num_layers)):
            h_prev, z, s = cache[k]
            if k < self.num_layers - 1:
                a = self.params[f"factor{k}"]
                t = np.tanh(z)
                ta = np.tanh(a)
                grads[f"factor{k}"] = (g * t * (1.0 - ta * ta)).sum(axis=2, keepdims=True)
                g = g * (1.0 + ta * (1.0 - t * t))
            grads[f"bias{k}"] = g.sum(axis=2, keepdims=True)
            grads[f"matrix{k}"] = (g @ h_prev.transpose(0, 2, 1)) * sigmoid(self.params[f"matrix{k}"])
            g = s.transpose(0, 2, 1) @ g
        return g, grads

    def cdf(self, values: np.ndarray) -> np.ndarray:
        """CDF of every dimension at (N, channels) values"""
        x = np.asarray(values, dtype=np.float64).T[:, None, :]
        logits, _ = self.logits_cumulative(x)
        return sigmoid(logits[:, 0, :]).T

    def likelihood(self, values: np.ndarray, with_grad: bool = False):
        """
        Floored bin probabilities q(w) = c(w + 1/2) - c(w - 1/2).

        Args:
            values: (N, channels) real values
            with_grad: Also return a closure mapping dL/dq to (dL/dvalues, param grads)

        Returns:
            q of shape (N, channels), plus the backward closure when requested
        """
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[0]
        x = values.T[:, None, :]
        both = np.concatenate([x - 0.5, x + 0.5], axis=2)
        logits, cache = self.logits_cumulative(both)
        lower, upper = logits[:, :, :n], logits[:, :, n:]
        sign = -np.sign(lower + upper)
        sign[sign == 0] = 1.0
        sig_u, sig_l = sigmoid(sign * upper), sigmoid(sign * lower)
        diff = sig_u - sig_l
        q = np.maximum(np.abs(diff), self.likelihood_bound)
        q_out = q[:, 0, :].T
        if not with_grad:
            return q_out

        def backward(grad_q: np.ndarray):
            # gradient passes through the floor unchanged
            gq = np.asarray(grad_q, dtype=np.float64).T[:, None, :] * np.sign(diff)
            g_upper = gq * sign * sig_u * (1.0 - sig_u)
            g_lower = -gq * sign * sig_l * (1.0 - sig_l)
            dx, grads = self.logits_backward(np.concatenate([g_lower, g_upper], axis=2), cache)
            dvalues = (dx[:, 0, :n] + dx[:, 0, n:]).T
            return dvalues, grads

        return q_out, backward

    def state(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for k in self.params:
            if state[k].shape != self.params[k].shape:
                raise ValueError(f"density parameter {k}: expected {self.params[k].shape}, got {state[k].shape}")
            self.params[k] = np.array(state[k], dtype=np.float64)


def bin_probability(density: FactorizedDensity, i: int, w) -> np.ndarray:
    """q_i(w) for real values w along dimension i"""
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    values = np.zeros((w.size, density.channels))
    values[:, i] = w.ravel()
    return density.likelihood(values)[:, i].reshape(w.shape)
