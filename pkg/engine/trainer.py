"""
Training loop: cross-entropy plus rate and computation penalties on
reparameterized weights, with separate optimizers for the model and the
entropy models.
"""
import math
import time
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, Optional

import numpy as np

from data_io.datasets import Dataset, iterate_batches
from data_io.run_store import RunStore
from engine.evaluate import accuracy, estimate_size_bytes
from engine.state import ModelState, checkpoint_arrays
from entropy_model.density import FactorizedDensity
from entropy_model.rate import fit_step, rate_loss
from nn_core.losses import xent_loss
from nn_core.model_zoo import ModelZoo
from nn_core.optim import Adam, cosine_lr
from reparam.model import LATENT_SUFFIX, ReparamModel
from sparse_infer.flops import count_flops
from sparse_infer.masks import masks_for
from sparsity.penalties import compute_loss, penalty_terms, slice_sparsity, unstructured_sparsity
from utils.config import RunConfig
from utils.errors import NonFiniteError
from utils.metrics import Metrics

logger = logging.getLogger(__name__)
metrics = Metrics()


@dataclass
class MetricsRow:
    epoch: int
    xent: float
    rate_bits: float
    unstructured: float
    group: float
    accuracy: float
    est_size_bytes: float
    slice_sparsity: float
    unstructured_sparsity: float
    sflops_fraction: float
    lr: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class StepTerms:
    xent: float
    rate_bits: float
    compute: float
    total: float


class Trainer:
    def __init__(self, cfg: RunConfig, train_set: Dataset, test_set: Dataset, store: Optional[RunStore] = None):
        """
        Build the network, latents and optimizers for one seeded run.

        Args:
            cfg: Validated run configuration
            train_set: Training split
            test_set: Evaluation split
            store: Optional run directory for metrics and checkpoints
        """
        self.cfg = cfg
        self.train_set = train_set.limit(cfg.train_limit)
        self.test_set = test_set
        self.store = store
        self.sparsity = cfg.sparsity

        # independent streams for init, shuffling, rate noise and augmentation
        init_ss, shuffle_ss, noise_ss, aug_ss = np.random.SeedSequence(cfg.seed).spawn(4)
        init_rng = np.random.default_rng(init_ss)
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.aug_rng = np.random.default_rng(aug_ss) if cfg.use_augmentation else None

        network = ModelZoo.build(cfg.architecture, train_set.images.shape[1:], width=cfg.width,
                                 bn_momentum=cfg.bn_momentum)
        reparam = ReparamModel.initialize(
            network, cfg.b_min, init_rng,
            density_factory=lambda l: FactorizedDensity(l, cfg.density_filters, cfg.density_init_scale, rng=init_rng),
        )
        if cfg.density_warm_start:
            for group in reparam.groups:
                values = reparam.group_surrogates(group).astype(np.float64)
                group.density.warm_start(values + init_rng.uniform(-0.5, 0.5, values.shape))
        self.state = ModelState(network, reparam)
        self.main_opt = Adam(lr=cfg.lr_main)
        self.entropy_opts = {g.name: Adam(lr=cfg.lr_entropy) for g in reparam.groups}
        self.steps_per_epoch = max(1, math.ceil(len(self.train_set) / cfg.batch_size))
        self.total_steps = self.steps_per_epoch * cfg.epochs
        self.step = 0
        self.epoch = 0

    @property
    def network(self):
        return self.state.network

    @property
    def reparam(self) -> ReparamModel:
        return self.state.reparam

    def train_step(self, x: np.ndarray, y: np.ndarray) -> StepTerms:
        """One optimization step on a batch"""
        cfg = self.cfg
        reparam = self.reparam
        reparam.decode_into()
        logits, cache = self.network.forward(x, train=True)
        xent, grad_logits = xent_loss(logits, y)
        net_grads = self.network.backward(grad_logits, cache)

        grads = reparam.backprop(net_grads)
        raw = self.network.raw_parameters()
        for key in raw:
            if key in net_grads:
                grads[key] = net_grads[key]

        rate_bits = 0.0
        density_grads = {}
        for group in reparam.groups:
            values = reparam.group_surrogates(group)
            noise = self.noise_rng.uniform(-0.5, 0.5, values.shape).astype(values.dtype)
            bits, d_values, density_grads[group.name] = rate_loss(values, group.density, noise, group.name)
            rate_bits += bits
            if cfg.lambda_i:
                start = 0
                for lt in reparam.group_latents(group):
                    key = lt.name + LATENT_SUFFIX
                    grads[key] = grads[key] + cfg.lambda_i * d_values[start:start + lt.rows]
                    start += lt.rows

        compute, compute_grads = compute_loss(reparam.latents.values(), self.sparsity)
        for name, g in compute_grads.items():
            key = name + LATENT_SUFFIX
            grads[key] = grads[key] + g

        total = xent + cfg.lambda_i * rate_bits + compute
        if not np.isfinite(total):
            raise NonFiniteError(f"loss is {total} at step {self.step}", "loss")

        self.main_opt.lr = cosine_lr(self.step, self.total_steps, cfg.lr_main)
        self.main_opt.step(reparam.trainable(), grads, weight_decay=cfg.weight_decay, decay_keys=raw.keys())
        for group in reparam.groups:
            fit_step(group.density, None, self.entropy_opts[group.name], grads=density_grads[group.name])
        self.network.touch()
        self.step += 1
        return StepTerms(xent, rate_bits, compute, total)

    def train_epoch(self) -> Dict[str, float]:
        sums = {"xent": 0.0, "rate_bits": 0.0}
        batches = 0
        for x, y in iterate_batches(self.train_set, self.cfg.batch_size, self.shuffle_rng, self.aug_rng):
            t0 = time.perf_counter()
            terms = self.train_step(x, y)
            metrics.record_step((time.perf_counter() - t0) * 1000.0)
            sums["xent"] += terms.xent
            sums["rate_bits"] += terms.rate_bits
            batches += 1
        return {k: v / max(batches, 1) for k, v in sums.items()}

    def epoch_row(self, epoch: int, means: Dict[str, float]) -> MetricsRow:
        reparam = self.reparam
        reparam.decode_into()
        latents = list(reparam.latents.values())
        u_pen, g_pen = penalty_terms(latents, self.sparsity)
        flops = count_flops(self.network, masks_for(reparam.latents))
        return MetricsRow(
            epoch=epoch,
            xent=means["xent"],
            rate_bits=means["rate_bits"],
            unstructured=u_pen,
            group=g_pen,
            accuracy=accuracy(self.network, self.test_set, self.cfg.eval_batch_size),
            est_size_bytes=estimate_size_bytes(self.state),
            slice_sparsity=slice_sparsity(latents),
            unstructured_sparsity=unstructured_sparsity(latents),
            sflops_fraction=flops.slice / flops.dense if flops.dense else 0.0,
            lr=self.main_opt.lr,
        )

    def fit(self) -> Iterator[MetricsRow]:
        """
        Train for cfg.epochs, yielding one MetricsRow per epoch.

        A non-finite loss aborts the run; the checkpoint from the last
        completed epoch is left untouched.
        """
        logger.info(f"Training {self.cfg.architecture} on {self.train_set.name}: "
                    f"{len(self.train_set)} examples, {self.total_steps} steps")
        if self.store is not None:
            self.store.reset_metrics()
        for epoch in range(1, self.cfg.epochs + 1):
            t0 = time.perf_counter()
            try:
                means = self.train_epoch()
            except NonFiniteError as e:
                logger.error(f"Aborting at epoch {epoch}: {e}")
                metrics.record_nonfinite_abort()
                raise
            self.epoch = epoch
            row = self.epoch_row(epoch, means)
            metrics.record_epoch()
            logger.info(f"epoch {epoch}: xent={row.xent:.4f} acc={row.accuracy:.4f} "
                        f"slice_sparsity={row.slice_sparsity:.3f} est_size={row.est_size_bytes:.0f}B "
                        f"({time.perf_counter() - t0:.1f}s)")
            if self.store is not None:
                self.store.append_metrics(row.to_dict())
                if epoch % self.cfg.checkpoint_every == 0 or epoch == self.cfg.epochs:
                    self.store.save_checkpoint(checkpoint_arrays(self.state, epoch, self.step))
                    metrics.record_checkpoint()
            yield row
        self.reparam.decode_into()


def train(cfg: RunConfig, train_set: Dataset, test_set: Dataset, store: Optional[RunStore] = None):
    """Run a full training; returns (final state, list of MetricsRow)"""
    trainer = Trainer(cfg, train_set, test_set, store)
    rows = list(trainer.fit())
    return trainer.state, rows
