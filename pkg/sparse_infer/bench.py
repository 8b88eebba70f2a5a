"""
Wall-clock comparison of a dense network against its pruned and block-sparse copies.
"""
import os
import time
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import numpy as np

from nn_core.network import Network

logger = logging.getLogger(__name__)

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class BenchResult:
    dense_ms: float
    pruned_ms: float
    speedup: float
    batch_size: int
    examples: int
    threads: str
    block_sparse_ms: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def thread_setting() -> str:
    """BLAS thread count as configured through the environment"""
    for var in THREAD_VARS:
        if os.getenv(var):
            return os.environ[var]
    return f"unpinned ({os.cpu_count()} cpus)"


def time_forward(network: Network, images: np.ndarray, batch_size: int = 128,
                 warmup: int = 3, repeats: int = 5) -> float:
    """Median wall-clock milliseconds of one eval pass over images"""
    def one_pass():
        for start in range(0, len(images), batch_size):
            network.forward(images[start:start + batch_size], train=False)

    for _ in range(warmup):
        one_pass()
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        one_pass()
        runs.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(runs))


def bench_speedup(dense: Network, pruned: Network, images: np.ndarray, batch_size: int = 128,
                  warmup: int = 3, repeats: int = 5, block_sparse: Optional[Network] = None) -> BenchResult:
    """
    Speedup = dense time / pruned time for a full eval pass.

    Args:
        dense: Reference network
        pruned: Structurally pruned copy
        images: Evaluation inputs (N, C, H, W)
        batch_size: Forward batch size
        block_sparse: Optional block-sparse copy, timed alongside
    """
    dense_ms = time_forward(dense, images, batch_size, warmup, repeats)
    pruned_ms = time_forward(pruned, images, batch_size, warmup, repeats)
    result = BenchResult(
        dense_ms=dense_ms,
        pruned_ms=pruned_ms,
        speedup=dense_ms / pruned_ms if pruned_ms > 0 else float("inf"),
        batch_size=batch_size,
        examples=len(images),
        threads=thread_setting(),
    )
    if block_sparse is not None:
        result.block_sparse_ms = time_forward(block_sparse, images, batch_size, warmup, repeats)
    logger.info(f"Bench: dense {dense_ms:.1f} ms, pruned {pruned_ms:.1f} ms, "
                f"speedup {result.speedup:.2f}x (threads: {result.threads})")
    return result
