"""
Lambda-grid sweeps: one isolated train+evaluate+compress run per
(lambda_u, lambda_s, seed) cell, in parallel worker processes, resumable by
cell hash, summarized as a pareto table.
"""
import os
import logging
import itertools
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Sequence

import pandas as pd

from codec.container import serialize_model
from data_io.datasets import load_dataset
from data_io.run_store import MODEL_FILE, RESULT_FILE, RunStore
from engine.evaluate import evaluate
from engine.state import pack_state
from engine.trainer import train
from utils.config import RunConfig
from utils.metrics import Metrics

logger = logging.getLogger(__name__)
metrics = Metrics()

SWEEP_CSV = "sweep.csv"
SWEEP_JSON = "sweep.json"
SORT_KEYS = ["lambda_u", "lambda_s", "seed"]


def cell_configs(base: RunConfig, lambda_u_grid: Sequence[float], lambda_s_grid: Sequence[float],
                 seeds: Sequence[int]) -> List[RunConfig]:
    if not lambda_u_grid or not lambda_s_grid or not seeds:
        raise ValueError("sweep grids and seed list must be nonempty")
    cells = []
    for lu, ls, seed in itertools.product(lambda_u_grid, lambda_s_grid, seeds):
        cfg = base.with_overrides(lambda_u=lu, lambda_s=ls, seed=seed).validate()
        cells.append(cfg)
    return cells


def cell_dir(root: str, cfg: RunConfig) -> str:
    return os.path.join(root, f"cell-{cfg.cell_hash()}")


def run_cell(cfg: RunConfig, root: str) -> Dict[str, Any]:
    """
    Train, evaluate and compress one cell. Never raises: failures are
    returned (and written) as a result with status "failed".
    """
    store = RunStore(cell_dir(root, cfg))
    base = {"lambda_u": cfg.lambda_u, "lambda_s": cfg.lambda_s, "seed": cfg.seed, "cell": cfg.cell_hash()}
    if store.exists(RESULT_FILE):
        previous = store.read_json(RESULT_FILE)
        if previous.get("status") == "ok":
            logger.info(f"Skipping completed cell {base['cell']}")
            return {**previous, "status": "skipped"}
    try:
        store.write_config(cfg.to_text())
        train_set, test_set = load_dataset(cfg.dataset, cfg.data_dir or None, cfg.subset_fraction, cfg.seed)
        state, rows = train(cfg, train_set, test_set, store)
        result = evaluate(state, test_set, cfg.eval_batch_size)
        store.write_bytes(MODEL_FILE, serialize_model(pack_state(state)))
        record = {
            **base,
            "status": "ok",
            "accuracy": result.accuracy,
            "size_bytes": result.size.total,
            "compression_ratio": result.size.compression_ratio,
            "slice_sparsity": result.sparsity.slice_sparsity,
            "unstructured_sparsity": result.sparsity.unstructured_sparsity,
            "sflops_fraction": result.sparsity.sflops_fraction,
            "epochs": len(rows),
        }
    except Exception as e:
        logger.error(f"Cell {base['cell']} failed: {e}")
        record = {**base, "status": "failed", "error": f"{type(e).__name__}: {e}"}
    store.write_json(RESULT_FILE, record)
    return record


def pareto_flags(df: pd.DataFrame) -> pd.Series:
    """True for ok rows not dominated in (higher accuracy, smaller size)"""
    flags = pd.Series(False, index=df.index)
    ok = df[df["status"].isin(["ok", "skipped"])] if "status" in df else df
    for i, row in ok.iterrows():
        dominated = (
            (ok["accuracy"] >= row["accuracy"]) & (ok["size_bytes"] <= row["size_bytes"])
            & ((ok["accuracy"] > row["accuracy"]) | (ok["size_bytes"] < row["size_bytes"]))
        ).any()
        flags[i] = not dominated
    return flags


def sweep(base: RunConfig, lambda_u_grid: Sequence[float], lambda_s_grid: Sequence[float],
          seeds: Sequence[int], root: str, workers: int = 1) -> pd.DataFrame:
    """
    Run every grid cell and write sweep.csv / sweep.json under root.

    Returns:
        One row per cell sorted by (lambda_u, lambda_s, seed), with a pareto column
    """
    cells = cell_configs(base, lambda_u_grid, lambda_s_grid, seeds)
    os.makedirs(root, exist_ok=True)
    logger.info(f"Sweep over {len(cells)} cells with {workers} worker(s) into {root}")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_cell, cells, [root] * len(cells)))
    else:
        records = [run_cell(cfg, root) for cfg in cells]
    for record in records:
        metrics.record_sweep_cell(record["status"])

    df = pd.DataFrame(records).sort_values(SORT_KEYS, kind="stable").reset_index(drop=True)
    for col in ("accuracy", "size_bytes"):
        if col not in df:
            df[col] = float("nan")
    df["pareto"] = pareto_flags(df)
    df.to_csv(os.path.join(root, SWEEP_CSV), index=False)
    RunStore(root).write_json(SWEEP_JSON, {"cells": df.to_dict(orient="records")})
    failed = int((df["status"] == "failed").sum())
    if failed:
        logger.warning(f"{failed} of {len(df)} sweep cells failed")
    return df
