"""
Command-line entry points: train, eval, compress, decompress, sweep, bench, report.
"""
import os
import sys
import json
import logging
import argparse
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from codec.container import read_model, serialize_model, write_model
from codec.report import report_size
from data_io.datasets import load_dataset
from data_io.run_store import CHECKPOINT_FILE, MODEL_FILE, RunStore, load_all_metrics, query
from engine.evaluate import evaluate
from engine.state import ModelState, decoded_arrays, pack_state, state_from_checkpoint, unpack_state
from engine.sweep import SWEEP_CSV, sweep
from engine.trainer import train
from sparse_infer.block_sparse import block_sparse_network
from sparse_infer.bench import bench_speedup
from sparse_infer.masks import masks_for
from sparse_infer.pruning import prune_network
from sparse_infer.report import build_sparsity_report
from utils.config import RunConfig, load_config
from utils.errors import LilNetXError
from utils.metrics import Metrics

logger = logging.getLogger(__name__)
metrics = Metrics()

# flag name -> RunConfig field
OVERRIDES = {
    "dataset": str, "data_dir": str, "architecture": str, "width": int, "epochs": int,
    "batch_size": int, "seed": int, "lr_main": float, "lr_entropy": float, "lambda_i": float,
    "lambda_u": float, "lambda_s": float, "unstructured_norm": str, "group_norm": str,
    "rho_rule": str, "b_min": float, "weight_decay": float, "train_limit": int,
    "augment": str, "output_dir": str, "run_name": str, "workers": int,
}


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _filter(text: str) -> Tuple[str, Any]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = (part.strip() for part in text.split("=", 1))
    try:
        return key, float(value)
    except ValueError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lilnetx", description="Joint compression and sparsification of small CNNs")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", help="key = value or .yaml config file")
        for name, kind in OVERRIDES.items():
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)
        return p

    with_config(sub.add_parser("train", help="train a model and write model.lnx into its run directory"))

    p = with_config(sub.add_parser("eval", help="evaluate a .lnx file on the test split"))
    p.add_argument("--model", required=True)

    p = sub.add_parser("compress", help="encode a run's checkpoint into model.lnx")
    p.add_argument("--run", required=True, help="run directory holding checkpoint.npz")
    p.add_argument("--out", help="output path (default <run>/model.lnx)")

    p = sub.add_parser("decompress", help="write decoded weights and raw values to .npz")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = with_config(sub.add_parser("sweep", help="lambda grid sweep with pareto table"))
    p.add_argument("--lambda-u-grid", type=_floats, required=True)
    p.add_argument("--lambda-s-grid", type=_floats, required=True)
    p.add_argument("--seeds", type=_ints, default=None)

    p = with_config(sub.add_parser("bench", help="dense vs structurally pruned forward timing"))
    p.add_argument("--model", required=True)
    p.add_argument("--bench-batch", type=int, default=128)

    p = sub.add_parser("report", help="size and sparsity report for a .lnx file, or a sweep summary")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--sweep-root")
    p.add_argument("--where", action="append", type=_filter, default=[], metavar="KEY=VALUE",
                   help="keep sweep rows whose column equals VALUE; repeatable")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    overrides = {name: getattr(args, name, None) for name in OVERRIDES}
    return cfg.with_overrides(**overrides).validate()


def run_dir(cfg: RunConfig) -> str:
    name = cfg.run_name or f"{cfg.architecture}-{cfg.dataset}-{cfg.cell_hash()}"
    return os.path.join(cfg.resolved_output_dir(), name)


def _print(payload) -> None:
    print(json.dumps(payload, indent=2, default=float))


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    store = RunStore(run_dir(cfg))
    store.write_config(cfg.to_text())
    train_set, test_set = load_dataset(cfg.dataset, cfg.data_dir or None, cfg.subset_fraction, cfg.seed)
    state, _ = train(cfg, train_set, test_set, store)
    result = evaluate(state, test_set, cfg.eval_batch_size)
    store.write_bytes(MODEL_FILE, serialize_model(pack_state(state)))
    store.write_json("report.json", result.to_dict())
    metrics.record_file()
    _print(result.to_dict())
    return 0


def cmd_eval(args) -> int:
    cfg = config_from_args(args)
    state = unpack_state(read_model(args.model))
    _, test_set = load_dataset(cfg.dataset, cfg.data_dir or None, cfg.subset_fraction, cfg.seed)
    _print(evaluate(state, test_set, cfg.eval_batch_size).to_dict())
    return 0


def cmd_compress(args) -> int:
    store = RunStore(args.run)
    state = state_from_checkpoint(store.load_checkpoint(CHECKPOINT_FILE))
    model = pack_state(state)
    out = args.out or store.path(MODEL_FILE)
    size = write_model(out, model)
    metrics.record_file()
    logger.info(f"Compressed {args.run} into {out} ({size} bytes)")
    _print(report_size(model).to_dict())
    return 0


def cmd_decompress(args) -> int:
    state = unpack_state(read_model(args.model))
    np.savez(args.out, **decoded_arrays(state))
    logger.info(f"Decoded {args.model} into {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    root = os.path.join(cfg.resolved_output_dir(), cfg.run_name or "sweep")
    df = sweep(cfg, args.lambda_u_grid, args.lambda_s_grid, args.seeds or [cfg.seed], root, cfg.workers)
    print(df.to_string(index=False))
    return 0 if (df["status"] != "failed").all() else 1


def cmd_bench(args) -> int:
    cfg = config_from_args(args)
    state: ModelState = unpack_state(read_model(args.model))
    _, test_set = load_dataset(cfg.dataset, cfg.data_dir or None, cfg.subset_fraction, cfg.seed)
    pruned = prune_network(state.network, masks_for(state.reparam.latents))
    result = bench_speedup(state.network, pruned, test_set.images, args.bench_batch,
                           block_sparse=block_sparse_network(state.reparam))
    report = build_sparsity_report(state.reparam, result)
    _print({"bench": result.to_dict(), "sparsity": report.to_dict()})
    return 0


def cmd_report(args) -> int:
    if args.sweep_root:
        df = load_all_metrics(args.sweep_root)
        if df.empty:
            logger.warning(f"No metrics under {args.sweep_root}")
            return 1
        last = df.sort_values("epoch").groupby("run_dir").tail(1)
        grid_csv = os.path.join(args.sweep_root, SWEEP_CSV)
        if os.path.exists(grid_csv):
            # tag each cell directory with its grid coordinates
            grid = pd.read_csv(grid_csv, dtype={"cell": str})
            grid["run_dir"] = "cell-" + grid["cell"]
            last = last.merge(grid[["run_dir", "lambda_u", "lambda_s", "seed", "pareto"]], on="run_dir", how="left")
        rows = query(last, dict(args.where))
        if not rows:
            logger.warning(f"No runs under {args.sweep_root} match {args.where}")
            return 1
        print(pd.DataFrame(rows).to_string(index=False))
        return 0
    model = read_model(args.model)
    state = unpack_state(model)
    _print({"size": report_size(model).to_dict(), "sparsity": build_sparsity_report(state.reparam).to_dict()})
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    # no-op when run.py already configured logging
    logging.basicConfig(
        level=logging.getLevelName(os.getenv("LOG_LEVEL", "INFO")),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        code = COMMANDS[args.command](args)
    except (LilNetXError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}")
        code = 1
    metrics.log_metrics()
    return code


if __name__ == "__main__":
    sys.exit(main())
