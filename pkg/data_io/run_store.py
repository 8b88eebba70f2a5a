"""
Run directory store: metrics CSV, JSON reports, config snapshot, checkpoint
and compressed model for one run, plus sweep-wide queries over metrics tables.
"""
import os
import json
import logging
import tempfile
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CONFIG_FILE = "config.txt"
CHECKPOINT_FILE = "checkpoint.npz"
MODEL_FILE = "model.lnx"
RESULT_FILE = "result.json"


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class RunStore:
    def __init__(self, folder: str):
        """
        Initialize a store rooted at one run directory.

        Args:
            folder: Run directory; created if missing
        """
        self.folder = folder
        os.makedirs(self.folder, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.folder, name)

    def exists(self, name: str) -> bool:
        return os.path.exists(self.path(name))

    def write_config(self, text: str) -> str:
        path = self.path(CONFIG_FILE)
        _atomic_write(path, text.encode("utf-8"))
        return path

    def reset_metrics(self) -> None:
        if self.exists(METRICS_FILE):
            os.remove(self.path(METRICS_FILE))

    def append_metrics(self, row: Dict[str, Any]) -> None:
        """Append one row; the header is written with the first row"""
        path = self.path(METRICS_FILE)
        pd.DataFrame([row]).to_csv(path, mode="a", header=not os.path.exists(path), index=False)

    def read_metrics(self) -> pd.DataFrame:
        if not self.exists(METRICS_FILE):
            return pd.DataFrame()
        return pd.read_csv(self.path(METRICS_FILE))

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        path = self.path(name)
        _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default).encode("utf-8"))
        return path

    def read_json(self, name: str) -> Dict[str, Any]:
        with open(self.path(name), "r", encoding="utf-8") as fh:
            return json.load(fh)

    def write_bytes(self, name: str, data: bytes) -> str:
        path = self.path(name)
        _atomic_write(path, data)
        logger.info(f"Wrote {path} ({len(data)} bytes)")
        return path

    def save_checkpoint(self, arrays: Dict[str, np.ndarray], name: str = CHECKPOINT_FILE) -> str:
        """Write arrays to a temp file and rename, so a crash never leaves a partial checkpoint"""
        path = self.path(name)
        fd, tmp = tempfile.mkstemp(dir=self.folder, prefix=".tmp-", suffix=".npz")
        os.close(fd)
        try:
            np.savez(tmp, **arrays)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)
        return path

    def load_checkpoint(self, name: str = CHECKPOINT_FILE) -> Dict[str, np.ndarray]:
        with np.load(self.path(name)) as data:
            return {k: data[k] for k in data.files}


def _json_default(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def load_all_metrics(root: str) -> pd.DataFrame:
    """
    Every metrics CSV under root in one frame, tagged with its run directory.
    """
    frames = []
    if not os.path.exists(root):
        logger.warning(f"Folder not found: {root}")
        return pd.DataFrame()
    for dirpath, _, files in sorted(os.walk(root)):
        if METRICS_FILE in files:
            try:
                df = pd.read_csv(os.path.join(dirpath, METRICS_FILE))
            except Exception as e:
                logger.error(f"Error loading {dirpath}: {str(e)}")
                continue
            df["run_dir"] = os.path.relpath(dirpath, root)
            frames.append(df)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def query(df: pd.DataFrame, filters: Dict[str, Any], columns: Optional[List[str]] = None) -> List[Dict[str, Any]]:
    """
    Rows whose columns equal the given filter values.

    Args:
        df: Frame to filter
        filters: Column to value mapping; unknown columns are ignored
        columns: Optional subset of columns to return
    """
    filtered = df
    for col, value in filters.items():
        if col in filtered.columns:
            filtered = filtered[filtered[col] == value]
    if columns:
        filtered = filtered[[c for c in columns if c in filtered.columns]]
    return filtered.to_dict(orient="records")
