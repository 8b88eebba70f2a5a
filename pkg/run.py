#!/usr/bin/env python3
"""
Entry script for the LilNetX toolkit.
Usage: python run.py <train|eval|compress|decompress|sweep|bench|report> [options]
"""
import os
import sys
import logging
from dotenv import load_dotenv

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

# Load environment variables from .env file
load_dotenv()

# Benchmarks run single-threaded unless the environment says otherwise;
# must be set before numpy loads its BLAS
if len(sys.argv) > 1 and sys.argv[1] == "bench":
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")

# Set up logging
logging.basicConfig(
    level=logging.getLevelName(os.getenv("LOG_LEVEL", "INFO")),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

from engine.cli import main  # noqa: E402

if __name__ == "__main__":
    data_dir = os.getenv("LILNETX_DATA_DIR", "./data")
    if not os.path.exists(data_dir):
        logger.warning(f"Data folder not found: {data_dir}. Only the synthetic dataset is available.")
    sys.exit(main())
