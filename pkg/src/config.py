import os
from dotenv import load_dotenv

load_dotenv()

# Workers (falls back to logical CPU count, see src.utils.resolve_thread_count)
VCOD_BENCH_THREADS = os.getenv("VCOD_BENCH_THREADS")

# Logging
LOG_LEVEL = os.getenv("VCOD_BENCH_LOG_LEVEL", "INFO")

# Ground truth ingestion
GT_THRESHOLD = int(os.getenv("VCOD_BENCH_GT_THRESHOLD", "128"))
MANIFEST_NAME = os.getenv("VCOD_BENCH_MANIFEST_NAME", "manifest.json")

# Metrics
DEFAULT_BINARIZE = os.getenv("VCOD_BENCH_BINARIZE", "fixed:0.5")
WF_SIGMA = float(os.getenv("VCOD_BENCH_WF_SIGMA", "5"))
WF_DECAY = float(os.getenv("VCOD_BENCH_WF_DECAY", "5"))

# Annotation pipeline
FLAG_THRESHOLD = float(os.getenv("VCOD_BENCH_FLAG_THRESHOLD", "0.7"))
PROPAGATOR_TIMEOUT = int(os.getenv("VCOD_BENCH_PROPAGATOR_TIMEOUT", "600"))
