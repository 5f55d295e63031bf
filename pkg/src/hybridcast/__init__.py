"""Hybrid quantile forecaster + nearest-neighbour GP residual corrector for
sparse, bursty spatio-temporal event counts."""
import os

# BLAS reads these at import time, so they must be set before numpy loads
_threads = os.environ.get("HYBRIDCAST_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from importlib.resources import files as _files  # noqa: E402

__version__ = "0.1.0"


def fixture_path():
    """Path of the bundled 2-location x 2-code x 120-week panel."""
    return _files(__name__) / "data" / "fixture_panel.csv"
