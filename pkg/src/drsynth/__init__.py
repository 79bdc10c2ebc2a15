"""Domain-randomized synthetic data generation for object detection."""

import numba

# the bundled TBB is too old for numba; skip straight to OpenMP / workqueue
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
