"""bevrope: rotary position embeddings over BEV space and frame time,
a streaming query decoder, and a desk-scale training harness around them."""
import os

# The workload is thousands of small-matrix ops; threaded BLAS only adds
# dispatch overhead here. Set before numpy loads; user env still wins.
if "numpy" not in __import__("sys").modules:
    for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
        os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from bevrope.kernels import BACKEND  # noqa: F401  (backend chosen at import)
