"""Burst-image super-resolution toolkit.

Pipeline: synthesize or load an LR burst, register every frame onto the
base frame by correlation-coefficient maximization, fuse the frames
through affinity (difference) maps, and decode the fused features into
an HR prediction with window-attention blocks and pixel shuffle.
"""

import os

# Desk-scale matrices gain nothing from BLAS threading, and threaded
# reductions would break byte-identical reproducibility. Explicit env
# settings still win.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

__version__ = "0.1.0"
