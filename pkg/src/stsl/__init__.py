"""Split learning across multiple end-systems sharing one server."""

import os

# Cap BLAS threads before numpy loads; STSL_THREADS=0 (the default) means serial.
_threads = os.environ.get("STSL_THREADS", "0").strip() or "0"
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, str(max(1, int(_threads))))

from . import backend  # noqa: E402

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
