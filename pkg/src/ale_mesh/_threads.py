"""Thread-count capping.

Must be imported before numpy so the BLAS pool picks up the limits.
ALE_MESH_THREADS > 0 caps the worker count, 0 or unset leaves the
library defaults alone (auto).
"""

import os


def _apply_thread_cap():
    raw = os.environ.get("ALE_MESH_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        return
    if n <= 0:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


_apply_thread_cap()
