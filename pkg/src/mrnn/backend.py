"""Kernel backend selection.

``MRNN_BACKEND`` picks the kernel family used by the array engine:

* ``numba`` - require the jitted kernels, fail if numba is missing
* ``numpy`` - force the pure-numpy fallback
* ``auto`` (default, also unset) - numba when importable, numpy otherwise

``benchmarks/bench_backends.py`` times the two families against each
other; everything else should go through this module.
"""

import os

_CHOICES = ("auto", "numba", "numpy")

requested = os.environ.get("MRNN_BACKEND", "auto").lower()
if requested not in _CHOICES:
    raise ValueError(f"MRNN_BACKEND must be one of {_CHOICES}, got {requested!r}")

if requested == "numpy":
    from mrnn import kernels_numpy as _k

    name = "numpy"
elif requested == "numba":
    from mrnn import kernels_numba as _k

    name = "numba"
else:
    try:
        from mrnn import kernels_numba as _k

        name = "numba"
    except ImportError:
        from mrnn import kernels_numpy as _k

        name = "numpy"

conv1d_fwd = _k.conv1d_fwd
conv1d_bwd = _k.conv1d_bwd
pool_max_fwd = _k.pool_max_fwd
pool_max_bwd = _k.pool_max_bwd
