"""Hot-loop kernels for the Gibbs sweep, with backend selection at import.

The compiled Cython extension (``metsrisk.kernels._core``) is preferred when
it built successfully; otherwise the numpy fallback (``_pycore``) is used.
Set ``METSRISK_BACKEND=python`` or ``=cython`` to force a choice. Both
backends implement the same contracts and agree to float precision on a
single sweep; ``benchmarks/bench_backends.py`` compares their speed.

All kernels are purely computational: every random input is pre-drawn by the
caller, so draws are bit-reproducible for a fixed backend.
"""

import os

from . import _pycore

_requested = os.environ.get("METSRISK_BACKEND", "").lower()

if _requested in ("", "cython"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise ImportError(
                "METSRISK_BACKEND=cython but the compiled extension is unavailable; "
                "reinstall the package with a C compiler present"
            )
        _impl = _pycore
        BACKEND = "python"
elif _requested == "python":
    _impl = _pycore
    BACKEND = "python"
else:
    raise ImportError(f"unknown METSRISK_BACKEND {_requested!r}")

subject_sums = _impl.subject_sums
beta_scan = _impl.beta_scan
impute_waist_lagged = _impl.impute_waist_lagged

__all__ = ["BACKEND", "subject_sums", "beta_scan", "impute_waist_lagged", "_pycore"]
