"""Kernel backend selection.

Imports the compiled CSR kernels when the extension was built, else the
NumPy fallback. Set MODQ_PURE_PYTHON=1 to force the fallback (used by the
benchmark and by tests that compare the two backends).
"""

import os

if os.environ.get("MODQ_PURE_PYTHON", "") not in ("", "0"):
    from modq import _pykernels as _impl
else:
    try:
        from modq import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from modq import _pykernels as _impl

csr_matmul = _impl.csr_matmul
csr_t_matmul = _impl.csr_t_matmul


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return "compiled" if _impl.__name__.endswith("_ckernels") else "python"
