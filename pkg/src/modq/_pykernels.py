"""NumPy fallback for the CSR kernels in `_ckernels.pyx`.

Mathematically identical to the compiled versions; per-row accumulation
order may differ in the last float bits, never beyond.
"""

import numpy as np


def csr_matmul(indptr, indices, data, weights):
    """Row-sparse times dense: X @ W for X in CSR form."""
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, weights.shape[1]))
    for i in range(n_rows):
        s, e = indptr[i], indptr[i + 1]
        if s != e:
            out[i] = data[s:e] @ weights[indices[s:e]]
    return out


def csr_t_matmul(indptr, indices, data, grad, n_features):
    """Transposed-sparse times dense: X.T @ G, shape (n_features, G.cols)."""
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_features, grad.shape[1]))
    for i in range(n_rows):
        s, e = indptr[i], indptr[i + 1]
        if s != e:
            # column indices are unique within a row, so fancy += is safe
            out[indices[s:e]] += data[s:e, None] * grad[i]
    return out
