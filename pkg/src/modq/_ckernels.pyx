# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels for the training/inference hot loop.

Dense matrix products stay in NumPy (BLAS); these kernels cover the two
sparse products NumPy has no fused primitive for. `modq.kernels` selects
this module when it compiled, else the NumPy fallback in `_pykernels`.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_matmul(cnp.int64_t[:] indptr, cnp.int32_t[:] indices,
               cnp.float64_t[:] data, cnp.float64_t[:, ::1] weights):
    """Row-sparse times dense: X @ W for X in CSR form."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_out = weights.shape[1]
    out_arr = np.zeros((n_rows, n_out), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j, col
    cdef cnp.float64_t v
    with nogil:
        for i in range(n_rows):
            for k in range(indptr[i], indptr[i + 1]):
                col = indices[k]
                v = data[k]
                for j in range(n_out):
                    out[i, j] += v * weights[col, j]
    return out_arr


def csr_t_matmul(cnp.int64_t[:] indptr, cnp.int32_t[:] indices,
                 cnp.float64_t[:] data, cnp.float64_t[:, ::1] grad,
                 Py_ssize_t n_features):
    """Transposed-sparse times dense: X.T @ G, shape (n_features, G.cols)."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_out = grad.shape[1]
    out_arr = np.zeros((n_features, n_out), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, j, col
    cdef cnp.float64_t v
    with nogil:
        for i in range(n_rows):
            for k in range(indptr[i], indptr[i + 1]):
                col = indices[k]
                v = data[k]
                for j in range(n_out):
                    out[col, j] += v * grad[i, j]
    return out_arr
