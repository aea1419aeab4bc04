# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_reference.py`` (same signatures)."""
import numpy as np
from libc.math cimport exp, fabs, INFINITY
from scipy.linalg.cython_blas cimport dgemm

from . import _reference


cdef inline void _mm(bint ta, bint tb, int M, int N, int K, double* A, double* B, double* C) noexcept nogil:
    """Row-major ``C (M x N) = op(A) @ op(B)`` through column-major dgemm."""
    cdef char ca = 84 if ta else 78  # 'T' / 'N'
    cdef char cb = 84 if tb else 78
    cdef int lda = M if ta else K
    cdef int ldb = K if tb else N
    cdef int ldc = N
    cdef double one = 1.0, zero = 0.0
    dgemm(&cb, &ca, &N, &M, &K, &one, B, &ldb, A, &lda, &zero, C, &ldc)


def attention_forward(double[:, :, ::1] f1, double[:, :, ::1] f2,
                      double[:, :, ::1] x1, double[:, :, ::1] x2,
                      double[:, ::1] mask1, double[:, ::1] mask2):
    cdef Py_ssize_t B = f1.shape[0], L1 = f1.shape[1], L2 = f2.shape[1]
    cdef Py_ssize_t H = f1.shape[2], D = x1.shape[2]
    if B == 0 or L1 == 0 or L2 == 0 or H == 0 or D == 0:
        return _reference.attention_forward(*(np.asarray(a) for a in (f1, f2, x1, x2, mask1, mask2)))
    cdef Py_ssize_t b, i, j
    cdef double mx, tot, w
    p_row_a = np.zeros((B, L1, L2))
    p_col_a = np.zeros((B, L1, L2))
    e_a = np.empty((L1, L2))
    eps2_a = np.empty((B, L1, D))
    eps1_a = np.empty((B, L2, D))
    cdef double[:, :, ::1] p_row = p_row_a
    cdef double[:, :, ::1] p_col = p_col_a
    cdef double[:, ::1] e = e_a
    cdef double[:, :, ::1] eps2 = eps2_a
    cdef double[:, :, ::1] eps1 = eps1_a
    with nogil:
        for b in range(B):
            _mm(False, True, L1, L2, H, &f1[b, 0, 0], &f2[b, 0, 0], &e[0, 0])
            # normalize over sentence-2 positions
            for i in range(L1):
                mx = -INFINITY
                for j in range(L2):
                    if mask2[b, j] > 0.0 and e[i, j] > mx:
                        mx = e[i, j]
                tot = 0.0
                for j in range(L2):
                    if mask2[b, j] > 0.0:
                        w = exp(e[i, j] - mx)
                        p_row[b, i, j] = w
                        tot = tot + w
                for j in range(L2):
                    if mask2[b, j] > 0.0:
                        p_row[b, i, j] = p_row[b, i, j] / tot
            # normalize over sentence-1 positions
            for j in range(L2):
                mx = -INFINITY
                for i in range(L1):
                    if mask1[b, i] > 0.0 and e[i, j] > mx:
                        mx = e[i, j]
                tot = 0.0
                for i in range(L1):
                    if mask1[b, i] > 0.0:
                        w = exp(e[i, j] - mx)
                        p_col[b, i, j] = w
                        tot = tot + w
                for i in range(L1):
                    if mask1[b, i] > 0.0:
                        p_col[b, i, j] = p_col[b, i, j] / tot
            _mm(False, False, L1, D, L2, &p_row[b, 0, 0], &x2[b, 0, 0], &eps2[b, 0, 0])
            _mm(True, False, L2, D, L1, &p_col[b, 0, 0], &x1[b, 0, 0], &eps1[b, 0, 0])
    return p_row_a, p_col_a, eps2_a, eps1_a


def attention_backward(double[:, :, ::1] d_eps2, double[:, :, ::1] d_eps1,
                       double[:, :, ::1] p_row, double[:, :, ::1] p_col,
                       double[:, :, ::1] f1, double[:, :, ::1] f2,
                       double[:, :, ::1] x1, double[:, :, ::1] x2):
    cdef Py_ssize_t B = f1.shape[0], L1 = f1.shape[1], L2 = f2.shape[1]
    cdef Py_ssize_t H = f1.shape[2], D = x1.shape[2]
    if B == 0 or L1 == 0 or L2 == 0 or H == 0 or D == 0:
        return _reference.attention_backward(*(np.asarray(a) for a in (d_eps2, d_eps1, p_row, p_col, f1, f2, x1, x2)))
    cdef Py_ssize_t b, i, j
    cdef double acc
    d_f1_a = np.empty((B, L1, H))
    d_f2_a = np.empty((B, L2, H))
    d_x1_a = np.empty((B, L1, D))
    d_x2_a = np.empty((B, L2, D))
    dpr_a = np.empty((L1, L2))
    dpc_a = np.empty((L1, L2))
    de_a = np.empty((L1, L2))
    cdef double[:, :, ::1] d_f1 = d_f1_a
    cdef double[:, :, ::1] d_f2 = d_f2_a
    cdef double[:, :, ::1] d_x1 = d_x1_a
    cdef double[:, :, ::1] d_x2 = d_x2_a
    cdef double[:, ::1] dpr = dpr_a
    cdef double[:, ::1] dpc = dpc_a
    cdef double[:, ::1] de = de_a
    with nogil:
        for b in range(B):
            _mm(True, False, L2, D, L1, &p_row[b, 0, 0], &d_eps2[b, 0, 0], &d_x2[b, 0, 0])
            _mm(False, False, L1, D, L2, &p_col[b, 0, 0], &d_eps1[b, 0, 0], &d_x1[b, 0, 0])
            _mm(False, True, L1, L2, D, &d_eps2[b, 0, 0], &x2[b, 0, 0], &dpr[0, 0])
            _mm(False, True, L1, L2, D, &x1[b, 0, 0], &d_eps1[b, 0, 0], &dpc[0, 0])
            # softmax Jacobians of both normalizations
            for i in range(L1):
                acc = 0.0
                for j in range(L2):
                    acc = acc + p_row[b, i, j] * dpr[i, j]
                for j in range(L2):
                    de[i, j] = p_row[b, i, j] * (dpr[i, j] - acc)
            for j in range(L2):
                acc = 0.0
                for i in range(L1):
                    acc = acc + p_col[b, i, j] * dpc[i, j]
                for i in range(L1):
                    de[i, j] = de[i, j] + p_col[b, i, j] * (dpc[i, j] - acc)
            _mm(False, False, L1, H, L2, &de[0, 0], &f2[b, 0, 0], &d_f1[b, 0, 0])
            _mm(True, False, L2, H, L1, &de[0, 0], &f1[b, 0, 0], &d_f2[b, 0, 0])
    return d_f1_a, d_f2_a, d_x1_a, d_x2_a


def pool_forward(double[:, :, ::1] v, double[:, ::1] mask):
    cdef Py_ssize_t B = v.shape[0], L = v.shape[1], H = v.shape[2]
    cdef Py_ssize_t b, i, k
    cdef double x
    vsum_a = np.zeros((B, H))
    vmax_a = np.full((B, H), -np.inf)
    arg_a = np.zeros((B, H), dtype=np.int64)
    cdef double[:, ::1] vsum = vsum_a
    cdef double[:, ::1] vmax = vmax_a
    cdef long long[:, ::1] arg = arg_a
    with nogil:
        for b in range(B):
            for i in range(L):
                if mask[b, i] > 0.0:
                    for k in range(H):
                        x = v[b, i, k]
                        vsum[b, k] = vsum[b, k] + mask[b, i] * x
                        if x > vmax[b, k]:
                            vmax[b, k] = x
                            arg[b, k] = i
    return vsum_a, vmax_a, arg_a


def pool_backward(double[:, ::1] d_sum, double[:, ::1] d_max,
                  long long[:, ::1] argmax, double[:, ::1] mask):
    cdef Py_ssize_t B = mask.shape[0], L = mask.shape[1], H = d_sum.shape[1]
    cdef Py_ssize_t b, i, k
    dv_a = np.zeros((B, L, H))
    cdef double[:, :, ::1] dv = dv_a
    with nogil:
        for b in range(B):
            for i in range(L):
                if mask[b, i] > 0.0:
                    for k in range(H):
                        dv[b, i, k] = mask[b, i] * d_sum[b, k]
            for k in range(H):
                dv[b, argmax[b, k], k] = dv[b, argmax[b, k], k] + d_max[b, k]
    return dv_a


def cdf_l1(double[::1] u, double[::1] v):
    cdef Py_ssize_t n = u.shape[0], k
    cdef double cu = 0.0, cv = 0.0, tot = 0.0
    with nogil:
        for k in range(n):
            cu = cu + u[k]
            cv = cv + v[k]
            tot = tot + fabs(cu - cv)
    return tot
