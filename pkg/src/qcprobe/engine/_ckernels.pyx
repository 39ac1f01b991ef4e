# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (same contracts as ``_pykernels``).

Convolutions build im2col rows in small cache-resident blocks and hand each
block to BLAS dgemm; narrow layers (few output channels) use a direct loop.
All reductions run in a fixed order, so results are deterministic.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "cython"

# im2col block budget in doubles (~512 KiB)
cdef Py_ssize_t BLOCK_DOUBLES = 65536
cdef int DIRECT_MAX_OUT = 3


cdef inline Py_ssize_t _block_rows(Py_ssize_t ck, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t r = BLOCK_DOUBLES // ck
    if r < 16:
        r = 16
    if r > n:
        r = n
    return r


cdef void _fill_cols(const double[:, ::1] xp, double* cols, Py_ssize_t l0, Py_ssize_t rows,
                     Py_ssize_t c, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t r, ci, j
    cdef double* row
    for r in range(rows):
        row = cols + r * c * k
        for ci in range(c):
            for j in range(k):
                row[ci * k + j] = xp[ci, l0 + r + j]


cdef void _conv_direct(const double[:, ::1] xp, const double[:, :, ::1] w,
                       double[:, ::1] out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t o, ci, j, l
    cdef Py_ssize_t nout = w.shape[0], c = w.shape[1], k = w.shape[2]
    cdef double wv
    cdef double* orow
    cdef const double* xrow
    for o in range(nout):
        orow = &out[o, 0]
        for ci in range(c):
            for j in range(k):
                wv = w[o, ci, j]
                xrow = &xp[ci, j]
                for l in range(n):
                    orow[l] += wv * xrow[l]


def conv1d_forward(x, w, b, Py_ssize_t pad_left):
    """Same-length cross-correlation: y[b,o,l] = sum_{c,j} w[o,c,j] x[b,c,l+j-pad_left] + b[o]."""
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t bs = xv.shape[0], c = xv.shape[1], n = xv.shape[2]
    cdef Py_ssize_t nout = wv.shape[0], k = wv.shape[2]
    cdef Py_ssize_t ck = c * k
    y = np.empty((bs, nout, n), dtype=np.float64)
    cdef double[:, :, ::1] yv = y
    xp_arr = np.zeros((c, n + k - 1), dtype=np.float64)
    cdef double[:, ::1] xp = xp_arr
    cdef Py_ssize_t rows = _block_rows(ck, n)
    cols_arr = np.empty(rows * ck, dtype=np.float64)
    cdef double[::1] cols = cols_arr
    cdef Py_ssize_t bi, ci, l, l0, r, o
    cdef int m_, n_, k_, lda, ldb, ldc
    cdef double one = 1.0, zero = 0.0
    cdef char tr = b'T', nt = b'N'
    with nogil:
        for bi in range(bs):
            for ci in range(c):
                for l in range(n):
                    xp[ci, pad_left + l] = xv[bi, ci, l]
            if nout <= DIRECT_MAX_OUT:
                memset(&yv[bi, 0, 0], 0, nout * n * sizeof(double))
                _conv_direct(xp, wv, yv[bi], n)
            else:
                l0 = 0
                while l0 < n:
                    r = rows if l0 + rows <= n else n - l0
                    _fill_cols(xp, &cols[0], l0, r, c, k)
                    # C(r x nout, col-major, ld n) = cols(r x ck) . W^T
                    m_ = <int>r
                    n_ = <int>nout
                    k_ = <int>ck
                    lda = <int>ck
                    ldb = <int>ck
                    ldc = <int>n
                    dgemm(&tr, &nt, &m_, &n_, &k_, &one, &cols[0], &lda,
                          <double*>&wv[0, 0, 0], &ldb, &zero, &yv[bi, 0, l0], &ldc)
                    l0 += r
            for o in range(nout):
                for l in range(n):
                    yv[bi, o, l] += bv[o]
    return y


def conv1d_backward(dy, x, w, Py_ssize_t pad_left, need_dx=True):
    cdef const double[:, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t bs = xv.shape[0], c = xv.shape[1], n = xv.shape[2]
    cdef Py_ssize_t nout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ck = c * k
    dw = np.zeros((nout, c, k), dtype=np.float64)
    db = np.zeros(nout, dtype=np.float64)
    cdef double[:, :, ::1] dwv = dw
    cdef double[::1] dbv = db
    xp_arr = np.zeros((c, n + k - 1), dtype=np.float64)
    cdef double[:, ::1] xp = xp_arr
    cdef Py_ssize_t rows = _block_rows(ck, n)
    cols_arr = np.empty(rows * ck, dtype=np.float64)
    cdef double[::1] cols = cols_arr
    cdef Py_ssize_t bi, ci, l, l0, r, o, j
    cdef double acc
    cdef int m_, n_, k_, lda, ldb, ldc
    cdef double one = 1.0
    cdef char nt = b'N'
    with nogil:
        for bi in range(bs):
            for o in range(nout):
                acc = 0.0
                for l in range(n):
                    acc = acc + dyv[bi, o, l]
                dbv[o] += acc
            for ci in range(c):
                for l in range(n):
                    xp[ci, pad_left + l] = xv[bi, ci, l]
            if nout <= DIRECT_MAX_OUT:
                # dw[o,c,j] += sum_l dy[o,l] xp[c,l+j]; taps innermost so it vectorizes
                for o in range(nout):
                    for ci in range(c):
                        for l in range(n):
                            acc = dyv[bi, o, l]
                            for j in range(k):
                                dwv[o, ci, j] += acc * xp[ci, l + j]
            else:
                l0 = 0
                while l0 < n:
                    r = rows if l0 + rows <= n else n - l0
                    _fill_cols(xp, &cols[0], l0, r, c, k)
                    # dW^T(ck x nout) += cols^T(ck x r) . dY^T(r x nout)
                    m_ = <int>ck
                    n_ = <int>nout
                    k_ = <int>r
                    lda = <int>ck
                    ldb = <int>n
                    ldc = <int>ck
                    dgemm(&nt, &nt, &m_, &n_, &k_, &one, &cols[0], &lda,
                          <double*>&dyv[bi, 0, l0], &ldb, &one, &dwv[0, 0, 0], &ldc)
                    l0 += r
    dx = None
    if need_dx:
        wt = np.ascontiguousarray(np.asarray(w).transpose(1, 0, 2)[:, :, ::-1])
        dx = conv1d_forward(dy, wt, np.zeros(c), k - 1 - pad_left)
    return dx, dw, db


def maxpool2_forward(x):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t bs = xv.shape[0], c = xv.shape[1], half = xv.shape[2] // 2
    y = np.empty((bs, c, half), dtype=np.float64)
    idx = np.empty((bs, c, half), dtype=np.int8)
    cdef double[:, :, ::1] yv = y
    cdef signed char[:, :, ::1] iv = idx
    cdef Py_ssize_t bi, ci, i
    cdef double a, b
    with nogil:
        for bi in range(bs):
            for ci in range(c):
                for i in range(half):
                    a = xv[bi, ci, 2 * i]
                    b = xv[bi, ci, 2 * i + 1]
                    if b > a:
                        yv[bi, ci, i] = b
                        iv[bi, ci, i] = 1
                    else:
                        yv[bi, ci, i] = a
                        iv[bi, ci, i] = 0
    return y, idx


def maxpool2_backward(dy, idx):
    cdef const double[:, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef const signed char[:, :, ::1] iv = np.ascontiguousarray(idx, dtype=np.int8)
    cdef Py_ssize_t bs = dyv.shape[0], c = dyv.shape[1], half = dyv.shape[2]
    dx = np.zeros((bs, c, 2 * half), dtype=np.float64)
    cdef double[:, :, ::1] dxv = dx
    cdef Py_ssize_t bi, ci, i
    with nogil:
        for bi in range(bs):
            for ci in range(c):
                for i in range(half):
                    dxv[bi, ci, 2 * i + iv[bi, ci, i]] = dyv[bi, ci, i]
    return dx


def upsample2_forward(x):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t bs = xv.shape[0], c = xv.shape[1], n = xv.shape[2]
    y = np.empty((bs, c, 2 * n), dtype=np.float64)
    cdef double[:, :, ::1] yv = y
    cdef Py_ssize_t bi, ci, i
    with nogil:
        for bi in range(bs):
            for ci in range(c):
                for i in range(n):
                    yv[bi, ci, 2 * i] = xv[bi, ci, i]
                    yv[bi, ci, 2 * i + 1] = xv[bi, ci, i]
    return y


def upsample2_backward(dy):
    cdef const double[:, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t bs = dyv.shape[0], c = dyv.shape[1], half = dyv.shape[2] // 2
    dx = np.empty((bs, c, half), dtype=np.float64)
    cdef double[:, :, ::1] dxv = dx
    cdef Py_ssize_t bi, ci, i
    with nogil:
        for bi in range(bs):
            for ci in range(c):
                for i in range(half):
                    dxv[bi, ci, i] = dyv[bi, ci, 2 * i] + dyv[bi, ci, 2 * i + 1]
    return dx
