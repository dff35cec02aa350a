# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics match ``adaptmit._pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def tally_shots(const double[:, ::1] uniforms, double p, int true_bit):
    cdef Py_ssize_t shots = uniforms.shape[0]
    cdef Py_ssize_t d = uniforms.shape[1]
    cdef Py_ssize_t i, j
    cdef long ones, code, bit
    cdef long errors = 0
    cdef long detections = 0
    cdef int b_hat
    hist_arr = np.zeros(1 << d, dtype=np.int64)
    cdef cnp.int64_t[::1] hist = hist_arr
    for i in range(shots):
        ones = 0
        code = 0
        for j in range(d):
            bit = true_bit ^ (1 if uniforms[i, j] < p else 0)
            ones += bit
            code = (code << 1) | bit
        b_hat = 1 if 2 * ones > d else 0
        if b_hat != true_bit:
            errors += 1
        if ones != 0 and ones != d:
            detections += 1
        hist[code] += 1
    return int(errors), int(detections), hist_arr


def bmu_batch(const double[:, ::1] weights, const double[:, ::1] data):
    cdef Py_ssize_t n = data.shape[0]
    cdef Py_ssize_t units = weights.shape[0]
    cdef Py_ssize_t dim = weights.shape[1]
    cdef Py_ssize_t i, u, j, best
    cdef double d2, diff, best_d2
    idx_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    for i in range(n):
        best = 0
        best_d2 = 0.0
        for u in range(units):
            d2 = 0.0
            for j in range(dim):
                diff = weights[u, j] - data[i, j]
                d2 += diff * diff
            if u == 0 or d2 < best_d2:
                best_d2 = d2
                best = u
        idx[i] = best
        dist[i] = sqrt(best_d2)
    return idx_arr, dist_arr


def som_train_steps(double[:, ::1] weights, const double[:, ::1] grid_d2,
                    const double[:, ::1] data, const cnp.int64_t[::1] order,
                    const double[::1] lr, const double[::1] radius):
    cdef Py_ssize_t steps = order.shape[0]
    cdef Py_ssize_t units = weights.shape[0]
    cdef Py_ssize_t dim = weights.shape[1]
    cdef Py_ssize_t k, u, j, b, row
    cdef double d2, diff, best_d2, r, scale
    for k in range(steps):
        row = order[k]
        b = 0
        best_d2 = 0.0
        for u in range(units):
            d2 = 0.0
            for j in range(dim):
                diff = data[row, j] - weights[u, j]
                d2 += diff * diff
            if u == 0 or d2 < best_d2:
                best_d2 = d2
                b = u
        r = radius[k]
        for u in range(units):
            scale = lr[k] * exp(-grid_d2[b, u] / (2.0 * r * r))
            for j in range(dim):
                weights[u, j] += scale * (data[row, j] - weights[u, j])
