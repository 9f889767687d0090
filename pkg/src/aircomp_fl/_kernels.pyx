# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Pure-numpy equivalents live in _kernels_py."""
import numpy as np
from libc.math cimport sqrt, INFINITY


def ratio_grid_search(theta, double c, qd, budget, bint sum_mode, ub, Py_ssize_t resolution):
    """Best grid direction for (p'Theta p + c) / (1'p)^2, each point scaled to the boundary.

    Grid: ``ub[k] * i / (resolution - 1)`` per axis, all-zero point skipped,
    axis 0 varying fastest. Supports up to three devices.
    Returns (best grid point before scaling, scale factor, objective).
    """
    cdef Py_ssize_t K = len(theta)
    if K < 1 or K > 3:
        raise ValueError("compiled grid search supports 1 <= K <= 3")
    cdef Py_ssize_t R = resolution
    # pad to three axes; padded axes hold the single value 0
    cdef Py_ssize_t[3] n
    cdef double[:, ::1] v = np.zeros((3, R))
    cdef double[:, ::1] tv = np.zeros((3, R))    # theta * p^2
    cdef double[:, ::1] qv = np.zeros((3, R))    # q * p^2
    cdef double[:, ::1] rv = np.full((3, R), INFINITY)  # budget / (q p^2), individual mode
    cdef Py_ssize_t k, i0, i1, i2
    cdef double x, tot = budget[0]
    for k in range(3):
        n[k] = R if k < K else 1
        for i0 in range(n[k]):
            if k < K:
                x = ub[k] * i0 / (R - 1)
                v[k, i0] = x
                tv[k, i0] = theta[k] * x * x
                qv[k, i0] = qd[k] * x * x
                if x > 0 and not sum_mode:
                    rv[k, i0] = budget[k] / (qd[k] * x * x)

    cdef double best = INFINITY, best_lam2 = 0.0, obj, lam2, den, num
    cdef double s2, t2, q2, r2, s1, t1, q1, r1
    cdef Py_ssize_t b0 = 0, b1 = 0, b2 = 0
    with nogil:
        for i2 in range(n[2]):
            s2 = v[2, i2]; t2 = tv[2, i2]; q2 = qv[2, i2]; r2 = rv[2, i2]
            for i1 in range(n[1]):
                s1 = s2 + v[1, i1]; t1 = t2 + tv[1, i1]; q1 = q2 + qv[1, i1]
                r1 = r2 if r2 < rv[1, i1] else rv[1, i1]
                for i0 in range(n[0]):
                    den = s1 + v[0, i0]
                    if den <= 0:
                        continue
                    num = t1 + tv[0, i0]
                    if sum_mode:
                        lam2 = tot / (q1 + qv[0, i0])
                    else:
                        lam2 = r1 if r1 < rv[0, i0] else rv[0, i0]
                    obj = (num + c / lam2) / (den * den)
                    if obj < best:
                        best = obj
                        best_lam2 = lam2
                        b0 = i0; b1 = i1; b2 = i2
    idx = (b0, b1, b2)
    point = np.array([v[k, idx[k]] for k in range(K)])
    return point, sqrt(best_lam2), best
