# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Gauss-Seidel fast sweeping and greedy knapsack fill.

Both functions mirror ``_pykernels`` operation for operation, so the two
backends return bit-identical results.
"""
from libc.math cimport sqrt, fabs, INFINITY


cdef inline double _eikonal_update(double a, double b, double c, double h) nogil:
    # sort a <= b <= c
    cdef double t
    if a > b:
        t = a; a = b; b = t
    if b > c:
        t = b; b = c; c = t
    if a > b:
        t = a; a = b; b = t
    if a == INFINITY:
        return INFINITY
    cdef double u = a + h
    if u <= b:
        return u
    u = 0.5 * (a + b + sqrt(2.0 * h * h - (a - b) * (a - b)))
    if u <= c:
        return u
    cdef double s = a + b + c
    cdef double ss = a * a + b * b + c * c
    return (s + sqrt(s * s - 3.0 * (ss - h * h))) / 3.0


cdef inline double _axis_min(double[:, :, ::1] phi, Py_ssize_t i, Py_ssize_t j,
                             Py_ssize_t k, int axis, Py_ssize_t n) nogil:
    cdef double lo = INFINITY
    cdef double hi = INFINITY
    if axis == 0:
        if i > 0:
            lo = phi[i - 1, j, k]
        if i < n - 1:
            hi = phi[i + 1, j, k]
    elif axis == 1:
        if j > 0:
            lo = phi[i, j - 1, k]
        if j < n - 1:
            hi = phi[i, j + 1, k]
    else:
        if k > 0:
            lo = phi[i, j, k - 1]
        if k < n - 1:
            hi = phi[i, j, k + 1]
    return lo if lo < hi else hi


def fast_sweep(double[:, :, ::1] phi, unsigned char[:, :, ::1] frozen,
               double h, int max_iter, double tol):
    """Run sweeps in place until the max update drops below ``tol``.

    Returns the number of full iterations (each iteration visits every
    sweep ordering once).
    """
    cdef Py_ssize_t n0 = phi.shape[0], n1 = phi.shape[1], n2 = phi.shape[2]
    cdef Py_ssize_t i, j, k, ii, jj, kk
    cdef int it, s, iters = 0
    cdef double a, b, c, new, old, change, diff
    with nogil:
        for it in range(max_iter):
            change = 0.0
            for s in range(8):
                if (s & 1) and n0 == 1:
                    continue
                if (s & 2) and n1 == 1:
                    continue
                if (s & 4) and n2 == 1:
                    continue
                for ii in range(n0):
                    i = n0 - 1 - ii if (s & 1) else ii
                    for jj in range(n1):
                        j = n1 - 1 - jj if (s & 2) else jj
                        for kk in range(n2):
                            k = n2 - 1 - kk if (s & 4) else kk
                            if frozen[i, j, k]:
                                continue
                            a = _axis_min(phi, i, j, k, 0, n0)
                            b = _axis_min(phi, i, j, k, 1, n1)
                            c = _axis_min(phi, i, j, k, 2, n2)
                            new = _eikonal_update(a, b, c, h)
                            old = phi[i, j, k]
                            if new < old:
                                phi[i, j, k] = new
                                if old == INFINITY:
                                    diff = INFINITY
                                else:
                                    diff = old - new
                                if diff > change:
                                    change = diff
            iters = it + 1
            if change < tol:
                break
    return iters


def greedy_fill(long[::1] order, double[::1] cost, double capacity, double[::1] xi):
    """Fill ``xi`` greedily along ``order``; return (marginal position, leftover).

    The marginal position is the index into ``order`` of the first item not
    taken in full, or -1 when every item fits.
    """
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t pos, idx
    cdef double c
    cdef Py_ssize_t marginal = -1
    for pos in range(n):
        idx = order[pos]
        c = cost[idx]
        if c <= capacity:
            xi[idx] = 1.0
            capacity = capacity - c
        else:
            xi[idx] = capacity / c
            capacity = 0.0
            marginal = pos
            break
    return marginal, capacity
