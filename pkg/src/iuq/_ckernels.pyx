# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the numeric hot loops; see ``_pykernels`` for the reference."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, NAN

cnp.import_array()

NAME = "cython"


# Response lengths are tens of claims, so the weight kernels walk the Python
# sequence directly; a numpy round trip would cost more than the loop.

def exp_weights(unfaith, double lam):
    cdef double decay = exp(-lam), acc = 0.0, u
    cdef list out = []
    for u in unfaith:
        acc = acc * decay + u
        out.append(acc)
    return out


def cumulative_weights(unfaith):
    cdef double acc = 0.0, u
    cdef list out = []
    for u in unfaith:
        acc += u
        out.append(acc)
    return out


def linear_weights(unfaith, double m, double b):
    cdef double acc = 0.0, w, u
    cdef Py_ssize_t j = 0
    cdef list out = []
    for u in unfaith:
        j += 1
        w = m * j + b
        if w > 0.0:
            acc += u * w
        out.append(acc)
    return out


cdef _sorted(scores, labels, bint descending):
    s = np.ascontiguousarray(scores, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64) != 0
    order = np.argsort(-s if descending else s, kind="stable")
    return np.ascontiguousarray(s[order]), np.ascontiguousarray(y[order].astype(np.int64))


def mann_whitney_auc(scores, labels):
    s_arr, y_arr = _sorted(scores, labels, False)
    cdef double[::1] s = s_arr
    cdef long long[::1] y = y_arr
    cdef Py_ssize_t n = s.shape[0], i = 0, j
    cdef long long pos, neg, n_pos = 0, n_neg, twice = 0, neg_below = 0
    for i in range(n):
        n_pos += y[i]
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return NAN
    i = 0
    while i < n:
        j = i
        pos = 0
        while j < n and s[j] == s[i]:
            pos += y[j]
            j += 1
        neg = (j - i) - pos
        twice += 2 * pos * neg_below + pos * neg
        neg_below += neg
        i = j
    return (twice / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels):
    s_arr, y_arr = _sorted(scores, labels, True)
    cdef double[::1] s = s_arr
    cdef long long[::1] y = y_arr
    cdef Py_ssize_t n = s.shape[0], i = 0, j
    cdef long long pos, tp = 0, seen = 0, n_pos = 0
    cdef double total = 0.0
    for i in range(n):
        n_pos += y[i]
    if n_pos == 0:
        return NAN
    i = 0
    while i < n:
        j = i
        pos = 0
        while j < n and s[j] == s[i]:
            pos += y[j]
            j += 1
        tp += pos
        seen += j - i
        if pos:
            total += pos * (<double>tp / seen)
        i = j
    return total / n_pos


def closeness(indptr_in, indices_in):
    cdef long long[::1] indptr = np.ascontiguousarray(indptr_in, dtype=np.int64)
    cdef long long[::1] indices = np.ascontiguousarray(indices_in, dtype=np.int64)
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out = np.zeros(max(n, 0), dtype=np.float64)
    if n < 2:
        return out.tolist()
    cdef double[::1] o = out
    dist_arr = np.empty(n, dtype=np.int64)
    queue_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] dist = dist_arr
    cdef long long[::1] queue = queue_arr
    cdef Py_ssize_t src, head, tail, v, u, k
    cdef long long total, reach
    for src in range(n):
        dist[:] = -1
        dist[src] = 0
        queue[0] = src
        head = 0
        tail = 1
        total = 0
        reach = 1
        while head < tail:
            v = queue[head]
            head += 1
            for k in range(indptr[v], indptr[v + 1]):
                u = indices[k]
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    total += dist[u]
                    reach += 1
                    queue[tail] = u
                    tail += 1
        if total > 0:
            o[src] = (<double>(reach - 1) / (n - 1)) * (<double>(reach - 1) / total)
    return out.tolist()
