# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: cyclic Jacobi eigensolver and ranked-list AP scan."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def jacobi_eigh(double[:, ::1] a, double tol, int max_sweeps):
    """Cyclic-by-row Jacobi on a copy of ``a``.

    Returns ``(diag, V, sweeps)``; ``sweeps == -1`` if not converged.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j, k, p, q
    cdef double[:, ::1] A = np.array(a, dtype=np.float64, copy=True)
    cdef double[:, ::1] V = np.eye(n, dtype=np.float64)
    cdef double off, fro, apq, theta, t, c, s, akp, akq
    cdef int sweep

    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += A[i, j] * A[i, j]
    fro = sqrt(fro)

    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += A[i, j] * A[i, j]
        off = sqrt(2.0 * off)
        if off <= tol * fro or off == 0.0:
            return np.asarray(A).diagonal().copy(), np.asarray(V), sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if fabs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    akp = A[p, k]
                    akq = A[q, k]
                    A[p, k] = c * akp - s * akq
                    A[q, k] = s * akp + c * akq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    akp = V[k, p]
                    akq = V[k, q]
                    V[k, p] = c * akp - s * akq
                    V[k, q] = s * akp + c * akq
    return np.asarray(A).diagonal().copy(), np.asarray(V), -1


def ranked_ap(cnp.int64_t[:, ::1] order,
              cnp.int64_t[::1] q_ids, cnp.int64_t[::1] q_cams,
              cnp.int64_t[::1] g_ids, cnp.int64_t[::1] g_cams):
    """Scan each query's ranked gallery; return (ap, top1_hit, n_relevant)."""
    cdef Py_ssize_t nq = order.shape[0]
    cdef Py_ssize_t ng = order.shape[1]
    cdef Py_ssize_t i, r, g, rank
    cdef double acc
    cdef long hits
    cdef int first_seen
    ap_arr = np.zeros(nq, dtype=np.float64)
    top_arr = np.zeros(nq, dtype=np.int8)
    nrel_arr = np.zeros(nq, dtype=np.int64)
    cdef double[::1] ap = ap_arr
    cdef cnp.int8_t[::1] top = top_arr
    cdef cnp.int64_t[::1] nrel = nrel_arr

    for i in range(nq):
        acc = 0.0
        hits = 0
        rank = 0
        first_seen = 0
        for r in range(ng):
            g = order[i, r]
            if g_ids[g] == q_ids[i]:
                if g_cams[g] == q_cams[i]:
                    continue
                rank += 1
                hits += 1
                acc += <double>hits / <double>rank
                if not first_seen:
                    top[i] = 1
                    first_seen = 1
            else:
                rank += 1
                first_seen = 1
        nrel[i] = hits
        if hits > 0:
            ap[i] = acc / <double>hits
    return ap_arr, top_arr, nrel_arr
