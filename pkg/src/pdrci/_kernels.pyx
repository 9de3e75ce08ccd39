# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops; signatures mirror ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def max_violation(F, g, X):
    cdef double[:, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], m = Fv.shape[0], d = Fv.shape[1]
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef Py_ssize_t p, r, c
    cdef double best, acc
    with nogil:
        for p in range(n):
            best = -1e300
            for r in range(m):
                acc = -gv[r]
                for c in range(d):
                    acc = acc + Fv[r, c] * Xv[p, c]
                if acc > best:
                    best = acc
            ov[p] = best
    return out


def count_inside(F, g, X, double tol):
    cdef double[:, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], m = Fv.shape[0], d = Fv.shape[1]
    cdef Py_ssize_t p, r, c, hits = 0
    cdef double acc
    cdef bint inside
    with nogil:
        for p in range(n):
            inside = True
            for r in range(m):
                acc = -gv[r]
                for c in range(d):
                    acc = acc + Fv[r, c] * Xv[p, c]
                if acc > tol:
                    inside = False
                    break
            if inside:
                hits += 1
    return int(hits)


def rollout_lpv(A, B, E, C, D, K, x0, xi, w):
    cdef double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef double[:, :, ::1] Ev = np.ascontiguousarray(E, dtype=np.float64)
    cdef double[:, :, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef double[:, :, ::1] Dv = np.ascontiguousarray(D, dtype=np.float64)
    cdef double[:, :, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef double[:, ::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, :, ::1] xiv = np.ascontiguousarray(xi, dtype=np.float64)
    cdef double[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t R = xiv.shape[0], T = xiv.shape[1], N = xiv.shape[2]
    cdef Py_ssize_t nx = Av.shape[1], nu = Bv.shape[2], nw = Ev.shape[2], nz = Cv.shape[1]
    Xo = np.empty((R, T + 1, nx))
    costo = np.zeros((R, T + 1))
    cdef double[:, :, ::1] Xov = Xo
    cdef double[:, ::1] cv = costo
    cdef double[::1] x = np.empty(nx)
    cdef double[::1] xn = np.empty(nx)
    cdef double[::1] u = np.empty(nu)
    cdef Py_ssize_t r, t, k, i, j
    cdef double s, acc, zz, zi
    with nogil:
        for r in range(R):
            for i in range(nx):
                x[i] = x0v[r, i]
                Xov[r, 0, i] = x[i]
            for t in range(T):
                # u = K(xi) x
                for i in range(nu):
                    acc = 0.0
                    for k in range(N):
                        s = xiv[r, t, k]
                        if s == 0.0:
                            continue
                        for j in range(nx):
                            acc = acc + s * Kv[k, i, j] * x[j]
                    u[i] = acc
                # z = C(xi) x + D(xi) u
                zz = 0.0
                for i in range(nz):
                    zi = 0.0
                    for k in range(N):
                        s = xiv[r, t, k]
                        if s == 0.0:
                            continue
                        for j in range(nx):
                            zi = zi + s * Cv[k, i, j] * x[j]
                        for j in range(nu):
                            zi = zi + s * Dv[k, i, j] * u[j]
                    zz = zz + zi * zi
                cv[r, t + 1] = cv[r, t] + zz
                for i in range(nx):
                    acc = 0.0
                    for k in range(N):
                        s = xiv[r, t, k]
                        if s == 0.0:
                            continue
                        for j in range(nx):
                            acc = acc + s * Av[k, i, j] * x[j]
                        for j in range(nu):
                            acc = acc + s * Bv[k, i, j] * u[j]
                        for j in range(nw):
                            acc = acc + s * Ev[k, i, j] * wv[r, t, j]
                    xn[i] = acc
                for i in range(nx):
                    x[i] = xn[i]
                    Xov[r, t + 1, i] = x[i]
    return Xo, costo
