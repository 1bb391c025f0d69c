# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_kernels_py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


cdef inline void _nearest(const double[:, ::1] z, Py_ssize_t i,
                          double[:, ::1] c, Py_ssize_t k,
                          Py_ssize_t* label, int* flip, double* dist) noexcept nogil:
    cdef Py_ssize_t j
    cdef double t, nau, nbv, nav, nbu, direct, flipped, best
    cdef double a0 = z[i, 0], a1 = z[i, 1], a2 = z[i, 2]
    cdef double b0 = z[i, 3], b1 = z[i, 4], b2 = z[i, 5]
    label[0] = 0
    flip[0] = 0
    dist[0] = 0.0
    for j in range(k):
        t = a0 - c[j, 0]; nau = t * t
        t = a1 - c[j, 1]; nau = nau + t * t
        t = a2 - c[j, 2]; nau = nau + t * t
        t = b0 - c[j, 3]; nbv = t * t
        t = b1 - c[j, 4]; nbv = nbv + t * t
        t = b2 - c[j, 5]; nbv = nbv + t * t
        t = a0 - c[j, 3]; nav = t * t
        t = a1 - c[j, 4]; nav = nav + t * t
        t = a2 - c[j, 5]; nav = nav + t * t
        t = b0 - c[j, 0]; nbu = t * t
        t = b1 - c[j, 1]; nbu = nbu + t * t
        t = b2 - c[j, 2]; nbu = nbu + t * t
        direct = nau + nbv
        flipped = nav + nbu
        if flipped < direct:
            best = flipped
        else:
            best = direct
        if j == 0 or best < dist[0]:
            dist[0] = best
            label[0] = j
            flip[0] = 1 if flipped < direct else 0


def flip_assign(const double[:, ::1] z, double[:, ::1] centroids):
    cdef Py_ssize_t m = z.shape[0], k = centroids.shape[0], i, lab
    cdef int fl
    cdef double d
    labels = np.empty(m, dtype=np.int64)
    flipped = np.empty(m, dtype=np.uint8)
    dist = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[::1] lv = labels
    cdef unsigned char[::1] fv = flipped
    cdef double[::1] dv = dist
    with nogil:
        for i in range(m):
            _nearest(z, i, centroids, k, &lab, &fl, &d)
            lv[i] = lab
            fv[i] = fl
            dv[i] = d
    return labels, flipped, dist


def minibatch_run(const double[:, ::1] z, double[:, ::1] centroids,
                  cnp.int64_t[::1] counts, const cnp.int64_t[:, ::1] batches):
    cdef Py_ssize_t n_iter = batches.shape[0], bsize = batches.shape[1]
    cdef Py_ssize_t k = centroids.shape[0]
    cdef Py_ssize_t it, s, idx, j, d
    cdef int fl
    cdef double dist, eta, keep
    cdef double x[6]
    lab_buf = np.empty(bsize, dtype=np.int64)
    flip_buf = np.empty(bsize, dtype=np.intc)
    cdef cnp.int64_t[::1] labs = lab_buf
    cdef int[::1] flips = flip_buf
    cdef Py_ssize_t lab
    with nogil:
        for it in range(n_iter):
            for s in range(bsize):
                _nearest(z, batches[it, s], centroids, k, &lab, &fl, &dist)
                labs[s] = lab
                flips[s] = fl
            for s in range(bsize):
                idx = batches[it, s]
                j = labs[s]
                if flips[s]:
                    for d in range(3):
                        x[d] = z[idx, d + 3]
                        x[d + 3] = z[idx, d]
                else:
                    for d in range(6):
                        x[d] = z[idx, d]
                counts[j] += 1
                eta = 1.0 / <double>counts[j]
                keep = 1.0 - eta
                for d in range(6):
                    centroids[j, d] = keep * centroids[j, d] + eta * x[d]


def quickbundles(const double[:, :, ::1] tracks, double threshold):
    cdef Py_ssize_t m = tracks.shape[0], nq = tracks.shape[1]
    cdef Py_ssize_t i, c, j, chosen, n_clusters = 0, cap = m if m > 0 else 1
    cdef double direct, flipped, t, s, size, cx, cy, cz
    cdef bint use_flip
    labels = np.empty(m, dtype=np.int64)
    sums_arr = np.zeros((cap, nq, 3))
    sizes_arr = np.zeros(cap)
    cdef cnp.int64_t[::1] lv = labels
    cdef double[:, :, ::1] sums = sums_arr
    cdef double[::1] sizes = sizes_arr
    with nogil:
        for i in range(m):
            chosen = -1
            use_flip = False
            for c in range(n_clusters):
                size = sizes[c]
                direct = 0.0
                flipped = 0.0
                for j in range(nq):
                    cx = sums[c, j, 0] / size
                    cy = sums[c, j, 1] / size
                    cz = sums[c, j, 2] / size
                    t = cx - tracks[i, j, 0]; s = t * t
                    t = cy - tracks[i, j, 1]; s = s + t * t
                    t = cz - tracks[i, j, 2]; s = s + t * t
                    direct = direct + sqrt(s)
                    t = cx - tracks[i, nq - 1 - j, 0]; s = t * t
                    t = cy - tracks[i, nq - 1 - j, 1]; s = s + t * t
                    t = cz - tracks[i, nq - 1 - j, 2]; s = s + t * t
                    flipped = flipped + sqrt(s)
                direct = direct / nq
                flipped = flipped / nq
                if (flipped if flipped < direct else direct) <= threshold:
                    chosen = c
                    use_flip = flipped < direct
                    break
            if chosen < 0:
                chosen = n_clusters
                n_clusters += 1
                use_flip = False
            for j in range(nq):
                if use_flip:
                    sums[chosen, j, 0] += tracks[i, nq - 1 - j, 0]
                    sums[chosen, j, 1] += tracks[i, nq - 1 - j, 1]
                    sums[chosen, j, 2] += tracks[i, nq - 1 - j, 2]
                else:
                    sums[chosen, j, 0] += tracks[i, j, 0]
                    sums[chosen, j, 1] += tracks[i, j, 1]
                    sums[chosen, j, 2] += tracks[i, j, 2]
            sizes[chosen] += 1.0
            lv[i] = chosen
    return labels


cdef double _full_sweep(const double[:, ::1] g, double[::1] grad, double[::1] beta,
                        double l1, double l2, const unsigned char[::1] mask) noexcept nogil:
    cdef Py_ssize_t p = beta.shape[0], j, r
    cdef double old, new, rho, gjj, delta, biggest = 0.0
    for j in range(p):
        if not mask[j]:
            continue
        old = beta[j]
        gjj = g[j, j]
        rho = grad[j] + gjj * old
        if rho > l1:
            new = (rho - l1) / (gjj + l2)
        elif rho < -l1:
            new = (rho + l1) / (gjj + l2)
        else:
            new = 0.0
        if new != old:
            delta = new - old
            for r in range(p):
                grad[r] = grad[r] - g[r, j] * delta
            beta[j] = new
            if fabs(delta) > biggest:
                biggest = fabs(delta)
    return biggest


cdef double _active_sweep(const double[:, ::1] g, double[::1] grad, double[::1] beta,
                          double l1, double l2, Py_ssize_t[::1] act,
                          Py_ssize_t na) noexcept nogil:
    # gradient entries are kept current for the active coordinates only
    cdef Py_ssize_t a, b, j
    cdef double old, new, rho, gjj, delta, biggest = 0.0
    for a in range(na):
        j = act[a]
        old = beta[j]
        gjj = g[j, j]
        rho = grad[j] + gjj * old
        if rho > l1:
            new = (rho - l1) / (gjj + l2)
        elif rho < -l1:
            new = (rho + l1) / (gjj + l2)
        else:
            new = 0.0
        if new != old:
            delta = new - old
            for b in range(na):
                grad[act[b]] = grad[act[b]] - g[act[b], j] * delta
            beta[j] = new
            if fabs(delta) > biggest:
                biggest = fabs(delta)
    return biggest


cdef void _refresh(const double[:, ::1] g, const double[::1] corr, double[::1] grad,
                   double[::1] beta) noexcept nogil:
    cdef Py_ssize_t p = beta.shape[0], j, r
    cdef double acc
    for j in range(p):
        acc = 0.0
        for r in range(p):
            if beta[r] != 0.0:
                acc = acc + g[j, r] * beta[r]
        grad[j] = corr[j] - acc


def cd_gram(const double[:, ::1] gram, const double[::1] corr, double[::1] beta,
            double l1, double l2, double tol, long max_cycles,
            const unsigned char[::1] usable):
    cdef Py_ssize_t p = corr.shape[0], j, na
    cdef long cycles = 0, result = -1
    cdef double change
    grad_arr = np.empty(p)
    act_arr = np.empty(p, dtype=np.intp)
    cdef double[::1] grad = grad_arr
    cdef Py_ssize_t[::1] act = act_arr
    with nogil:
        _refresh(gram, corr, grad, beta)
        while cycles < max_cycles:
            change = _full_sweep(gram, grad, beta, l1, l2, usable)
            cycles += 1
            if change < tol:
                result = cycles
                break
            na = 0
            for j in range(p):
                if usable[j] and beta[j] != 0.0:
                    act[na] = j
                    na += 1
            while cycles < max_cycles:
                change = _active_sweep(gram, grad, beta, l1, l2, act, na)
                cycles += 1
                if change < tol:
                    break
            _refresh(gram, corr, grad, beta)
    return result
