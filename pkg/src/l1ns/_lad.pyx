# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled least-absolute-deviations kernel.

Mehrotra predictor-corrector on the LP pair

    primal:  min 1'u + 1'w   s.t.  Bv + u - w = q,  u, w >= 0
    dual:    max q'y         s.t.  B'y = 0,  -1 <= y <= 1

with a vertex polish (interpolate the r smallest residuals) once the
duality gap is small. Mirrors ``_lad_py`` step for step.
"""

import numpy as np

from libc.math cimport fabs, sqrt
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cdef double STEP_FRACTION = 0.9995
cdef double FEAS_TOL = 1e-10
cdef double POLISH_START = 1e-3


cdef inline double _max_step(const double* x, const double* dx, int m) noexcept nogil:
    cdef double a = 1e300
    cdef int i
    for i in range(m):
        if dx[i] < 0.0 and -x[i] / dx[i] < a:
            a = -x[i] / dx[i]
    return a


cdef int _cholesky(double* M, int r) noexcept nogil:
    """In-place lower Cholesky of a row-major r x r matrix. Returns 0 on success."""
    cdef int i, j, k
    cdef double s, t
    for j in range(r):
        s = M[j * r + j]
        for k in range(j):
            s -= M[j * r + k] * M[j * r + k]
        if not (s > 0.0):
            return -1
        s = sqrt(s)
        M[j * r + j] = s
        for i in range(j + 1, r):
            t = M[i * r + j]
            for k in range(j):
                t -= M[i * r + k] * M[j * r + k]
            M[i * r + j] = t / s
    return 0


cdef void _chol_solve(const double* L, double* x, int r) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(r):
        s = x[i]
        for k in range(i):
            s -= L[i * r + k] * x[k]
        x[i] = s / L[i * r + i]
    for i in range(r - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, r):
            s -= L[k * r + i] * x[k]
        x[i] = s / L[i * r + i]


cdef int _lu_solve(double* A, double* b, int r) noexcept nogil:
    """Gaussian elimination with partial pivoting; A, b overwritten, solution in b."""
    cdef int i, j, k, p
    cdef double amax = 0.0, piv, f, tmp
    for i in range(r * r):
        if fabs(A[i]) > amax:
            amax = fabs(A[i])
    if amax == 0.0:
        return -1
    for k in range(r):
        p = k
        for i in range(k + 1, r):
            if fabs(A[i * r + k]) > fabs(A[p * r + k]):
                p = i
        piv = A[p * r + k]
        if fabs(piv) <= 1e-13 * amax:
            return -1
        if p != k:
            for j in range(r):
                tmp = A[k * r + j]
                A[k * r + j] = A[p * r + j]
                A[p * r + j] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        for i in range(k + 1, r):
            f = A[i * r + k] / piv
            if f != 0.0:
                for j in range(k, r):
                    A[i * r + j] -= f * A[k * r + j]
                b[i] -= f * b[k]
    for i in range(r - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, r):
            tmp -= A[i * r + j] * b[j]
        b[i] = tmp / A[i * r + i]
    return 0


cdef void _weighted_gram(const double* B, const double* wt, double* G, int m, int r) noexcept nogil:
    """G = B' diag(wt) B, row-major r x r, accumulated row by row of B."""
    cdef int i, j, k
    cdef double bij
    for j in range(r * r):
        G[j] = 0.0
    for i in range(m):
        for j in range(r):
            bij = B[i * r + j] * wt[i]
            for k in range(j + 1):
                G[j * r + k] += bij * B[i * r + k]
    for j in range(r):
        for k in range(j):
            G[k * r + j] = G[j * r + k]


cdef void _weighted_rhs(const double* B, const double* wt, const double* h,
                        const double* shift, double* out, int m, int r) noexcept nogil:
    """out = B' (wt * h) + shift."""
    cdef int i, j
    cdef double c
    for j in range(r):
        out[j] = shift[j]
    for i in range(m):
        c = wt[i] * h[i]
        for j in range(r):
            out[j] += B[i * r + j] * c


cdef double _l1_residual(const double* q, const double* B, const double* v,
                         double* res, int m, int r) noexcept nogil:
    cdef int i, j
    cdef double s, total = 0.0
    for i in range(m):
        s = q[i]
        for j in range(r):
            s -= B[i * r + j] * v[j]
        res[i] = s
        total += fabs(s)
    return total


cdef double _polish(const double* qo, const double* B, const double* res,
                    int m, int r, int* idx, double* A, double* c,
                    double* scratch) noexcept nogil:
    """Interpolate q on the r rows with smallest |res| (ties to lower index).

    Returns the l1 objective of the interpolant, or -1 when the block is singular.
    """
    cdef int i, j, k, pos
    cdef double a
    # insertion into a sorted list of size r
    cdef int filled = 0
    for i in range(m):
        a = fabs(res[i])
        if filled < r:
            pos = filled
            filled += 1
        elif a < fabs(res[idx[r - 1]]):
            pos = r - 1
        else:
            continue
        while pos > 0 and fabs(res[idx[pos - 1]]) > a:
            idx[pos] = idx[pos - 1]
            pos -= 1
        idx[pos] = i
    for k in range(r):
        for j in range(r):
            A[k * r + j] = B[idx[k] * r + j]
        c[k] = qo[idx[k]]
    if _lu_solve(A, c, r) != 0:
        return -1.0
    return _l1_residual(qo, B, c, scratch, m, r)


cdef int _solve_one(const double* q, const double* B, int m, int r,
                    double tol, int max_iter, double pert,
                    double* coeffs, double* out) noexcept nogil:
    """Solve one LAD problem. out = [objective, lower_bound, iterations, status]."""
    cdef int i, j, k, it, status = 0, n_iter = 0
    cdef double scale = 0.0, qdot, obj, best_obj, lower = 0.0, gap
    cdef double mean_abs, delta, mu, mu_aff, sigma, ap, ad, a2, rd_max, rp_max, t
    cdef double rd_tol, bcol
    cdef double* work
    cdef int* idx
    cdef int nwork = 16 * m + 6 * r + 3 * r * r

    for i in range(m):
        if fabs(q[i]) > scale:
            scale = fabs(q[i])
    if scale == 0.0:
        for j in range(r):
            coeffs[j] = 0.0
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 1.0
        return 0

    work = <double*> malloc(nwork * sizeof(double))
    idx = <int*> malloc(r * sizeof(int))
    if work == NULL or idx == NULL:
        free(work)
        free(idx)
        return -2

    cdef double* qo = work
    cdef double* qs = qo + m
    cdef double* u = qs + m
    cdef double* w = u + m
    cdef double* su = w + m
    cdef double* sw = su + m
    cdef double* y = sw + m
    cdef double* res = y + m
    cdef double* dinv = res + m
    cdef double* h = dinv + m
    cdef double* dy = h + m
    cdef double* du = dy + m
    cdef double* dw = du + m
    cdef double* rp = dw + m
    cdef double* dua = rp + m
    cdef double* dwa = dua + m
    cdef double* v = dwa + m
    cdef double* best = v + r
    cdef double* dv = best + r
    cdef double* rhs = dv + r
    cdef double* pc = rhs + r
    cdef double* tmpr = pc + r
    cdef double* M = tmpr + r
    cdef double* L = M + r * r
    cdef double* A = L + r * r

    for i in range(m):
        qo[i] = q[i] / scale
        qs[i] = qo[i] + pert * (i + 1) / m
    rd_tol = 0.0
    for j in range(r):
        bcol = 0.0
        for i in range(m):
            bcol += fabs(B[i * r + j])
        if bcol > rd_tol:
            rd_tol = bcol
    rd_tol = FEAS_TOL * (1.0 + rd_tol)

    # least-squares start
    for j in range(r):
        t = 0.0
        for i in range(m):
            t += B[i * r + j] * qs[i]
        v[j] = t
        for k in range(r):
            t = 0.0
            for i in range(m):
                t += B[i * r + j] * B[i * r + k]
            M[j * r + k] = t
    if _cholesky(M, r) != 0:
        free(work)
        free(idx)
        return -1
    _chol_solve(M, v, r)

    mean_abs = _l1_residual(qs, B, v, res, m, r) / m
    delta = mean_abs if mean_abs > 1e-14 else 1e-14
    for i in range(m):
        u[i] = (res[i] if res[i] > 0.0 else 0.0) + delta
        w[i] = (-res[i] if res[i] < 0.0 else 0.0) + delta
        su[i] = 1.0
        sw[i] = 1.0
        y[i] = 0.0

    best_obj = _l1_residual(qo, B, v, res, m, r)
    memcpy(best, v, r * sizeof(double))

    for it in range(max_iter + 1):
        # residuals and certificates
        obj = _l1_residual(qo, B, v, res, m, r)
        if obj < best_obj:
            best_obj = obj
            memcpy(best, v, r * sizeof(double))
        qdot = 0.0
        rp_max = 0.0
        for i in range(m):
            qdot += qo[i] * y[i]
            rp[i] = qs[i] - qo[i] + res[i] - u[i] + w[i]
            if fabs(rp[i]) > rp_max:
                rp_max = fabs(rp[i])
        for j in range(r):
            tmpr[j] = 0.0
        for i in range(m):
            for j in range(r):
                tmpr[j] -= B[i * r + j] * y[i]
        rd_max = 0.0
        for j in range(r):
            if fabs(tmpr[j]) > rd_max:
                rd_max = fabs(tmpr[j])
        if rd_max <= rd_tol and qdot > lower:
            lower = qdot
        gap = best_obj - lower
        if gap <= tol * (best_obj if best_obj > 1.0 else 1.0) and rp_max <= FEAS_TOL:
            status = 1
            break
        if gap <= POLISH_START * (best_obj if best_obj > 1.0 else 1.0):
            t = _polish(qo, B, res, m, r, idx, A, pc, dua)
            if t >= 0.0 and t < best_obj:
                best_obj = t
                memcpy(best, pc, r * sizeof(double))
                if best_obj - lower <= tol * (best_obj if best_obj > 1.0 else 1.0):
                    status = 1
                    break
        if it == max_iter:
            break
        n_iter = it + 1

        # predictor
        for i in range(m):
            dinv[i] = 1.0 / (u[i] / su[i] + w[i] / sw[i])
            h[i] = rp[i] + u[i] - w[i]
        _weighted_gram(B, dinv, L, m, r)
        if _cholesky(L, r) != 0:
            break
        _weighted_rhs(B, dinv, h, tmpr, dv, m, r)
        _chol_solve(L, dv, r)
        for i in range(m):
            t = h[i]
            for j in range(r):
                t -= B[i * r + j] * dv[j]
            dy[i] = dinv[i] * t
            dua[i] = (-u[i] * su[i] + u[i] * dy[i]) / su[i]
            dwa[i] = (-w[i] * sw[i] - w[i] * dy[i]) / sw[i]
        ap = _max_step(u, dua, m)
        a2 = _max_step(w, dwa, m)
        if a2 < ap:
            ap = a2
        if ap > 1.0:
            ap = 1.0
        # dual slacks move by -dy (su) and +dy (sw)
        ad = 1.0
        for i in range(m):
            if dy[i] > 0.0 and su[i] / dy[i] < ad:
                ad = su[i] / dy[i]
            if dy[i] < 0.0 and -sw[i] / dy[i] < ad:
                ad = -sw[i] / dy[i]
        mu = 0.0
        mu_aff = 0.0
        for i in range(m):
            mu += u[i] * su[i] + w[i] * sw[i]
            mu_aff += ((u[i] + ap * dua[i]) * (su[i] - ad * dy[i])
                       + (w[i] + ap * dwa[i]) * (sw[i] + ad * dy[i]))
        mu /= 2 * m
        mu_aff /= 2 * m
        sigma = mu_aff / mu
        sigma = sigma * sigma * sigma

        # corrector: reuse factorization; cross terms use affine directions
        for i in range(m):
            du[i] = sigma * mu - u[i] * su[i] + dua[i] * dy[i]
            dw[i] = sigma * mu - w[i] * sw[i] - dwa[i] * dy[i]
            h[i] = rp[i] - du[i] / su[i] + dw[i] / sw[i]
        _weighted_rhs(B, dinv, h, tmpr, dv, m, r)
        _chol_solve(L, dv, r)
        for i in range(m):
            t = h[i]
            for j in range(r):
                t -= B[i * r + j] * dv[j]
            dy[i] = dinv[i] * t
            du[i] = (du[i] + u[i] * dy[i]) / su[i]
            dw[i] = (dw[i] - w[i] * dy[i]) / sw[i]
        ap = _max_step(u, du, m)
        a2 = _max_step(w, dw, m)
        if a2 < ap:
            ap = a2
        ad = 1e300
        for i in range(m):
            if dy[i] > 0.0 and su[i] / dy[i] < ad:
                ad = su[i] / dy[i]
            if dy[i] < 0.0 and -sw[i] / dy[i] < ad:
                ad = -sw[i] / dy[i]
        ap = STEP_FRACTION * ap
        ad = STEP_FRACTION * ad
        if ap > 1.0:
            ap = 1.0
        if ad > 1.0:
            ad = 1.0
        for j in range(r):
            v[j] += ap * dv[j]
        for i in range(m):
            u[i] += ap * du[i]
            w[i] += ap * dw[i]
            y[i] += ad * dy[i]
            su[i] -= ad * dy[i]
            sw[i] += ad * dy[i]

    # final polish from the last iterate
    if status != 1:
        _l1_residual(qo, B, v, res, m, r)
        t = _polish(qo, B, res, m, r, idx, A, pc, dua)
        if t >= 0.0 and t < best_obj:
            best_obj = t
            memcpy(best, pc, r * sizeof(double))
        if best_obj - lower <= tol * (best_obj if best_obj > 1.0 else 1.0):
            status = 1

    for j in range(r):
        coeffs[j] = best[j] * scale
    out[0] = best_obj * scale
    out[1] = lower * scale
    out[2] = n_iter
    out[3] = status
    free(work)
    free(idx)
    return 0


def lad_solve_batch(const double[:, ::1] Q, const double[:, :, ::1] Bs, double tol,
                    int max_iter, double pert):
    """Solve ``min_v |Q[k] - Bs[k] v|_1`` for every k.

    Returns ``(coeffs, objective, lower_bound, iterations, status)``; status is
    1 (converged), 0 (iteration cap) or -1 (rank-deficient normal matrix).
    """
    cdef Py_ssize_t nb = Bs.shape[0]
    cdef int m = <int> Bs.shape[1]
    cdef int r = <int> Bs.shape[2]
    if Q.shape[0] != nb or Q.shape[1] != m:
        raise ValueError(f"Q has shape {(Q.shape[0], Q.shape[1])}, expected {(nb, m)}")
    coeffs_arr = np.zeros((nb, r))
    info_arr = np.zeros((nb, 4))
    cdef double[:, ::1] coeffs = coeffs_arr
    cdef double[:, ::1] info = info_arr
    cdef Py_ssize_t k
    cdef int rc = 0
    with nogil:
        for k in range(nb):
            rc = _solve_one(&Q[k, 0], &Bs[k, 0, 0], m, r, tol, max_iter, pert,
                            &coeffs[k, 0], &info[k, 0])
            if rc == -1:
                info[k, 3] = -1.0
            elif rc == -2:
                break
    if rc == -2:
        raise MemoryError("LAD workspace allocation failed")
    return (coeffs_arr, info_arr[:, 0].copy(), info_arr[:, 1].copy(),
            info_arr[:, 2].astype(np.int64), info_arr[:, 3].astype(np.int64))
