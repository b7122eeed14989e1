"""Pure numpy fallback for the LAD kernel in ``_lad.pyx``.

Same algorithm and stopping rules as the compiled version; used when the
extension is not built or when ``L1NS_PURE_PYTHON`` is set.
"""
import numpy as np

STEP_FRACTION = 0.9995
FEAS_TOL = 1e-10
POLISH_START = 1e-3


def _max_step(x, dx):
    neg = dx < 0.0
    if not neg.any():
        return 1e300
    return float(np.min(-x[neg] / dx[neg]))


def _dual_step(su, sw, dy):
    a = 1e300
    pos = dy > 0.0
    if pos.any():
        a = min(a, float(np.min(su[pos] / dy[pos])))
    neg = dy < 0.0
    if neg.any():
        a = min(a, float(np.min(-sw[neg] / dy[neg])))
    return a


def _polish(qo, B, res, r):
    idx = np.argsort(np.abs(res), kind="stable")[:r]
    A = B[idx]
    amax = np.abs(A).max()
    if amax == 0.0:
        return None, -1.0
    try:
        lu_ok = np.linalg.cond(A) < 1e13
    except np.linalg.LinAlgError:
        lu_ok = False
    if not lu_ok:
        return None, -1.0
    c = np.linalg.solve(A, qo[idx])
    return c, float(np.abs(qo - B @ c).sum())


def _solve_one(q, B, tol, max_iter, pert):
    m, r = B.shape
    scale = float(np.abs(q).max())
    if scale == 0.0:
        return np.zeros(r), 0.0, 0.0, 0, 1

    qo = q / scale
    qs = qo + pert * np.arange(1, m + 1) / m
    rd_tol = FEAS_TOL * (1.0 + float(np.abs(B).sum(axis=0).max()))

    try:
        L0 = np.linalg.cholesky(B.T @ B)
    except np.linalg.LinAlgError:
        return np.zeros(r), 0.0, 0.0, 0, -1
    v = np.linalg.solve(L0.T, np.linalg.solve(L0, B.T @ qs))

    res = qs - B @ v
    delta = max(float(np.abs(res).mean()), 1e-14)
    u = np.maximum(res, 0.0) + delta
    w = np.maximum(-res, 0.0) + delta
    su = np.ones(m)
    sw = np.ones(m)
    y = np.zeros(m)

    best = v.copy()
    best_obj = float(np.abs(qo - B @ v).sum())
    lower = 0.0
    status = 0
    n_iter = 0

    for it in range(max_iter + 1):
        res = qo - B @ v
        obj = float(np.abs(res).sum())
        if obj < best_obj:
            best_obj = obj
            best = v.copy()
        rp = qs - qo + res - u + w
        btY = B.T @ y
        if np.abs(btY).max() <= rd_tol:
            lower = max(lower, float(qo @ y))
        floor = max(best_obj, 1.0)
        if best_obj - lower <= tol * floor and np.abs(rp).max() <= FEAS_TOL:
            status = 1
            break
        if best_obj - lower <= POLISH_START * floor:
            c, pobj = _polish(qo, B, res, r)
            if c is not None and pobj < best_obj:
                best_obj, best = pobj, c
                if best_obj - lower <= tol * max(best_obj, 1.0):
                    status = 1
                    break
        if it == max_iter:
            break
        n_iter = it + 1

        dinv = 1.0 / (u / su + w / sw)
        h = rp + u - w
        M = (B * dinv[:, None]).T @ B
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            break

        def direction(h):
            dv = B.T @ (dinv * h) + btY
            dv = np.linalg.solve(L.T, np.linalg.solve(L, dv))
            return dv, dinv * (h - B @ dv)

        # predictor
        dv, dy = direction(h)
        dua = (-u * su + u * dy) / su
        dwa = (-w * sw - w * dy) / sw
        ap = min(_max_step(u, dua), _max_step(w, dwa), 1.0)
        ad = min(_dual_step(su, sw, dy), 1.0)
        mu = float((u @ su + w @ sw) / (2 * m))
        mu_aff = float(((u + ap * dua) @ (su - ad * dy) + (w + ap * dwa) @ (sw + ad * dy)) / (2 * m))
        sigma = (mu_aff / mu) ** 3

        # corrector
        rcu = sigma * mu - u * su + dua * dy
        rcw = sigma * mu - w * sw - dwa * dy
        dv, dy = direction(rp - rcu / su + rcw / sw)
        du = (rcu + u * dy) / su
        dw = (rcw - w * dy) / sw
        ap = min(STEP_FRACTION * min(_max_step(u, du), _max_step(w, dw)), 1.0)
        ad = min(STEP_FRACTION * _dual_step(su, sw, dy), 1.0)
        v = v + ap * dv
        u = u + ap * du
        w = w + ap * dw
        y = y + ad * dy
        su = su - ad * dy
        sw = sw + ad * dy

    if status != 1:
        c, pobj = _polish(qo, B, qo - B @ v, r)
        if c is not None and pobj < best_obj:
            best_obj, best = pobj, c
        if best_obj - lower <= tol * max(best_obj, 1.0):
            status = 1

    return best * scale, best_obj * scale, lower * scale, n_iter, status


def lad_solve_batch(Q, Bs, tol, max_iter, pert):
    """Solve ``min_v |Q[k] - Bs[k] v|_1`` for every k (numpy fallback)."""
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    Bs = np.ascontiguousarray(Bs, dtype=np.float64)
    nb, m, r = Bs.shape
    if Q.shape != (nb, m):
        raise ValueError(f"Q has shape {Q.shape}, expected {(nb, m)}")
    coeffs = np.zeros((nb, r))
    obj = np.zeros(nb)
    lower = np.zeros(nb)
    iters = np.zeros(nb, dtype=np.int64)
    status = np.zeros(nb, dtype=np.int64)
    for k in range(nb):
        coeffs[k], obj[k], lower[k], iters[k], status[k] = _solve_one(Q[k], Bs[k], tol, max_iter, pert)
    return coeffs, obj, lower, iters, status
