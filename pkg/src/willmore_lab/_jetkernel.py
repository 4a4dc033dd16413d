"""Compiled per-vertex height fit used by :mod:`willmore_lab.shape`."""
import numpy as np
from numba import njit


@njit(cache=True)
def _cholesky_solve(N, b, m, L, y, x):
    """Solve the leading m x m block of N x = b in place; returns the pivot ratio."""
    for i in range(m):
        for j in range(i + 1):
            s = N[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return np.inf
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    lo, hi = np.inf, 0.0
    for i in range(m):
        d = L[i, i] * L[i, i]
        lo = min(lo, d)
        hi = max(hi, d)
    for i in range(m):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(m - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, m):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return hi / lo


@njit(cache=True)
def _fit_one(c, cnt, pi, pj, deg, ncols, cond_limit, force, N, b, row, xp, yp, L, y, coef):
    """Fit z/h by monomials of (x/h, y/h); falls back to fewer columns.

    Writes the coefficients into ``coef`` and returns (h, columns used).
    """
    M = len(pi)
    h2 = 0.0
    for k in range(cnt):
        h2 += c[k, 0] ** 2 + c[k, 1] ** 2
    h = np.sqrt(h2 / cnt)
    N[:, :] = 0.0
    b[:] = 0.0
    for k in range(cnt):
        xs, ys, zs = c[k, 0] / h, c[k, 1] / h, c[k, 2] / h
        r = np.sqrt(xs * xs + ys * ys + zs * zs)
        w = 1.0 / max(r, 1e-12)
        for e in range(1, deg + 1):
            xp[e] = xp[e - 1] * xs
            yp[e] = yp[e - 1] * ys
        for a in range(M):
            row[a] = xp[pi[a]] * yp[pj[a]]
        for a in range(M):
            wa = w * row[a]
            b[a] += wa * zs
            for bb in range(a + 1):
                N[a, bb] += wa * row[bb]
    for t in range(len(ncols)):
        m = ncols[t]
        if force > 0 and m != force:
            continue
        coef[:] = 0.0
        ratio = _cholesky_solve(N, b, m, L, y, coef)
        if force > 0 or ratio <= cond_limit:
            return h, m
    return h, 0


@njit(cache=True)
def fit_all(c0, counts, pi, pj, ncols, passes, cond_limit):
    """Fit every vertex; returns (rotation, coef, scale, ncols_used, coords).

    ``rotation[v]`` maps the input frame to the fitted frame: new coordinates
    are ``c0[v] @ rotation[v]``.
    """
    n, K, _ = c0.shape
    M = len(pi)
    deg = 0
    for a in range(M):
        deg = max(deg, pi[a] + pj[a])
    R_all = np.zeros((n, 3, 3))
    coef_all = np.zeros((n, M))
    h_all = np.zeros(n)
    used = np.zeros(n, dtype=np.int64)
    c_out = c0.copy()
    N = np.zeros((M, M))
    b = np.zeros(M)
    row = np.zeros(M)
    xp = np.ones(deg + 1)
    yp = np.ones(deg + 1)
    L = np.zeros((M, M))
    y = np.zeros(M)
    coef = np.zeros(M)
    Q = np.zeros((3, 3))
    R = np.zeros((3, 3))
    tmp = np.zeros(3)
    for v in range(n):
        cnt = counts[v]
        c = c_out[v]
        R[:, :] = 0.0
        for i in range(3):
            R[i, i] = 1.0
        force = 0
        m = 0
        for it in range(passes + 1):
            h, m = _fit_one(c, cnt, pi, pj, deg, ncols, cond_limit, force, N, b, row, xp, yp, L, y, coef)
            if m == 0:
                break
            force = m
            if it == passes:
                break
            nx, ny, nz = -coef[0], -coef[1], 1.0
            nn = np.sqrt(nx * nx + ny * ny + nz * nz)
            nx, ny, nz = nx / nn, ny / nn, nz / nn
            # Rodrigues rotation taking e3 to (nx, ny, nz)
            s = np.sqrt(nx * nx + ny * ny)
            if s == 0.0:
                continue
            kx, ky = -ny / s, nx / s
            q = 1.0 - nz
            Q[0, 0] = 1.0 - q * ky * ky
            Q[0, 1] = q * kx * ky
            Q[0, 2] = s * ky
            Q[1, 0] = q * kx * ky
            Q[1, 1] = 1.0 - q * kx * kx
            Q[1, 2] = -s * kx
            Q[2, 0] = -s * ky
            Q[2, 1] = s * kx
            Q[2, 2] = 1.0 - q * (kx * kx + ky * ky)
            for k in range(K):
                for j in range(3):
                    tmp[j] = c[k, 0] * Q[0, j] + c[k, 1] * Q[1, j] + c[k, 2] * Q[2, j]
                c[k, 0], c[k, 1], c[k, 2] = tmp[0], tmp[1], tmp[2]
            for i in range(3):
                for j in range(3):
                    tmp[j] = R[i, 0] * Q[0, j] + R[i, 1] * Q[1, j] + R[i, 2] * Q[2, j]
                R[i, 0], R[i, 1], R[i, 2] = tmp[0], tmp[1], tmp[2]
        R_all[v] = R
        coef_all[v] = coef
        h_all[v] = h
        used[v] = m
    return R_all, coef_all, h_all, used, c_out
