"""Hot numeric kernels: numba-jitted fast lane with a pure-numpy fallback.

The lane is chosen once at import time.  Setting the environment variable
``GREENLAB_DISABLE_NUMBA=1`` (or numba being unavailable) selects the numpy
fallback.  Both lanes implement the same functions to the same tolerances;
``benchmarks/bench_kernels.py`` compares them.

Summation contract: ordered pair sums accumulate in lexicographic (i, j)
order with compensated (Kahan) row sums, so results do not depend on the
numba thread count.
"""

from __future__ import annotations

import math
import os

import numpy as np

_GAMMA = 0.5772156649015328606

USE_NUMBA = os.environ.get("GREENLAB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")
if USE_NUMBA:
    try:
        import numba
        from numba import njit, prange

        numba.config.THREADING_LAYER = "omp"
    except ImportError:  # pragma: no cover - exercised via env flag instead
        USE_NUMBA = False

if not USE_NUMBA:
    import scipy.special as _sps


def set_num_threads(count: int) -> None:
    """Limit numba parallelism; no-op on the numpy lane."""
    if USE_NUMBA:
        numba.set_num_threads(max(1, int(count)))


# ----------------------------------------------------------------------
# exponential integral E1
# ----------------------------------------------------------------------

if USE_NUMBA:

    @njit(inline="always")
    def _e1(x):
        # series for small x, modified-Lentz continued fraction beyond;
        # absolute error < 1e-14 over (0, inf)
        if x <= 0.0:
            return math.inf
        if x >= 45.0:
            return 0.0
        if x <= 8.0:
            s = -_GAMMA - math.log(x)
            term = 1.0
            for k in range(1, 80):
                term *= -x / k
                c = -term / k
                s += c
                if abs(c) < 1e-18:
                    break
            return s
        b = x + 1.0
        c = 1e308
        d = 1.0 / b
        h = d
        for i in range(1, 200):
            a = -(i * i * 1.0)
            b += 2.0
            d = 1.0 / (a * d + b)
            c = b + a / c
            de = c * d
            h *= de
            if abs(de - 1.0) < 1e-16:
                break
        return math.exp(-x) * h

    @njit
    def exp_int_e1(x):
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            out[i] = _e1(x[i])
        return out

else:

    def exp_int_e1(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.where(x >= 45.0, 0.0, _sps.exp1(np.maximum(x, 1e-300)))
        return np.where(x <= 0.0, np.inf, out)


# ----------------------------------------------------------------------
# torus Green function, Ewald split (unit square, unit volume)
#
#   G(z) = (1/4pi) sum_n E1(|z-n|^2 / 4 eta)
#        + sum_{m != 0} exp(-4 pi^2 eta |m|^2) cos(2 pi m.z) / (4 pi^2 |m|^2)
#        - eta
#
# The result is independent of the splitting parameter eta.
# ----------------------------------------------------------------------

if USE_NUMBA:

    @njit(inline="always")
    def _ewald_point(du, dv, eta, nimg, coef, mmax):
        du -= math.floor(du + 0.5)
        dv -= math.floor(dv + 0.5)
        inv4eta = 1.0 / (4.0 * eta)
        s_real = 0.0
        for i in range(-nimg, nimg + 1):
            x = du - i
            for j in range(-nimg, nimg + 1):
                y = dv - j
                arg = (x * x + y * y) * inv4eta
                if arg < 45.0:
                    s_real += _e1(arg)
        s_real *= 1.0 / (4.0 * math.pi)
        # reciprocal sum over the quadrant with symmetry weights, complex
        # recurrences for cos(2 pi m u)
        cu = math.cos(2.0 * math.pi * du)
        su = math.sin(2.0 * math.pi * du)
        cv = math.cos(2.0 * math.pi * dv)
        sv = math.sin(2.0 * math.pi * dv)
        s_rec = 0.0
        eur = 1.0
        eui = 0.0
        for m1 in range(0, mmax + 1):
            evr = 1.0
            evi = 0.0
            for m2 in range(0, mmax + 1):
                c4 = coef[m1, m2]
                if c4 != 0.0:
                    w = 4.0
                    if m1 == 0:
                        w = 2.0
                    if m2 == 0:
                        w = 2.0 if m1 > 0 else 1.0
                    s_rec += c4 * w * eur * evr
                t = evr * cv - evi * sv
                evi = evr * sv + evi * cv
                evr = t
            t = eur * cu - eui * su
            eui = eur * su + eui * cu
            eur = t
        return s_real + s_rec - eta

    @njit(parallel=True)
    def torus_green_direct(du, dv, eta, nimg, coef, mmax):
        n = du.shape[0]
        out = np.empty(n)
        for i in prange(n):
            out[i] = _ewald_point(du[i], dv[i], eta, nimg, coef, mmax)
        return out

else:

    def torus_green_direct(du, dv, eta, nimg, coef, mmax):
        du = np.asarray(du, dtype=np.float64) % 1.0
        dv = np.asarray(dv, dtype=np.float64) % 1.0
        du = du - np.floor(du + 0.5)
        dv = dv - np.floor(dv + 0.5)
        inv4eta = 1.0 / (4.0 * eta)
        s_real = np.zeros_like(du)
        for i in range(-nimg, nimg + 1):
            for j in range(-nimg, nimg + 1):
                arg = ((du - i) ** 2 + (dv - j) ** 2) * inv4eta
                s_real += exp_int_e1(arg)
        s_real /= 4.0 * math.pi
        mmax_i = coef.shape[0] - 1
        m1 = np.arange(0, mmax_i + 1)
        w = np.full((mmax_i + 1, mmax_i + 1), 4.0)
        w[0, :] = 2.0
        w[:, 0] = 2.0
        w[0, 0] = 1.0
        cos_u = np.cos(2.0 * np.pi * np.multiply.outer(du, m1))  # (n, m)
        cos_v = np.cos(2.0 * np.pi * np.multiply.outer(dv, m1))
        s_rec = np.einsum("nm,nk,mk->n", cos_u, cos_v, (coef * w).T, optimize=True)
        return s_real + s_rec - eta


# periodic smooth remainder: F(z) = G(z) + (1/4pi) log(sin^2(pi u) + sin^2(pi v)),
# real-analytic on the whole torus, tabulated once and interpolated bicubically.

def torus_table_build(size, eta, nimg, coef, mmax, h0):
    """Sample F on a size x size periodic grid; h0 is the r->0 limit of
    G + log(r)/(2 pi)."""
    u = np.arange(size) / size
    uu, vv = np.meshgrid(u, u, indexing="ij")
    du = uu.ravel()
    dv = vv.ravel()
    g = torus_green_direct(du, dv, eta, nimg, coef, mmax)
    s = np.sin(np.pi * du) ** 2 + np.sin(np.pi * dv) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        F = g + np.log(s) / (4.0 * math.pi)
    F[0] = h0 + math.log(math.pi ** 2) / (4.0 * math.pi)
    return F.reshape(size, size)


if USE_NUMBA:

    @njit(inline="always")
    def _bicubic_periodic(F, u, v):
        N = F.shape[0]
        x = (u - math.floor(u)) * N
        y = (v - math.floor(v)) * N
        ix = int(x)
        iy = int(y)
        if ix >= N:
            ix = N - 1
        if iy >= N:
            iy = N - 1
        fx = x - ix
        fy = y - iy
        wx0 = ((-0.5 * fx + 1.0) * fx - 0.5) * fx
        wx1 = (1.5 * fx - 2.5) * fx * fx + 1.0
        wx2 = ((-1.5 * fx + 2.0) * fx + 0.5) * fx
        wx3 = (0.5 * fx - 0.5) * fx * fx
        wy0 = ((-0.5 * fy + 1.0) * fy - 0.5) * fy
        wy1 = (1.5 * fy - 2.5) * fy * fy + 1.0
        wy2 = ((-1.5 * fy + 2.0) * fy + 0.5) * fy
        wy3 = (0.5 * fy - 0.5) * fy * fy
        s = 0.0
        for a in range(4):
            ia = ix + a - 1
            if ia < 0:
                ia += N
            elif ia >= N:
                ia -= N
            row = F[ia]
            iy0 = iy - 1
            if iy0 < 0:
                iy0 += N
            iy1 = iy0 + 1
            if iy1 >= N:
                iy1 -= N
            iy2 = iy1 + 1
            if iy2 >= N:
                iy2 -= N
            iy3 = iy2 + 1
            if iy3 >= N:
                iy3 -= N
            r = wy0 * row[iy0] + wy1 * row[iy1] + wy2 * row[iy2] + wy3 * row[iy3]
            wa = wx0
            if a == 1:
                wa = wx1
            elif a == 2:
                wa = wx2
            elif a == 3:
                wa = wx3
            s += wa * r
        return s

    @njit(inline="always")
    def _table_green_point(F, du, dv):
        s = math.sin(math.pi * du) ** 2 + math.sin(math.pi * dv) ** 2
        if s == 0.0:
            return math.inf
        return _bicubic_periodic(F, du, dv) - math.log(s) / (4.0 * math.pi)

    @njit(parallel=True)
    def torus_green_table(F, du, dv):
        n = du.shape[0]
        out = np.empty(n)
        for i in prange(n):
            out[i] = _table_green_point(F, du[i], dv[i])
        return out

    @njit(parallel=True)
    def torus_pair_energy(F, pts):
        """2 * sum_{i<j} G(x_i - x_j) via the table; +inf on coincidence.

        Row sums are Kahan-compensated and rows are reduced in index order,
        so the value is independent of the thread count.
        """
        n = pts.shape[0]
        rows = np.zeros(n)
        hit = np.zeros(n, dtype=np.uint8)
        for i in prange(n - 1):
            acc = 0.0
            comp = 0.0
            u = pts[i, 0]
            v = pts[i, 1]
            for j in range(i + 1, n):
                du = u - pts[j, 0]
                dv = v - pts[j, 1]
                s = math.sin(math.pi * du) ** 2 + math.sin(math.pi * dv) ** 2
                if s == 0.0:
                    hit[i] = 1
                    continue
                g = _bicubic_periodic(F, du, dv) - math.log(s) / (4.0 * math.pi)
                y = g - comp
                t = acc + y
                comp = (t - acc) - y
                acc = t
            rows[i] = acc
        if hit.any():
            return math.inf
        total = 0.0
        comp = 0.0
        for i in range(n - 1):
            y = rows[i] - comp
            t = total + y
            comp = (t - total) - y
            total = t
        return 2.0 * total

    @njit(parallel=True)
    def sphere_pair_energy(pts):
        """2 * sum_{i<j} (log 4 - 1 - 2 log |x_i - x_j|); +inf on coincidence."""
        n = pts.shape[0]
        rows = np.zeros(n)
        hit = np.zeros(n, dtype=np.uint8)
        c0 = math.log(4.0) - 1.0
        for i in prange(n - 1):
            acc = 0.0
            comp = 0.0
            x0 = pts[i, 0]
            x1 = pts[i, 1]
            x2 = pts[i, 2]
            for j in range(i + 1, n):
                d0 = x0 - pts[j, 0]
                d1 = x1 - pts[j, 1]
                d2 = x2 - pts[j, 2]
                c2 = d0 * d0 + d1 * d1 + d2 * d2
                if c2 == 0.0:
                    hit[i] = 1
                    continue
                g = c0 - math.log(c2)
                y = g - comp
                t = acc + y
                comp = (t - acc) - y
                acc = t
            rows[i] = acc
        if hit.any():
            return math.inf
        total = 0.0
        comp = 0.0
        for i in range(n - 1):
            y = rows[i] - comp
            t = total + y
            comp = (t - total) - y
            total = t
        return 2.0 * total

else:

    def _bicubic_weights(f):
        w0 = ((-0.5 * f + 1.0) * f - 0.5) * f
        w1 = (1.5 * f - 2.5) * f * f + 1.0
        w2 = ((-1.5 * f + 2.0) * f + 0.5) * f
        w3 = (0.5 * f - 0.5) * f * f
        return np.stack([w0, w1, w2, w3], axis=-1)

    def _bicubic_periodic_vec(F, u, v):
        N = F.shape[0]
        x = (u - np.floor(u)) * N
        y = (v - np.floor(v)) * N
        ix = np.minimum(x.astype(np.int64), N - 1)
        iy = np.minimum(y.astype(np.int64), N - 1)
        wx = _bicubic_weights(x - ix)
        wy = _bicubic_weights(y - iy)
        out = np.zeros_like(u, dtype=np.float64)
        for a in range(4):
            ia = (ix + a - 1) % N
            row = 0.0
            for b in range(4):
                ib = (iy + b - 1) % N
                row = row + wy[..., b] * F[ia, ib]
            out += wx[..., a] * row
        return out

    def torus_green_table(F, du, dv):
        du = np.asarray(du, dtype=np.float64)
        dv = np.asarray(dv, dtype=np.float64)
        s = np.sin(np.pi * du) ** 2 + np.sin(np.pi * dv) ** 2
        with np.errstate(divide="ignore"):
            out = _bicubic_periodic_vec(F, du, dv) - np.log(s) / (4.0 * math.pi)
        return np.where(s == 0.0, np.inf, out)

    def torus_pair_energy(F, pts):
        n = pts.shape[0]
        rows = np.zeros(n)
        for i in range(n - 1):
            du = pts[i, 0] - pts[i + 1:, 0]
            dv = pts[i, 1] - pts[i + 1:, 1]
            g = torus_green_table(F, du, dv)
            if np.isinf(g).any():
                return math.inf
            rows[i] = np.add.reduce(g)
        return 2.0 * math.fsum(rows)

    def sphere_pair_energy(pts):
        n = pts.shape[0]
        rows = np.zeros(n)
        c0 = math.log(4.0) - 1.0
        for i in range(n - 1):
            diff = pts[i] - pts[i + 1:]
            c2 = np.einsum("ij,ij->i", diff, diff)
            if (c2 == 0.0).any():
                return math.inf
            rows[i] = np.add.reduce(c0 - np.log(c2))
        return 2.0 * math.fsum(rows)


# ----------------------------------------------------------------------
# squared geodesic distance blocks (cost matrices)
# ----------------------------------------------------------------------

if USE_NUMBA:

    @njit(parallel=True)
    def torus_sq_dist(X, Y):
        n = X.shape[0]
        m = Y.shape[0]
        out = np.empty((n, m))
        for i in prange(n):
            u = X[i, 0]
            v = X[i, 1]
            for j in range(m):
                du = u - Y[j, 0]
                du -= math.floor(du + 0.5)
                dv = v - Y[j, 1]
                dv -= math.floor(dv + 0.5)
                out[i, j] = du * du + dv * dv
        return out

    @njit(parallel=True)
    def sphere_sq_dist(X, Y):
        n = X.shape[0]
        m = Y.shape[0]
        out = np.empty((n, m))
        for i in prange(n):
            for j in range(m):
                t = X[i, 0] * Y[j, 0] + X[i, 1] * Y[j, 1] + X[i, 2] * Y[j, 2]
                if t > 1.0:
                    t = 1.0
                elif t < -1.0:
                    t = -1.0
                a = math.acos(t)
                out[i, j] = a * a
        return out

else:

    def torus_sq_dist(X, Y):
        d = np.abs(X[:, None, :] - Y[None, :, :])
        d = np.minimum(d, 1.0 - d)
        return np.einsum("ijk,ijk->ij", d, d)

    def sphere_sq_dist(X, Y):
        t = np.clip(X @ Y.T, -1.0, 1.0)
        return np.arccos(t) ** 2
