"""Mean-zero Green kernels of the Laplacian on the torus and the sphere.

Conventions: kernels integrate against the *normalized* volume measure, so
they equal vol(M) times the Green function taken with respect to the raw
Riemannian volume.  Concretely:

  sphere:  G(x, y) = log(2 / (1 - cos theta)) - 1 = log 4 - 1 - 2 log|x - y|
  torus:   G(x, y) = sum_{m != 0} cos(2 pi m.(x-y)) / (4 pi^2 |m|^2),
           evaluated by Ewald splitting (real-space exponential-integral
           images + Gaussian-damped reciprocal sum).

Both satisfy int G(x, y) dy = 0 exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.special

from . import _kernels
from .surfaces import FlatTorus, UnitSphere, WeightedPointSet
from .rng import RandomStream

_GAMMA = 0.5772156649015328606


@dataclass
class Sigma2Report:
    """Estimate of the squared L2 norm of the kernel, with an error bar."""

    value: float
    method: str
    error: float
    detail: dict = field(default_factory=dict)


class SphereGreen:
    """Closed-form mean-zero Green kernel on the unit sphere.

    `constant` is the additive normalization; the mean-zero value is -1 and
    anything else fails the mean-zero check (useful for fault injection).
    """

    method = "SphereClosedForm"

    def __init__(self, constant: float = -1.0):
        self.surface = UnitSphere()
        self.constant = float(constant)
        self.accuracy = 1e-14

    def eval(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        diff = x - y
        chord2 = np.einsum("ij,ij->i", diff, diff)
        if (chord2 == 0.0).any():
            raise ValueError("Green kernel evaluated on the diagonal")
        out = math.log(4.0) + self.constant - np.log(chord2)
        return out if out.size > 1 else float(out[0])

    def eval_one_to_many(self, x: np.ndarray, Y: np.ndarray) -> np.ndarray:
        diff = Y - x[None, :]
        chord2 = np.einsum("ij,ij->i", diff, diff)
        if (chord2 == 0.0).any():
            raise ValueError("Green kernel evaluated on the diagonal")
        return math.log(4.0) + self.constant - np.log(chord2)

    def pair_energy(self, pts: np.ndarray) -> float:
        base = _kernels.sphere_pair_energy(np.ascontiguousarray(pts, dtype=np.float64))
        if math.isinf(base):
            return math.inf
        n = pts.shape[0]
        return base + n * (n - 1) * (self.constant + 1.0)

    # -- spectral facts ------------------------------------------------

    @staticmethod
    def spectral_coefficient(ell: int) -> float:
        """Legendre coefficient of the kernel: (2l+1) / (l(l+1)) for l >= 1."""
        return (2.0 * ell + 1.0) / (ell * (ell + 1.0))

    def legendre_coefficient_numeric(self, ell: int) -> float:
        """Projection (2l+1)/2 * int_{-1}^{1} G(t) P_l(t) dt by adaptive
        quadrature, with t = 1 - 2 s^2 to absorb the log endpoint."""

        def integrand(s):
            # G(t) = log(2/(1-t)) + constant with 1 - t = 2 s^2
            t = 1.0 - 2.0 * s * s
            g = -2.0 * math.log(s) + self.constant
            return g * scipy.special.eval_legendre(ell, t) * 4.0 * s

        val, _ = scipy.integrate.quad(integrand, 0.0, 1.0, limit=200,
                                      epsabs=1e-12, epsrel=1e-12)
        return (2.0 * ell + 1.0) / 2.0 * val

    def sigma2_spectral(self, terms: int = 200_000) -> Sigma2Report:
        ell = np.arange(1, terms + 1, dtype=np.float64)
        partial = float(np.add.reduce((2 * ell + 1) / (ell * (ell + 1)) ** 2))
        # exact tail of the telescoping series
        tail = 1.0 / (terms + 1.0) ** 2
        return Sigma2Report(partial + tail, "SpectralSum", 1e-15 * terms,
                            {"terms": terms, "tail": tail})


class TorusEwald:
    """Ewald-split Green kernel on the flat unit torus.

    The splitting parameter `eta`, the real-space image range `nimg` and the
    reciprocal cutoff `mmax` carry certified truncation bounds computed at
    construction.  Pair sums use a bicubic table of the smooth periodic
    remainder; the table error is measured against direct evaluation when
    the table is built.
    """

    method = "TorusEwald"

    def __init__(self, accuracy: float = 1e-8, eta: float = 0.015,
                 nimg: int | None = None, mmax: int | None = None,
                 table_size: int = 1024):
        self.surface = FlatTorus()
        self.accuracy = float(accuracy)
        self.eta = float(eta)
        if nimg is None:
            # smallest image range with certified real-space tail < accuracy/8
            nimg = 1
            while self._real_tail(nimg) > self.accuracy / 8 and nimg < 10:
                nimg += 1
        self.nimg = int(nimg)
        if mmax is None:
            mmax = 2
            while self._recip_tail(mmax) > self.accuracy / 8 and mmax < 64:
                mmax += 1
        self.mmax = int(mmax)
        self.table_size = int(table_size)
        self.coef = self._coef_grid()
        self.cert_error = (self._real_tail(self.nimg) + self._recip_tail(self.mmax)
                           + 5e-14 * (2 * self.nimg + 1) ** 2)
        self.h0 = self._smooth_part_at_zero()
        self._table = None
        self.table_error = None

    # -- certified truncation bounds ------------------------------------

    def _real_tail(self, nimg: int) -> float:
        # sum over excluded images; for z in the centered cell the nearest
        # excluded image is at distance >= nimg - 1/2, and ring k >= that
        # holds <= 8(k+2) lattice points
        tot = 0.0
        k = nimg - 0.5
        while True:
            term = 8 * (k + 2) * _e1_upper(k * k / (4 * self.eta))
            tot += term
            if term < 1e-22 or k > nimg + 40:
                break
            k += 1.0
        return tot / (4 * math.pi)

    def _recip_tail(self, mmax: int) -> float:
        tot = 0.0
        k = mmax + 1
        while True:
            term = 8 * (k + 2) * math.exp(-4 * math.pi ** 2 * self.eta * k * k) \
                / (4 * math.pi ** 2 * k * k)
            tot += term
            if term < 1e-22 or k > mmax + 400:
                break
            k += 1
        return tot

    def _coef_grid(self) -> np.ndarray:
        m = np.arange(self.mmax + 1, dtype=np.float64)
        m2 = m[:, None] ** 2 + m[None, :] ** 2
        with np.errstate(divide="ignore"):
            c = np.exp(-4 * math.pi ** 2 * self.eta * m2) / (4 * math.pi ** 2 * m2)
        c[0, 0] = 0.0
        return c

    def _smooth_part_at_zero(self) -> float:
        """H(0) = lim_{r->0} (G + log(r) / 2 pi)."""
        s = (math.log(4 * self.eta) - _GAMMA) / (4 * math.pi)
        for i in range(-self.nimg, self.nimg + 1):
            for j in range(-self.nimg, self.nimg + 1):
                if i == 0 and j == 0:
                    continue
                s += float(_kernels.exp_int_e1(
                    np.array([(i * i + j * j) / (4 * self.eta)]))[0]) / (4 * math.pi)
        w = np.full((self.mmax + 1, self.mmax + 1), 4.0)
        w[0, :] = 2.0
        w[:, 0] = 2.0
        w[0, 0] = 1.0
        s += float((self.coef * w).sum())
        return s - self.eta

    # -- evaluation ------------------------------------------------------

    def eval_diff(self, du: np.ndarray, dv: np.ndarray) -> np.ndarray:
        """Direct (certified) evaluation at difference vectors."""
        du = np.ascontiguousarray(du, dtype=np.float64)
        dv = np.ascontiguousarray(dv, dtype=np.float64)
        red_u = du - np.round(du)
        red_v = dv - np.round(dv)
        if ((red_u == 0.0) & (red_v == 0.0)).any():
            raise ValueError("Green kernel evaluated on the diagonal")
        return _kernels.torus_green_direct(du, dv, self.eta, self.nimg,
                                           self.coef, self.mmax)

    def eval(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        out = self.eval_diff(x[:, 0] - y[:, 0], x[:, 1] - y[:, 1])
        return out if out.size > 1 else float(out[0])

    def eval_one_to_many(self, x: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Table-accelerated row evaluation (used by quadrature residuals)."""
        F = self.table()
        out = _kernels.torus_green_table(F, x[0] - Y[:, 0], x[1] - Y[:, 1])
        if np.isinf(out).any():
            raise ValueError("Green kernel evaluated on the diagonal")
        return out

    def table(self) -> np.ndarray:
        if self._table is None:
            self._table = _kernels.torus_table_build(
                self.table_size, self.eta, self.nimg, self.coef, self.mmax, self.h0)
            self.table_error = self._validate_table()
        return self._table

    def _validate_table(self) -> float:
        rng = np.random.default_rng(20240901)
        z = rng.random((2000, 2)) - 0.5
        keep = np.hypot(z[:, 0], z[:, 1]) > 1e-5
        z = z[keep]
        direct = _kernels.torus_green_direct(z[:, 0], z[:, 1], self.eta,
                                             self.nimg, self.coef, self.mmax)
        table = _kernels.torus_green_table(self._table, z[:, 0], z[:, 1])
        return float(np.abs(direct - table).max()) + self.cert_error

    def pair_energy(self, pts: np.ndarray) -> float:
        return float(_kernels.torus_pair_energy(
            self.table(), np.ascontiguousarray(pts, dtype=np.float64)))


class TorusFourierOracle:
    """Cross-validation oracle: flat-top-windowed symmetric Fourier sums.

    Independent of the Ewald route.  Accurate to ~1e-9 at cutoff 1024 for
    difference vectors at least 0.05 away from the origin.
    """

    method = "TorusFourierOracle"

    def __init__(self, cutoff: int = 1024):
        self.surface = FlatTorus()
        self.cutoff = int(cutoff)
        self.accuracy = 1e-8

    @staticmethod
    def _window(t: np.ndarray) -> np.ndarray:
        w = np.clip((t - 0.5) / 0.5, 0.0, 1.0 - 1e-12)
        out = np.exp(-w * w / (1.0 - w * w))
        out[t >= 1.0] = 0.0
        return out

    def _coef(self) -> np.ndarray:
        M = self.cutoff
        m = np.arange(-M, M + 1)
        m2 = (m[:, None] ** 2 + m[None, :] ** 2).astype(np.float64)
        sig = self._window(np.sqrt(m2) / (M + 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            c = sig / (4 * math.pi ** 2 * m2)
        c[M, M] = 0.0
        return c

    def eval_diff(self, du: float, dv: float) -> float:
        M = self.cutoff
        c = self._coef()
        m = np.arange(-M, M + 1)
        cos_v = np.cos(2 * math.pi * m * dv)
        sin_v = np.sin(2 * math.pi * m * dv)
        total = 0.0
        for r, m1 in enumerate(m):
            a = 2 * math.pi * m1 * du
            row = math.cos(a) * cos_v - math.sin(a) * sin_v
            total += float(np.add.reduce(c[r] * row))
        return total

    def eval(self, x, y) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(2)
        y = np.asarray(y, dtype=np.float64).reshape(2)
        return self.eval_diff(x[0] - y[0], x[1] - y[1])

    def eval_grid(self, grid_size: int) -> np.ndarray:
        """G at all difference vectors (i/N, j/N) in one FFT."""
        N = int(grid_size)
        if N < 2 * self.cutoff + 2:
            raise ValueError("grid_size must exceed twice the cutoff")
        M = self.cutoff
        c = self._coef()
        spec = np.zeros((N, N), dtype=np.complex128)
        idx = (np.arange(-M, M + 1)) % N
        spec[np.ix_(idx, idx)] += c
        vals = np.fft.ifft2(spec) * N * N
        return vals.real


class ConstantShiftKernel:
    """Wrapper adding a constant to a kernel (test shim for linearity)."""

    method = "ConstantShift"

    def __init__(self, base, shift: float):
        self.base = base
        self.shift = float(shift)
        self.surface = base.surface
        self.accuracy = base.accuracy

    def eval(self, x, y):
        return self.base.eval(x, y) + self.shift

    def eval_one_to_many(self, x, Y):
        return self.base.eval_one_to_many(x, Y) + self.shift

    def pair_energy(self, pts) -> float:
        n = pts.shape[0]
        return self.base.pair_energy(pts) + n * (n - 1) * self.shift


def default_kernel(surface):
    if surface.kind == "torus":
        return TorusEwald()
    return SphereGreen()


# ----------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------

def mean_zero_residual(kernel, x: np.ndarray, q: WeightedPointSet) -> float:
    """sum_j w_j G(x, y_j); tends to 0 as the quadrature refines."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    vals = kernel.eval_one_to_many(x, q.points)
    return float(np.add.reduce(vals * q.weights))


def fourier_mode_check(kernel, mode: tuple[int, int], x: np.ndarray,
                       q: WeightedPointSet) -> float:
    """|sum_j w_j G(x,y_j) cos(2 pi m.y_j) - cos(2 pi m.x)/(4 pi^2 |m|^2)|.

    Torus only; x should be aligned with the quadrature cell corners.  The
    sphere uses the Legendre projection check instead.
    """
    if kernel.surface.kind != "torus":
        raise ValueError("fourier_mode_check is only supported on the torus")
    m1, m2 = int(mode[0]), int(mode[1])
    if m1 == 0 and m2 == 0:
        raise ValueError("mode must be nonzero")
    x = np.asarray(x, dtype=np.float64).reshape(2)
    vals = kernel.eval_one_to_many(x, q.points)
    phases = np.cos(2 * math.pi * (m1 * q.points[:, 0] + m2 * q.points[:, 1]))
    quad = float(np.add.reduce(vals * q.weights * phases))
    target = math.cos(2 * math.pi * (m1 * x[0] + m2 * x[1])) \
        / (4 * math.pi ** 2 * (m1 * m1 + m2 * m2))
    return abs(quad - target)


def near_diagonal_sup(kernel, samples: int, stream: RandomStream,
                      d_lo: float = 1e-6, d_hi: float = 0.1,
                      coefficient: float | None = None) -> float:
    """sup over sampled pairs with geodesic distance in [d_lo, d_hi] of
    |G(x,y) + coefficient * log d|; default coefficient is vol(M)/(2 pi)."""
    surf = kernel.surface
    if coefficient is None:
        coefficient = surf.volume / (2 * math.pi)
    gen = stream.generator()
    d = np.exp(gen.uniform(math.log(d_lo), math.log(d_hi), samples))
    if surf.kind == "torus":
        x = gen.random((samples, 2))
        ang = gen.uniform(0, 2 * math.pi, samples)
        y = (x + d[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])) % 1.0
        g = kernel.eval(x, y)
    else:
        x = surf.sample_uniform(gen, samples)
        # rotate x by angle d around a random orthogonal axis
        t = gen.standard_normal((samples, 3))
        t -= (np.einsum("ij,ij->i", t, x))[:, None] * x
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        y = np.cos(d)[:, None] * x + np.sin(d)[:, None] * t
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        d = surf.distance(x, y)  # realized distances after normalization
        g = kernel.eval(x, y)
    return float(np.abs(np.asarray(g) + coefficient * np.log(d)).max())


# ----------------------------------------------------------------------
# sigma^2 = double integral of G^2 under the product measure
# ----------------------------------------------------------------------

def _e1_upper(x: float) -> float:
    """Upper bound e^{-x} log(1 + 1/x) >= E1(x), valid for all x > 0."""
    return math.exp(-x) * math.log1p(1.0 / x) if x < 700 else 0.0


def _near_diagonal_g2_mass(volume: float, c0: float, r: float) -> float:
    """Upper bound for int_{d<r} (c0 + (vol/2pi) |log d|)^2 dmu in geodesic
    polar coordinates (flat area element; fine for the r <= 0.1 used here)."""
    coef = volume / (2 * math.pi)

    def integrand(rho):
        return (c0 + coef * abs(math.log(rho))) ** 2 * 2 * math.pi * rho / volume

    val, _ = scipy.integrate.quad(integrand, 0.0, r, limit=200)
    return val * 1.1  # slack for the curved-area correction on the sphere


def sigma2(kernel, method: str = "auto", stream: RandomStream | None = None,
           pairs: int = 1_000_000, lattice_radius: int = 1500,
           resolution: int | None = None) -> Sigma2Report:
    """Second moment of the kernel under dx (x) dx, by the chosen route.

    Methods: SpectralSum (sphere), LatticeSum (torus), MonteCarlo,
    Quadrature.  "auto" picks the exact series for the kernel's surface.
    """
    kind = kernel.surface.kind
    if method == "auto":
        method = "SpectralSum" if kind == "sphere" else "LatticeSum"

    if method == "SpectralSum":
        if kind != "sphere":
            raise ValueError("SpectralSum applies to the sphere kernel")
        return kernel.sigma2_spectral()

    if method == "LatticeSum":
        if kind != "torus":
            raise ValueError("LatticeSum applies to the torus kernel")
        R = int(lattice_radius)
        m1 = np.arange(-R, R + 1, dtype=np.float64)
        total = 0.0
        for row in range(-R, R + 1):
            m2 = row * row + m1 * m1
            mask = (m2 > 0) & (m2 <= R * R)
            total += float(np.add.reduce(1.0 / m2[mask] ** 2))
        tail = math.pi / (R - math.sqrt(0.5)) ** 2
        c = 1.0 / (16 * math.pi ** 4)
        return Sigma2Report(c * total, "LatticeSum", c * tail,
                            {"radius": R, "tail_bound": c * tail})

    if method == "MonteCarlo":
        if stream is None:
            raise ValueError("MonteCarlo sigma2 needs a random stream")
        gen = stream.generator()
        surf = kernel.surface
        block = 200_000
        done = 0
        acc = 0.0
        acc2 = 0.0
        while done < pairs:
            b = min(block, pairs - done)
            X = surf.sample_uniform(gen, b)
            Y = surf.sample_uniform(gen, b)
            g2 = np.asarray(kernel.eval(X, Y)) ** 2
            acc += float(np.add.reduce(g2))
            acc2 += float(np.add.reduce(g2 * g2))
            done += b
        mean = acc / pairs
        var = max(acc2 / pairs - mean * mean, 0.0)
        se = math.sqrt(var / pairs)
        return Sigma2Report(mean, "MonteCarlo", se, {"pairs": pairs, "se": se})

    if method == "Quadrature":
        if kind == "torus":
            K = resolution or 512
            # grid differences repeat: sum over the K x K difference lattice
            u = np.arange(K, dtype=np.float64) / K
            uu, vv = np.meshgrid(u, u, indexing="ij")
            du = uu.ravel()
            dv = vv.ravel()
            F = kernel.table()
            g = _kernels.torus_green_table(F, du, dv)
            g[0] = 0.0
            val = float(np.add.reduce(g * g)) / (K * K)
            c0 = abs(kernel.h0) + 0.5
            bias = _near_diagonal_g2_mass(1.0, c0, math.sqrt(0.5) / K)
            return Sigma2Report(val, "Quadrature", bias,
                                {"resolution": K, "excluded_bias_bound": bias})
        N = resolution or 2048
        q = kernel.surface.quadrature(N)
        pts = q.points
        total = 0.0
        blk = 512
        for i0 in range(0, N, blk):
            x = pts[i0:i0 + blk]
            chord2 = np.maximum(2.0 - 2.0 * np.clip(x @ pts.T, -1.0, 1.0), 0.0)
            with np.errstate(divide="ignore"):
                g = math.log(4.0) + kernel.constant - np.log(chord2)
            g[~np.isfinite(g)] = 0.0
            total += float((g * g).sum())
        val = total / (N * N)
        r_cell = 2.0 / math.sqrt(N)  # generous local spacing bound
        bias = _near_diagonal_g2_mass(4 * math.pi, abs(math.log(4) - 1) + 1.0,
                                      r_cell)
        return Sigma2Report(val, "Quadrature", bias,
                            {"resolution": N, "excluded_bias_bound": bias})

    raise ValueError(f"unknown sigma2 method {method!r}")
