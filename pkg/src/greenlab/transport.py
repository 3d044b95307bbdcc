"""Quadratic-cost optimal transport between weighted point sets.

Three routes:

* `solve_exact` - network-flow LP (HiGHS dual simplex) with dual potentials;
  the reported duality gap is primal value minus the value of the
  feasibility-repaired duals, so it is a true optimality certificate.
* `solve_entropic` - log-domain Sinkhorn with epsilon scaling.  The reported
  value is the midpoint of a certified [lower, upper] sandwich: upper from a
  feasibility-rounded plan, lower from c-transformed duals.
* `solve_permutation` - brute-force assignment enumeration, the independent
  oracle for small equal-weight instances.

`w2_to_uniform` estimates W2(empirical measure, uniform) through a quadrature
proxy of the uniform measure and brackets the discretization bias.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .surfaces import WeightedPointSet

EXACT_AUTO_LIMIT = 1_000_000  # max n*m for the exact route in auto mode


class SolverError(RuntimeError):
    """Solver failed to converge or the LP terminated abnormally."""

    def __init__(self, message, marginal_err=None):
        super().__init__(message)
        self.marginal_err = marginal_err


@dataclass
class TransportResult:
    value: float                 # squared-cost transport value
    duality_gap: float
    solver: str
    iterations: int = 0
    epsilon: float = 0.0
    marginal_err: float = 0.0
    lower: float | None = None
    upper: float | None = None
    detail: dict = field(default_factory=dict)

    @property
    def w2(self) -> float:
        return math.sqrt(max(self.value, 0.0))


def _clean(wps: WeightedPointSet, name: str) -> tuple[np.ndarray, np.ndarray]:
    w = wps.weights
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} weights must sum to 1")
    if (w == 0).any():
        warnings.warn(f"dropping {(w == 0).sum()} zero-mass {name} points")
        keep = w > 0
        return wps.points[keep], w[keep]
    return wps.points, w


def _validate_cost(cost: np.ndarray, n: int, m: int) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (n, m):
        raise ValueError(f"cost matrix must have shape {(n, m)}")
    if not np.isfinite(cost).all() or (cost < 0).any():
        raise ValueError("cost entries must be finite and nonnegative")
    return cost


# ----------------------------------------------------------------------
# exact network-flow solve
# ----------------------------------------------------------------------

def solve_exact(sources: WeightedPointSet, sinks: WeightedPointSet,
                cost: np.ndarray) -> TransportResult:
    a_pts, a = _clean(sources, "source")
    b_pts, b = _clean(sinks, "sink")
    n, m = a.size, b.size
    full = _validate_cost(cost, len(sources), len(sinks))
    if n != len(sources) or m != len(sinks):
        keep_r = sources.weights > 0
        keep_c = sinks.weights > 0
        full = full[np.ix_(keep_r, keep_c)]
    nm = n * m
    ones = np.ones(nm)
    rows = sparse.csr_matrix(
        (ones, (np.repeat(np.arange(n), m), np.arange(nm))), shape=(n, nm))
    cols = sparse.csr_matrix(
        (ones, (np.tile(np.arange(m), n), np.arange(nm))), shape=(m, nm))
    A = sparse.vstack([rows, cols]).tocsc()
    rhs = np.concatenate([a, b])
    res = linprog(full.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None),
                  method="highs")
    if res.status != 0:
        raise SolverError(f"exact transport LP failed: {res.message}")
    value = float(res.fun)
    x = res.x.reshape(n, m)
    marg = max(float(np.abs(x.sum(axis=1) - a).max()),
               float(np.abs(x.sum(axis=0) - b).max()))
    phi = res.eqlin.marginals[:n]
    # repair dual feasibility exactly, then certify by weak duality
    psi = (full - phi[:, None]).min(axis=0)
    lower = float(a @ phi + b @ psi)
    gap = max(value - lower, 0.0)
    return TransportResult(value=value, duality_gap=gap, solver="ExactFlow",
                           iterations=int(getattr(res, "nit", 0)),
                           marginal_err=marg, lower=lower, upper=value,
                           detail={"lp_status": int(res.status)})


def solve_permutation(sources: WeightedPointSet, sinks: WeightedPointSet,
                      cost: np.ndarray) -> TransportResult:
    """Enumerate all assignments; n = m <= 9 with equal weights."""
    n, m = len(sources), len(sinks)
    if n != m or n > 9:
        raise ValueError("permutation oracle needs n = m <= 9")
    if (np.abs(sources.weights - 1.0 / n).max() > 1e-12
            or np.abs(sinks.weights - 1.0 / n).max() > 1e-12):
        raise ValueError("permutation oracle needs equal weights")
    cost = _validate_cost(cost, n, m)
    best = math.inf
    idx = np.arange(n)
    for perm in itertools.permutations(range(n)):
        v = float(cost[idx, perm].sum())
        if v < best:
            best = v
    return TransportResult(value=best / n, duality_gap=0.0,
                           solver="PermutationOracle",
                           iterations=math.factorial(n))


# ----------------------------------------------------------------------
# entropic solve (log-domain, blocked, certified sandwich)
# ----------------------------------------------------------------------

def _logsumexp_rows(M: np.ndarray) -> np.ndarray:
    mx = M.max(axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    s = np.exp(M - safe[:, None]).sum(axis=1)
    return np.where(np.isfinite(mx), np.log(s) + safe, -np.inf)


class _DenseCost:
    """Row-block access to a cost matrix, stored or generated on the fly."""

    def __init__(self, cost=None, X=None, Y=None, sq_dist=None, block=128):
        self._cost = cost
        self._X, self._Y, self._sq = X, Y, sq_dist
        self.block = block
        if cost is not None:
            self.shape = cost.shape
        else:
            self.shape = (X.shape[0], Y.shape[0])

    def rows(self, i0: int, i1: int) -> np.ndarray:
        if self._cost is not None:
            return self._cost[i0:i1]
        return self._sq(self._X[i0:i1], self._Y)

    def max(self) -> float:
        if self._cost is not None:
            return float(self._cost.max())
        out = 0.0
        for i0 in range(0, self.shape[0], self.block):
            out = max(out, float(self.rows(i0, min(i0 + self.block, self.shape[0])).max()))
        return out


def _sinkhorn_certified(costop: _DenseCost, a: np.ndarray, b: np.ndarray,
                        eps_final: float, eps_start: float, tol: float,
                        max_sweeps: int, gap_target: float | None):
    n, m = costop.shape
    loga = np.log(a)
    logb = np.log(b)
    phi = np.zeros(n)
    psi = np.zeros(m)
    blk = costop.block

    def sweep(eps):
        # phi update (rows exact afterwards)
        for i0 in range(0, n, blk):
            i1 = min(i0 + blk, n)
            C = costop.rows(i0, i1)
            phi[i0:i1] = -eps * _logsumexp_rows((psi[None, :] - C) / eps + logb[None, :])
        # psi update, streaming over row blocks
        run_max = np.full(m, -np.inf)
        run_sum = np.zeros(m)
        for i0 in range(0, n, blk):
            i1 = min(i0 + blk, n)
            C = costop.rows(i0, i1)
            B = (phi[i0:i1, None] - C) / eps + loga[i0:i1, None]
            bmax = B.max(axis=0)
            new_max = np.maximum(run_max, bmax)
            scale = np.where(np.isfinite(run_max), np.exp(run_max - new_max), 0.0)
            run_sum = run_sum * scale + np.exp(B - new_max[None, :]).sum(axis=0)
            run_max = new_max
        psi[:] = -eps * (np.log(run_sum) + run_max)

    def row_marginal_err(eps):
        err = 0.0
        for i0 in range(0, n, blk):
            i1 = min(i0 + blk, n)
            C = costop.rows(i0, i1)
            P = np.exp((phi[i0:i1, None] + psi[None, :] - C) / eps
                       + loga[i0:i1, None] + logb[None, :])
            err += float(np.abs(P.sum(axis=1) - a[i0:i1]).sum())
        return err

    def certificate(eps):
        # upper: scale rows of the plan, then pay for the residual exactly
        rowsum = np.zeros(n)
        rowcost = np.zeros(n)
        colsum = np.zeros(m)
        colsum_cost = None
        for i0 in range(0, n, blk):
            i1 = min(i0 + blk, n)
            C = costop.rows(i0, i1)
            P = np.exp((phi[i0:i1, None] + psi[None, :] - C) / eps
                       + loga[i0:i1, None] + logb[None, :])
            rowsum[i0:i1] = P.sum(axis=1)
            rowcost[i0:i1] = (P * C).sum(axis=1)
        scale = np.minimum(1.0, a / np.maximum(rowsum, 1e-300))
        for i0 in range(0, n, blk):
            i1 = min(i0 + blk, n)
            C = costop.rows(i0, i1)
            P = np.exp((phi[i0:i1, None] + psi[None, :] - C) / eps
                       + loga[i0:i1, None] + logb[None, :])
            colsum += scale[i0:i1] @ P
        upper = float(scale @ rowcost)
        da = a - scale * rowsum
        db = np.maximum(b - colsum, 0.0)
        delta_a = float(da.sum())
        delta_b = float(db.sum())
        if delta_a > 1e-15 and delta_b > 1e-15:
            # exact cost of the rank-one completion da (x) db / delta
            cross = 0.0
            for i0 in range(0, n, blk):
                i1 = min(i0 + blk, n)
                cross += float(da[i0:i1] @ costop.rows(i0, i1) @ db)
            upper += cross / delta_b
        # lower: c-transform of psi
        phi_hat = np.empty(n)
        for i0 in range(0, n, blk):
            i1 = min(i0 + blk, n)
            phi_hat[i0:i1] = (costop.rows(i0, i1) - psi[None, :]).min(axis=1)
        lower = float(a @ phi_hat + b @ psi)
        return lower, upper

    eps = eps_start
    sweeps = 0
    best = None
    while True:
        eps = max(eps, eps_final)
        inner_err = math.inf
        for _ in range(max_sweeps):
            sweep(eps)
            sweeps += 1
            inner_err = row_marginal_err(eps)
            if inner_err <= tol:
                break
        if eps <= eps_final * 1.0000001 or (gap_target is not None):
            lower, upper = certificate(eps)
            if best is None or (upper - lower) < (best[1] - best[0]):
                best = (lower, upper, eps, inner_err)
            if gap_target is not None and best is not None:
                lo, up = best[0], best[1]
                if up - lo <= gap_target * max(abs(up), 1e-12):
                    break
        if eps <= eps_final * 1.0000001:
            break
        eps *= 0.5
    lower, upper, eps_used, marg = best
    return lower, upper, eps_used, marg, sweeps


def solve_entropic(sources: WeightedPointSet, sinks: WeightedPointSet,
                   cost: np.ndarray | _DenseCost, epsilon: float | None = None,
                   schedule: float | None = None, tol: float = 1e-7,
                   max_sweeps: int = 60, gap_target: float | None = None
                   ) -> TransportResult:
    """Entropic transport value with a certified duality sandwich.

    `epsilon` is the final regularization; `schedule` the starting value of
    the epsilon-scaling (defaults: 2e-7 resp. 0.25 times the cost scale).
    `tol` is the L1 marginal tolerance per stage.  Raises SolverError if the
    marginals fail to reach `tol * 100` at the final stage.
    """
    a_pts, a = _clean(sources, "source")
    b_pts, b = _clean(sinks, "sink")
    if isinstance(cost, _DenseCost):
        costop = cost
    else:
        cost = _validate_cost(cost, len(sources), len(sinks))
        if a.size != len(sources) or b.size != len(sinks):
            cost = cost[np.ix_(sources.weights > 0, sinks.weights > 0)]
        costop = _DenseCost(cost=cost)
    scale = max(costop.max(), 1e-30)
    eps_final = float(epsilon) if epsilon is not None else 2e-7 * scale
    eps_start = float(schedule) if schedule is not None else 0.25 * scale
    eps_start = max(eps_start, eps_final)
    lower, upper, eps_used, marg, sweeps = _sinkhorn_certified(
        costop, a, b, eps_final, eps_start, tol, max_sweeps, gap_target)
    if marg > 100 * tol:
        raise SolverError("entropic solver failed to meet the marginal "
                          f"tolerance (err={marg:.3e})", marginal_err=marg)
    value = 0.5 * (lower + upper)
    return TransportResult(value=value, duality_gap=max(upper - lower, 0.0),
                           solver="Entropic", iterations=sweeps,
                           epsilon=eps_used, marginal_err=marg,
                           lower=lower, upper=upper)


# ----------------------------------------------------------------------
# W2 to the uniform measure through a quadrature proxy
# ----------------------------------------------------------------------

@dataclass
class W2Result:
    transport: TransportResult
    resolution: int
    bias_bound: float            # W2 distance between proxy and uniform
    w2: float
    w2_bracket: tuple[float, float]
    w2sq_bracket: tuple[float, float]

    @property
    def w2sq(self) -> float:
        return self.transport.value


def default_resolution(surface, n: int) -> int:
    if surface.kind == "torus":
        k = max(64, math.ceil(8 * math.sqrt(n)))
        return int(math.ceil(k / 64.0) * 64)
    return int(max(4096, 64 * n))


def w2_to_uniform(surface, pts: np.ndarray, resolution: int | None = None,
                  solver: str = "auto", gap_target: float = 5e-3,
                  epsilon: float | None = None) -> W2Result:
    """W2(empirical measure of pts, uniform) via a quadrature discretization.

    The proxy's own W2 distance to the uniform measure is attached as
    `bias_bound` and folded into the reported brackets.
    """
    pts = surface.validate_points(pts)
    n = pts.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    res = int(resolution) if resolution is not None else default_resolution(surface, n)
    quad = surface.quadrature(res)
    m = len(quad)
    if solver == "auto":
        solver = "exact" if n * m <= EXACT_AUTO_LIMIT else "entropic"
    mu = WeightedPointSet(pts, np.full(n, 1.0 / n))

    if solver == "exact":
        cost = surface.sq_dist_matrix(pts, quad.points)
        tres = solve_exact(mu, quad, cost)
    elif solver == "entropic":
        if surface.kind == "torus" and _is_grid_resolution(res):
            from ._gridflow import solve_torus_grid
            tres = solve_torus_grid(pts, res, gap_target=gap_target,
                                    epsilon=epsilon)
        else:
            costop = _DenseCost(X=pts, Y=quad.points,
                                sq_dist=surface.sq_dist_matrix,
                                block=max(1, 4_000_000 // max(m, 1)))
            tres = solve_entropic(mu, quad, costop, epsilon=epsilon,
                                  gap_target=gap_target)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    bias = surface.quadrature_w2_bias(res)
    w2 = tres.w2
    lo = max(w2 - bias, 0.0)
    hi = min(w2 + bias, surface.diameter)
    if tres.value > surface.diameter ** 2 * (1 + 1e-9):
        raise SolverError("transport value exceeds the squared diameter")
    return W2Result(transport=tres, resolution=res, bias_bound=bias, w2=w2,
                    w2_bracket=(lo, hi), w2sq_bracket=(lo * lo, hi * hi))


def _is_grid_resolution(res: int) -> bool:
    return res >= 16


def make_dense_cost(X, Y, sq_dist, block=128) -> _DenseCost:
    return _DenseCost(X=X, Y=Y, sq_dist=sq_dist, block=block)
