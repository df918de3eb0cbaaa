"""Dense active-set QP over box constraints with optional equality locking.

Problems here are tiny (<= 9 variables), so everything is dense numpy and
each solve is verified against first-order optimality conditions by an
independent checker that recomputes multipliers from scratch.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class QpError(RuntimeError):
    pass


@dataclass
class QpResult:
    x: np.ndarray
    iterations: int
    active_lower: np.ndarray
    active_upper: np.ndarray


def _null_space_basis(A: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal basis of the null space of A (n columns problem space)."""
    if A.size == 0:
        return np.eye(n)
    u, s, vt = np.linalg.svd(A, full_matrices=True)
    tol = max(A.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def solve_box_qp(
    H: np.ndarray,
    g: np.ndarray,
    A: np.ndarray | None = None,
    b: np.ndarray | None = None,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    x0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iters: int = 100,
) -> QpResult:
    """Minimize 0.5 x'Hx + g'x subject to A x = b and lower <= x <= upper.

    H must be positive definite. x0, when given, must satisfy the equality
    constraints exactly and the box within tolerance; the cascade always has
    such a point (the previous level's solution), which also guarantees
    feasibility by construction.
    """
    n = H.shape[0]
    g = np.asarray(g, dtype=float).ravel()
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float).ravel()
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float).ravel()
    if np.any(lower > upper):
        raise QpError("inconsistent bounds: lower > upper")
    A = np.zeros((0, n)) if A is None or np.size(A) == 0 else np.asarray(A, dtype=float).reshape(-1, n)
    b = np.zeros(0) if b is None or np.size(b) == 0 else np.asarray(b, dtype=float).ravel()

    # Pinned variables (degenerate box rows) become equality constraints.
    pinned = np.where(np.isfinite(lower) & (upper - lower <= tol))[0]
    if pinned.size:
        rows = np.zeros((pinned.size, n))
        rows[np.arange(pinned.size), pinned] = 1.0
        A = np.vstack([A, rows])
        b = np.concatenate([b, 0.5 * (lower[pinned] + upper[pinned])])

    if x0 is not None:
        x_p = np.asarray(x0, dtype=float).ravel().copy()
        if A.shape[0] and np.max(np.abs(A @ x_p - b)) > 1e-8:
            raise QpError("x0 does not satisfy the equality constraints")
    elif A.shape[0]:
        x_p, *_ = np.linalg.lstsq(A, b, rcond=None)
    else:
        x_p = np.zeros(n)
    x_p = np.clip(x_p, lower, upper)

    Z = _null_space_basis(A, n)
    if Z.shape[1] == 0:
        x = np.clip(x_p, lower, upper)
        return QpResult(x, 0, np.abs(x - lower) <= 1e-9, np.abs(x - upper) <= 1e-9)

    # Reduced problem in y with x = x_p + Z y; box rows become G y <= h.
    Hr = Z.T @ H @ Z
    gr = Z.T @ (g + H @ x_p)
    live = np.max(np.abs(Z), axis=1) > 1e-13
    up_rows = live & np.isfinite(upper)
    lo_rows = live & np.isfinite(lower)
    G = np.vstack([Z[up_rows], -Z[lo_rows]])
    h = np.concatenate([upper[up_rows] - x_p[up_rows], x_p[lo_rows] - lower[lo_rows]])

    nz = Z.shape[1]
    y = np.zeros(nz)
    working: list[int] = []
    in_working = np.zeros(G.shape[0], dtype=bool)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        m = len(working)
        K = np.zeros((nz + m, nz + m))
        K[:nz, :nz] = Hr
        rhs = np.empty(nz + m)
        rhs[:nz] = -gr
        if m:
            Gw = G[working]
            K[:nz, nz:] = Gw.T
            K[nz:, :nz] = Gw
            rhs[nz:] = h[working]
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        y_star = sol[:nz]
        mu = sol[nz:]
        p = y_star - y
        if not np.any(np.abs(p) > tol):
            if m == 0 or mu.min() >= -tol:
                break
            drop = int(np.argmin(mu))
            in_working[working[drop]] = False
            working.pop(drop)
            continue
        gp = G @ p
        slackness = h - G @ y
        candidates = ~in_working & (gp > tol)
        alpha = 1.0
        blocking = -1
        if np.any(candidates):
            ratios = np.full(G.shape[0], np.inf)
            ratios[candidates] = slackness[candidates] / gp[candidates]
            blocking = int(np.argmin(ratios))
            if ratios[blocking] < alpha:
                alpha = max(float(ratios[blocking]), 0.0)
            else:
                blocking = -1
        y = y + alpha * p
        if blocking >= 0:
            working.append(blocking)
            in_working[blocking] = True
    else:
        raise QpError(f"active-set iteration limit {max_iters} exceeded")

    x = np.clip(x_p + Z @ y, lower, upper)
    return QpResult(
        x,
        iterations,
        np.isfinite(lower) & (np.abs(x - lower) <= 1e-9),
        np.isfinite(upper) & (np.abs(x - upper) <= 1e-9),
    )


def kkt_residual(
    H: np.ndarray,
    g: np.ndarray,
    A: np.ndarray | None,
    b: np.ndarray | None,
    lower: np.ndarray | None,
    upper: np.ndarray | None,
    x: np.ndarray,
    active_tol: float = 1e-8,
) -> float:
    """Independent first-order optimality check for a box/equality QP.

    Recomputes multipliers by least squares from the stationarity condition
    and returns the worst violation across stationarity, primal and dual
    feasibility, and complementary slackness. Does not reuse any solver
    internals.
    """
    n = x.size
    g = np.asarray(g, dtype=float).ravel()
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float).ravel()
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float).ravel()
    A = np.zeros((0, n)) if A is None or np.size(A) == 0 else np.asarray(A, dtype=float).reshape(-1, n)
    b = np.zeros(0) if b is None or np.size(b) == 0 else np.asarray(b, dtype=float).ravel()

    residual = 0.0
    if A.shape[0]:
        residual = max(residual, float(np.max(np.abs(A @ x - b))))
    residual = max(residual, float(np.max(lower - x, initial=0.0)))
    residual = max(residual, float(np.max(x - upper, initial=0.0)))

    # Pinned variables act as equalities: their multiplier sign is free.
    pinned = np.isfinite(lower) & np.isfinite(upper) & (upper - lower <= active_tol)
    if np.any(pinned):
        rows = np.zeros((int(np.sum(pinned)), n))
        rows[np.arange(rows.shape[0]), np.where(pinned)[0]] = 1.0
        A = np.vstack([A, rows])

    act_lo = np.isfinite(lower) & (x - lower <= active_tol) & ~pinned
    act_hi = np.isfinite(upper) & (upper - x <= active_tol) & ~pinned

    # Stationarity: H x + g + A' nu - mu_lo + mu_hi = 0 on active rows, with
    # mu >= 0. The multiplier split can be non-unique (active bounds plus
    # equality rows may be overcomplete), so the decomposition is solved as
    # a sign-constrained least-squares feasibility problem rather than a
    # plain pseudoinverse, whose minimum-norm split can go spuriously
    # negative at true optima.
    from scipy.optimize import lsq_linear

    cols = [A.T] if A.shape[0] else []
    lo_idx = np.where(act_lo)[0]
    hi_idx = np.where(act_hi)[0]
    for i in lo_idx:
        e = np.zeros(n)
        e[i] = -1.0
        cols.append(e[:, None])
    for i in hi_idx:
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(e[:, None])
    rhs = -(H @ x + g)
    if cols:
        M = np.hstack(cols)
        n_free = A.shape[0]
        n_mu = M.shape[1] - n_free
        if n_mu:
            lb = np.concatenate([np.full(n_free, -np.inf), np.zeros(n_mu)])
            # scipy's TRF path emits benign runtime warnings on degenerate
            # working sets; the returned solution is still usable.
            with np.errstate(invalid="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = lsq_linear(M, rhs, bounds=(lb, np.full(M.shape[1], np.inf)))
            lam = fit.x
        else:
            lam, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        residual = max(residual, float(np.max(np.abs(M @ lam - rhs), initial=0.0)))
        mu = lam[n_free:]
        if mu.size:
            residual = max(residual, float(np.max(-mu, initial=0.0)))
            # Complementary slackness: multipliers exist only on active rows,
            # so check the activation gap they pair with.
            gaps = np.concatenate([np.abs(x[lo_idx] - lower[lo_idx]),
                                   np.abs(upper[hi_idx] - x[hi_idx])])
            residual = max(residual, float(np.max(np.abs(mu) * gaps)))
    else:
        residual = max(residual, float(np.max(np.abs(rhs), initial=0.0)))
    return residual
