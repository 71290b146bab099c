#!/usr/bin/env python3

# mma.py
"""
Method of moving asymptotes for problems of the form

    minimize    f_0(x) + a0*z + sum(c_i*y_i + 0.5*d_i*y_i^2)
    subject to  f_i(x) - a_i*z - y_i <= 0,     i = 1..m
                xmin_j <= x_j <= xmax_j,       y_i >= 0, z >= 0

Each call to mma_step builds the separable convex approximation around the
current design and solves it with a primal-dual interior point method.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

EPSI_MIN = 1e-7
RAA0 = 1e-5
ALBEFA = 0.1


class OptimizationError(Exception):
    """Base class for optimization errors. Carries the iteration history when known."""

    def __init__(self, message: str, history: Optional[list] = None):
        super().__init__(message)
        self.history = history if history is not None else []
        self.history_path = None


class MmaSubproblemError(OptimizationError):
    """Raised when the interior point iteration fails to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class MmaParams:
    move_limit: float = 0.2
    asymptote_init: float = 0.5
    asymptote_incr: float = 1.2
    asymptote_decr: float = 0.7
    subproblem_tol: float = 1e-3
    a0: float = 1.0
    c: float = 1000.0
    d: float = 1.0

    def __post_init__(self):
        if not 0 < self.move_limit < 1:
            raise ValueError(f"move_limit must lie in (0, 1), got {self.move_limit}")
        if not self.asymptote_incr > 1 > self.asymptote_decr > 0:
            raise ValueError("Asymptote factors must satisfy incr > 1 > decr > 0")
        if not 0 < self.asymptote_init <= 1:
            raise ValueError(f"asymptote_init must lie in (0, 1], got {self.asymptote_init}")
        if not self.subproblem_tol > 0:
            raise ValueError("subproblem_tol must be positive")


@dataclass
class MmaState:
    """Designs of the two previous iterations and the current asymptotes."""
    iteration: int = 0
    xold1: Optional[np.ndarray] = None
    xold2: Optional[np.ndarray] = None
    low: Optional[np.ndarray] = None
    upp: Optional[np.ndarray] = None
    residual: float = 0.0


def move_asymptotes(x: np.ndarray, xmin: np.ndarray, xmax: np.ndarray, state: MmaState,
                    params: MmaParams) -> Tuple[np.ndarray, np.ndarray]:
    span = xmax - xmin
    if state.iteration <= 2 or state.low is None:
        return x - params.asymptote_init * span, x + params.asymptote_init * span
    oscillation = (x - state.xold1) * (state.xold1 - state.xold2)
    factor = np.ones_like(x)
    factor[oscillation > 0] = params.asymptote_incr
    factor[oscillation < 0] = params.asymptote_decr
    low = x - factor * (state.xold1 - state.low)
    upp = x + factor * (state.upp - state.xold1)
    low = np.clip(low, x - 10 * span, x - 0.01 * span)
    upp = np.clip(upp, x + 0.01 * span, x + 10 * span)
    return low, upp


def move_limits(x: np.ndarray, xmin: np.ndarray, xmax: np.ndarray, low: np.ndarray, upp: np.ndarray,
                params: MmaParams) -> Tuple[np.ndarray, np.ndarray]:
    alfa = np.maximum.reduce([low + ALBEFA * (x - low), x - params.move_limit, xmin])
    beta = np.minimum.reduce([upp - ALBEFA * (upp - x), x + params.move_limit, xmax])
    return alfa, beta


def approximation(x: np.ndarray, xmin: np.ndarray, xmax: np.ndarray, low: np.ndarray, upp: np.ndarray,
                  df0dx: np.ndarray, fval: np.ndarray, dfdx: np.ndarray):
    """Coefficients p0, q0, P, Q, b of the convex separable approximation."""
    xmamiinv = 1.0 / np.maximum(xmax - xmin, 1e-5)
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    p0 = np.maximum(df0dx, 0)
    q0 = np.maximum(-df0dx, 0)
    pq0 = 0.001 * (p0 + q0) + RAA0 * xmamiinv
    p0 = (p0 + pq0) * ux2
    q0 = (q0 + pq0) * xl2
    P = np.maximum(dfdx, 0)
    Q = np.maximum(-dfdx, 0)
    PQ = 0.001 * (P + Q) + RAA0 * xmamiinv[None, :]
    P = (P + PQ) * ux2[None, :]
    Q = (Q + PQ) * xl2[None, :]
    b = P @ (1.0 / (upp - x)) + Q @ (1.0 / (x - low)) - fval
    return p0, q0, P, Q, b


def _kkt_residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi, low, upp, alfa, beta,
                  p0, q0, P, Q, b, a0, a, c, d) -> np.ndarray:
    ux1 = upp - x
    xl1 = x - low
    plam = p0 + P.T @ lam
    qlam = q0 + Q.T @ lam
    gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
    return np.concatenate((
        plam / ux1 ** 2 - qlam / xl1 ** 2 - xsi + eta,
        c + d * y - mu - lam,
        [a0 - zet - a @ lam],
        gvec - a * z - y + s - b,
        xsi * (x - alfa) - epsi,
        eta * (beta - x) - epsi,
        mu * y - epsi,
        [zet * z - epsi],
        lam * s - epsi,
    ))


def subsolve(low, upp, alfa, beta, p0, q0, P, Q, b, a0, a, c, d, max_newton: int = 200):
    """
    Primal-dual Newton iteration on the relaxed KKT conditions, reducing
    the relaxation epsi by 10 down to EPSI_MIN.

    Returns:
        (x, y, z, lam, residual_max, stalled)
    """
    m, n = P.shape
    x = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / (x - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(np.ones(m), 0.5 * c)
    zet = 1.0
    s = np.ones(m)
    epsi = 1.0
    stalled = False
    residual_max = np.inf

    def residual(*point):
        return _kkt_residual(*point, epsi, low, upp, alfa, beta, p0, q0, P, Q, b, a0, a, c, d)

    while epsi > EPSI_MIN:
        res = residual(x, y, z, lam, xsi, eta, mu, zet, s)
        residual_norm = np.linalg.norm(res)
        residual_max = np.max(np.abs(res))
        newton = 0
        while residual_max > 0.9 * epsi and newton < max_newton:
            newton += 1
            ux1 = upp - x
            xl1 = x - low
            uxinv2 = 1.0 / ux1 ** 2
            xlinv2 = 1.0 / xl1 ** 2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
            GG = P * uxinv2[None, :] - Q * xlinv2[None, :]
            dpsidx = plam * uxinv2 - qlam * xlinv2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2 * (plam / ux1 ** 3 + qlam / xl1 ** 3) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy
            if m < n:
                GGx = GG / diagx[None, :]
                AA = np.empty((m + 1, m + 1))
                AA[:m, :m] = np.diag(diaglamyi) + GGx @ GG.T
                AA[:m, m] = a
                AA[m, :m] = a
                AA[m, m] = -zet / z
                bb = np.concatenate((dellam + dely / diagy - GGx @ delx, [delz]))
                solution = np.linalg.solve(AA, bb)
                dlam = solution[:m]
                dz = solution[m]
                dx = -delx / diagx - (GG.T @ dlam) / diagx
            else:
                dellamyi = dellam + dely / diagy
                weights = 1.0 / diaglamyi
                AA = np.empty((n + 1, n + 1))
                AA[:n, :n] = np.diag(diagx) + GG.T @ (GG * weights[:, None])
                AA[:n, n] = -GG.T @ (a * weights)
                AA[n, :n] = AA[:n, n]
                AA[n, n] = zet / z + a @ (a * weights)
                bb = -np.concatenate((delx + GG.T @ (dellamyi * weights), [delz - a @ (dellamyi * weights)]))
                solution = np.linalg.solve(AA, bb)
                dx = solution[:n]
                dz = solution[n]
                dlam = (GG @ dx) * weights - dz * a * weights + dellamyi * weights
            dy = (dlam - dely) / diagy
            dxsi = -xsi + (epsi - xsi * dx) / (x - alfa)
            deta = -eta + (epsi + eta * dx) / (beta - x)
            dmu = -mu + (epsi - mu * dy) / y
            dzet = -zet + (epsi - zet * dz) / z
            ds = -s + (epsi - s * dlam) / lam

            # largest step keeping every multiplier and slack positive
            xx = np.concatenate((y, [z], lam, xsi, eta, mu, [zet], s))
            dxx = np.concatenate((dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds))
            bound = max(np.max(-1.01 * dxx / xx), np.max(-1.01 * dx / (x - alfa)),
                        np.max(1.01 * dx / (beta - x)), 1.0)
            step = 1.0 / bound
            start = (x, y, z, lam, xsi, eta, mu, zet, s)
            direction = (dx, dy, dz, dlam, dxsi, deta, dmu, dzet, ds)
            for _ in range(50):
                trial = tuple(v + step * dv for v, dv in zip(start, direction))
                res = residual(*trial)
                if np.linalg.norm(res) <= residual_norm:
                    break
                step /= 2
            x, y, z, lam, xsi, eta, mu, zet, s = trial
            residual_norm = np.linalg.norm(res)
            residual_max = np.max(np.abs(res))
        stalled = newton >= max_newton
        epsi *= 0.1
    return x, y, z, lam, float(residual_max), stalled


def mma_step(x: np.ndarray, f0val: float, df0dx: np.ndarray, fval: np.ndarray, dfdx: np.ndarray,
             xmin: np.ndarray, xmax: np.ndarray, params: MmaParams, state: MmaState) -> np.ndarray:
    """
    One MMA iteration. state is advanced in place.

    Args:
        x: current design (n,)
        f0val, df0dx: objective value and gradient (n,)
        fval, dfdx: constraint values (m,) and gradients (m, n), feasible when <= 0

    Returns:
        the new design, within [max(xmin, x - move), min(xmax, x + move)]

    Raises:
        MmaSubproblemError: non-finite subproblem solution or residual above tolerance
    """
    x = np.asarray(x, dtype=float)
    fval = np.atleast_1d(np.asarray(fval, dtype=float))
    dfdx = np.atleast_2d(np.asarray(dfdx, dtype=float))
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), x.shape)
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), x.shape)
    m, n = dfdx.shape
    if m < 1 or n != x.size or fval.size != m or np.size(df0dx) != n:
        raise ValueError(f"Inconsistent MMA dimensions: x {x.size}, df0dx {np.size(df0dx)}, "
                         f"fval {fval.size}, dfdx {dfdx.shape}")
    state.iteration += 1
    low, upp = move_asymptotes(x, xmin, xmax, state, params)
    alfa, beta = move_limits(x, xmin, xmax, low, upp, params)
    p0, q0, P, Q, b = approximation(x, xmin, xmax, low, upp, np.asarray(df0dx, dtype=float), fval, dfdx)
    xnew, _, _, _, residual, stalled = subsolve(
        low, upp, alfa, beta, p0, q0, P, Q, b,
        params.a0, np.zeros(m), np.full(m, params.c), np.full(m, params.d))
    if not np.all(np.isfinite(xnew)):
        raise MmaSubproblemError("MMA subproblem produced a non-finite design", residual)
    if stalled and residual > params.subproblem_tol:
        raise MmaSubproblemError(f"MMA subproblem residual {residual:.3e} above tolerance "
                                 f"{params.subproblem_tol:.1e}", residual)
    state.xold2 = state.xold1
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    state.residual = residual
    return np.clip(xnew, alfa, beta)
