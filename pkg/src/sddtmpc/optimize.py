"""Dense active-set QP solver and a penalty-based particle swarm optimiser."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

FEAS_TOL = 1e-6


@dataclass
class QpProblem:
    """min 0.5 x'Hx + f'x  s.t.  A_ineq x <= b_ineq,  A_eq x = b_eq."""

    H: np.ndarray
    f: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, float))
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("H must be square")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-9:
            raise ValueError("H must be symmetric")
        self.f = np.asarray(self.f, float).reshape(n)
        self.A_ineq = np.zeros((0, n)) if self.A_ineq is None else np.atleast_2d(np.asarray(self.A_ineq, float)).reshape(-1, n)
        self.b_ineq = np.zeros(0) if self.b_ineq is None else np.asarray(self.b_ineq, float).reshape(-1)
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float)).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        if len(self.b_ineq) != len(self.A_ineq) or len(self.b_eq) != len(self.A_eq):
            raise ValueError("constraint matrix/vector size mismatch")

    @property
    def n(self):
        return self.H.shape[0]

    def objective(self, x):
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def violation(self, x) -> float:
        v = 0.0
        if len(self.b_ineq):
            v = max(v, float(np.max(self.A_ineq @ x - self.b_ineq)))
        if len(self.b_eq):
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        return max(v, 0.0)


@dataclass
class SolveReport:
    solution: np.ndarray
    objective: float
    constraint_violation: float
    iterations_used: int
    wall_time: float
    feasible: bool
    history: list = field(default_factory=list)
    feasible_history: list = field(default_factory=list)
    message: str = ""


def _phase_one(p: QpProblem):
    """Any feasible point (LP with zero cost) or None."""
    res = linprog(
        np.zeros(p.n),
        A_ub=p.A_ineq if len(p.b_ineq) else None,
        b_ub=p.b_ineq if len(p.b_ineq) else None,
        A_eq=p.A_eq if len(p.b_eq) else None,
        b_eq=p.b_eq if len(p.b_eq) else None,
        bounds=[(None, None)] * p.n,
        method="highs",
    )
    if res.status != 0:
        return None
    return res.x


def _kkt_solve(H, g, Aw):
    """Step p and multipliers for min 0.5p'Hp + g'p s.t. Aw p = 0."""
    n, m = H.shape[0], Aw.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(p: QpProblem, x0=None, max_iter: int | None = None) -> SolveReport:
    """Primal active-set method; equalities stay in the working set throughout."""
    t0 = time.perf_counter()
    n_eq, n_in = len(p.b_eq), len(p.b_ineq)
    if max_iter is None:
        max_iter = max(50, 10 * (n_eq + n_in))

    x = None
    if x0 is not None:
        x0 = np.asarray(x0, float)
        if p.violation(x0) <= 1e-9:
            x = x0.copy()
    if x is None:
        x = _phase_one(p)
    if x is None:
        # report the least-violating point we can find cheaply
        xr = np.linalg.lstsq(p.H + 1e-9 * np.eye(p.n), -p.f, rcond=None)[0]
        return SolveReport(xr, p.objective(xr), p.violation(xr), 0, time.perf_counter() - t0, False,
                           message="infeasible")

    slack = p.b_ineq - p.A_ineq @ x
    W = [i for i in range(n_in) if abs(slack[i]) <= 1e-10]
    # keep the working set linearly independent
    W = _independent(p, W)

    it = 0
    for it in range(1, max_iter + 1):
        Aw = np.vstack([p.A_eq, p.A_ineq[W]]) if W else p.A_eq
        g = p.H @ x + p.f
        step, lam = _kkt_solve(p.H, g, Aw)
        if np.max(np.abs(step)) <= 1e-12 * max(1.0, np.max(np.abs(x))):
            mu = lam[n_eq:]
            if len(mu) == 0 or np.min(mu) >= -1e-10:
                break
            W.pop(int(np.argmin(mu)))
            continue
        # ratio test over inactive inequalities
        alpha, blocking = 1.0, None
        Ad = p.A_ineq @ step
        for i in range(n_in):
            if i in W or Ad[i] <= 1e-14:
                continue
            a = (p.b_ineq[i] - p.A_ineq[i] @ x) / Ad[i]
            if a < alpha:
                alpha, blocking = max(a, 0.0), i
        x = x + alpha * step
        if blocking is not None:
            W.append(blocking)
            W = _independent(p, W)
    else:
        viol = p.violation(x)
        return SolveReport(x, p.objective(x), viol, it, time.perf_counter() - t0, viol <= FEAS_TOL,
                           message="iteration cap")
    viol = p.violation(x)
    return SolveReport(x, p.objective(x), viol, it, time.perf_counter() - t0, viol <= FEAS_TOL, message="optimal")


def _independent(p: QpProblem, W):
    kept = []
    for i in W:
        rows = np.vstack([p.A_eq, p.A_ineq[kept + [i]]])
        if np.linalg.matrix_rank(rows, tol=1e-10) == rows.shape[0]:
            kept.append(i)
    return kept


# --------------------------------------------------------------------------- swarm


@dataclass
class SwarmConfig:
    particles: int = 50
    iterations: int = 60
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    penalty_weight: float = 1e4
    seed: int = 0
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.particles <= 0 or self.iterations < 0:
            raise ValueError("particle and iteration counts must be positive")


def pso_minimize(objective, constraints, cfg: SwarmConfig, warm_start=None, vectorized: bool = False) -> SolveReport:
    """Global-best PSO on objective + penalty * sum(max(0, residual)^2).

    ``objective(x)`` returns a scalar and ``constraints(x)`` a residual vector
    (<= 0 is satisfied).  With ``vectorized=True`` both receive the whole swarm
    as a (particles, n) array and return (particles,) / (particles, m).
    The returned point is the best feasible one seen, or the best penalised
    one if nothing feasible turned up.
    """
    t0 = time.perf_counter()
    lo = np.asarray(cfg.lower, float)
    hi = np.asarray(cfg.upper, float)
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo > hi):
        raise ValueError("swarm bounds must be finite with lower <= upper")
    n = lo.size
    rng = np.random.default_rng(cfg.seed)
    span = hi - lo

    def evaluate(X):
        if vectorized:
            f = np.asarray(objective(X), float)
            r = np.asarray(constraints(X), float) if constraints is not None else np.zeros((len(X), 0))
        else:
            f = np.array([objective(x) for x in X], float)
            r = (np.array([np.atleast_1d(constraints(x)) for x in X], float)
                 if constraints is not None else np.zeros((len(X), 0)))
        r = r.reshape(len(X), -1)
        pos = np.maximum(r, 0.0)
        viol = pos.max(axis=1) if pos.shape[1] else np.zeros(len(X))
        pen = f + cfg.penalty_weight * np.sum(pos ** 2, axis=1)
        pen = np.where(np.isfinite(pen), pen, np.inf)
        return f, pen, viol

    X = lo + rng.random((cfg.particles, n)) * span
    if warm_start is not None:
        X[0] = np.clip(np.asarray(warm_start, float), lo, hi)
    V = (rng.random((cfg.particles, n)) - 0.5) * span * 0.2
    f, pen, viol = evaluate(X)
    pbest, pbest_pen = X.copy(), pen.copy()
    g = int(np.argmin(pen))
    gbest, gbest_pen = X[g].copy(), pen[g]

    feas_x, feas_f = None, np.inf

    def track_feasible(X, f, viol):
        nonlocal feas_x, feas_f
        ok = viol <= FEAS_TOL
        if np.any(ok):
            idx = np.flatnonzero(ok)
            j = idx[np.argmin(f[idx])]
            if f[j] < feas_f:
                feas_x, feas_f = X[j].copy(), float(f[j])

    track_feasible(X, f, viol)
    history = [float(gbest_pen)]
    feasible_history = [feas_f]

    vmax = 0.5 * span
    for _ in range(cfg.iterations):
        r1 = rng.random((cfg.particles, n))
        r2 = rng.random((cfg.particles, n))
        V = cfg.inertia * V + cfg.cognitive * r1 * (pbest - X) + cfg.social * r2 * (gbest - X)
        V = np.clip(V, -vmax, vmax)
        X = np.clip(X + V, lo, hi)
        f, pen, viol = evaluate(X)
        better = pen < pbest_pen
        pbest[better] = X[better]
        pbest_pen[better] = pen[better]
        g = int(np.argmin(pbest_pen))
        if pbest_pen[g] < gbest_pen:
            gbest, gbest_pen = pbest[g].copy(), pbest_pen[g]
        track_feasible(X, f, viol)
        history.append(float(gbest_pen))
        feasible_history.append(feas_f)

    if feas_x is not None:
        x_best = feas_x
    else:
        x_best = gbest
    fb, _, vb = evaluate(x_best[None, :])
    return SolveReport(
        solution=x_best,
        objective=float(fb[0]),
        constraint_violation=float(vb[0]),
        iterations_used=cfg.iterations,
        wall_time=time.perf_counter() - t0,
        feasible=bool(vb[0] <= FEAS_TOL),
        history=history,
        feasible_history=feasible_history,
    )
