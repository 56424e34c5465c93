"""Offline synthesis: LQR gains, terminal cost, invariant sets, discretisation helpers."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import setops
from .setops import TemplatePolytope


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    Ts: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError("inconsistent A/B dimensions")
        if self.Ts <= 0:
            raise ValueError("sampling time must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def nx(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]


def holonomic_system(Ts: float = 0.1) -> LinearSystem:
    A = np.eye(4)
    A[0, 2] = A[1, 3] = Ts
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = Ts
    return LinearSystem(A, B, Ts)


@dataclass
class SynthesisResult:
    K: np.ndarray
    F: np.ndarray
    Emax: TemplatePolytope
    Zf: TemplatePolytope
    kappa_gain: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "K": self.K.tolist(),
                "F": self.F.tolist(),
                "Emax": self.Emax.to_dict(),
                "Zf": self.Zf.to_dict(),
                "kappa_gain": self.kappa_gain.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SynthesisResult":
        d = json.loads(text)
        return cls(
            K=np.array(d["K"]),
            F=np.array(d["F"]),
            Emax=TemplatePolytope.from_dict(d["Emax"]),
            Zf=TemplatePolytope.from_dict(d["Zf"]),
            kappa_gain=np.array(d["kappa_gain"]),
        )


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def dlqr(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000):
    """Discrete LQR by Riccati value iteration.

    Returns K for the convention u = K x (the minus sign is folded into K),
    so A + B K is the closed loop.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ G
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P_next))):
            P = P_next
            break
        P = P_next
    else:
        raise SynthesisError("Riccati iteration did not converge")
    G = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return -G


def terminal_cost(A, B, K, Q, R, scale: float = 2.0, transposed: bool = False,
                  tol: float = 1e-12, max_iter: int = 100_000):
    """Fixed point of F = scale * (Acl' F Acl + Q + K' R K), Acl = A + B K.

    With ``transposed=True`` the recursion uses Acl F Acl' instead.  The
    iteration contracts only when sqrt(scale) * rho(Acl) < 1.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.atleast_2d(np.asarray(B, float))
    K = np.atleast_2d(np.asarray(K, float))
    Acl = A + B @ K
    rho = spectral_radius(Acl)
    if np.sqrt(scale) * rho >= 1.0:
        raise SynthesisError(
            f"terminal cost recursion diverges: sqrt({scale})*rho(A+BK) = {np.sqrt(scale) * rho:.4f} >= 1"
        )
    M = Acl.T if transposed else Acl
    S = np.atleast_2d(np.asarray(Q, float)) + K.T @ np.atleast_2d(np.asarray(R, float)) @ K
    F = scale * S
    for _ in range(max_iter):
        F_next = scale * (M.T @ F @ M + S)
        if np.max(np.abs(F_next - F)) <= tol * max(1.0, np.max(np.abs(F_next))):
            F = F_next
            break
        F = F_next
    else:
        raise SynthesisError("terminal cost iteration did not converge")
    return 0.5 * (F + F.T)


def _map_supports(W: TemplatePolytope, mats, D):
    """sum_j h_W(M_j' d) for every row d of D."""
    total = np.zeros(len(D))
    for M in mats:
        total += setops.supports(W, D @ M)
    return total


def mrpi_approx(A_cl, W: TemplatePolytope, eps: float = 0.01, template=None, s_max: int = 200) -> TemplatePolytope:
    """Outer approximation of the minimal robust positive invariant set.

    Builds F_s = sum_{j<s} A^j W on ``template`` (default: W's normals) and
    picks the smallest s with A^s F_s inside alpha F_s, alpha <= eps/(1+eps);
    the result (1-alpha)^-1 F_s is then grown, if needed, until
    A_cl E + W is inside E on the template.
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, float))
    n = A_cl.shape[0]
    if W.dim != n:
        raise setops.SetError("disturbance set dimension must match A_cl")
    if spectral_radius(A_cl) >= 1.0:
        raise SynthesisError("A_cl is not Schur stable")
    D = W.normals if template is None else np.asarray(template, float)
    if not np.any(A_cl):
        return TemplatePolytope(D, setops.supports(W, D))

    alpha_target = eps / (1.0 + eps)
    hW = lambda M: setops.supports(W, D @ M)
    offsets = np.zeros(len(D))
    powers = [np.eye(n)]
    alpha = np.inf
    for s in range(1, s_max + 1):
        offsets = offsets + hW(powers[-1])
        powers.append(A_cl @ powers[-1])
        As = powers[-1]
        # A^s F_s contained in alpha F_s, exact supports of the Minkowski sum
        tail = sum(hW(As @ P) for P in powers[:-1])
        pos = offsets > 1e-12
        if np.any(tail[~pos] > 1e-12):
            continue
        alpha = float(np.max(tail[pos] / offsets[pos])) if np.any(pos) else 0.0
        if alpha <= alpha_target:
            break
    else:
        raise SynthesisError("mRPI iteration hit the step cap before converging")

    E = TemplatePolytope(D, offsets / (1.0 - alpha))
    return make_invariant(A_cl, W, E)


def make_invariant(A_cl, W: TemplatePolytope, E: TemplatePolytope, max_iter: int = 500) -> TemplatePolytope:
    """Grow template offsets until A_cl E + W is inside E (tiny inflation each pass)."""
    A_cl = np.atleast_2d(np.asarray(A_cl, float))
    hW = setops.supports(W, E.normals)
    # first try a uniform scaling: gamma (b - h_E(A'n)) >= h_W(n) on every facet
    margin = E.offsets - setops.supports(E, E.normals @ A_cl)
    if np.all(margin > 1e-12):
        gamma = max(1.0, float(np.max(hW / margin)))
        if gamma > 1.0:
            E = E.scale(gamma * (1.0 + 1e-9))
    for _ in range(max_iter):
        need = setops.supports(E, E.normals @ A_cl) + hW
        if np.all(need <= E.offsets + 1e-10):
            return E
        E = TemplatePolytope(E.normals, np.maximum(E.offsets, need) * (1.0 + 1e-6) + 1e-12)
    raise SynthesisError("could not reach a robust invariant template set")


def _nonredundant(Hn, hb, keep_fixed: int):
    """Drop rows of (Hn, hb) beyond the first ``keep_fixed`` that are implied by the rest."""
    keep = np.ones(len(hb), dtype=bool)
    for i in range(keep_fixed, len(hb)):
        keep[i] = False
        res = linprog(-Hn[i], A_ub=Hn[keep], b_ub=hb[keep], bounds=[(None, None)] * Hn.shape[1], method="highs")
        if res.status != 0 or -res.fun > hb[i] + 1e-9:
            keep[i] = True
    return Hn[keep], hb[keep]


def max_positive_invariant(A_cl, X: TemplatePolytope, U: TemplatePolytope | None = None, K_term=None,
                           max_iter: int = 100) -> TemplatePolytope:
    """Maximal positively invariant subset of X intersected with {x : K_term x in U}."""
    A_cl = np.atleast_2d(np.asarray(A_cl, float))
    H, h = X.normals, X.offsets
    if U is not None:
        Kt = np.atleast_2d(np.asarray(K_term, float))
        H = np.vstack([H, U.normals @ Kt])
        h = np.concatenate([h, U.offsets])
    omega = TemplatePolytope.from_inequalities(H, h)
    if omega.is_empty():
        return omega
    H, h = omega.normals, omega.offsets
    for _ in range(max_iter):
        Hp = H @ A_cl
        # rows of the preimage that actually cut the current set
        new_rows = []
        for a, b in zip(Hp, h):
            na = np.linalg.norm(a)
            if na < 1e-14:
                if b < -1e-12:
                    return TemplatePolytope.from_inequalities(np.zeros((1, A_cl.shape[0])), [-1.0])
                continue
            try:
                cuts = setops.support(TemplatePolytope(H, h), a / na) > b / na + 1e-9
            except setops.SetError:
                cuts = True  # unbounded in that direction
            if cuts:
                new_rows.append((a / na, b / na))
        if not new_rows:
            return TemplatePolytope(H, h)
        H = np.vstack([H] + [r[0][None] for r in new_rows])
        h = np.concatenate([h, [r[1] for r in new_rows]])
        if TemplatePolytope(H, h).is_empty():
            return TemplatePolytope(H, h)
        H, h = _nonredundant(H, h, 0)
    raise SynthesisError("invariant-set iteration hit the cap")


def zoh_scalar(k_continuous: float, Ts: float) -> float:
    """Discrete decay factor of de/dt = -k e over one hold interval."""
    if np.isinf(k_continuous):
        return 0.0
    return float(np.exp(-k_continuous * Ts))


def rk4_step(f, x, u, w, Ts: float):
    x = np.asarray(x, dtype=float)
    k1 = f(x, u, w)
    k2 = f(x + 0.5 * Ts * k1, u, w)
    k3 = f(x + 0.5 * Ts * k2, u, w)
    k4 = f(x + Ts * k3, u, w)
    return x + (Ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
