"""MPC, tube MPC and state-dependent dynamic tube MPC for the planar double integrator."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import fis, setops, synthesis
from .optimize import QpProblem, SolveReport, SwarmConfig, pso_minimize, solve_qp
from .setops import TemplatePolytope

Q_STAGE = np.diag([100.0, 100.0, 1.0, 1.0])
R_STAGE = np.eye(2)
Q_ANCILLARY = np.diag([100.0, 100.0, 0.1, 0.1])
Q_KAPPA = np.diag([10.0, 10.0, 1.0, 1.0])
U_MAX = 5.0
V_MAX = 2.0
VEL_ROWS = np.array([[0, 0, 1.0, 0], [0, 0, -1.0, 0], [0, 0, 0, 1.0], [0, 0, 0, -1.0]])
U_ROWS = np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [0, -1.0]])
FEAS = 1e-6


# --------------------------------------------------------------------------- offline design


@dataclass
class LinearDesign:
    system: synthesis.LinearSystem
    K: np.ndarray
    kappa: np.ndarray
    F: np.ndarray
    W2: TemplatePolytope
    Emax: TemplatePolytope
    Zf_mpc: TemplatePolytope
    Zf_tmpc: TemplatePolytope

    @property
    def A(self):
        return self.system.A

    @property
    def B(self):
        return self.system.B

    @property
    def Acl(self):
        return self.system.A + self.system.B @ self.K

    @property
    def input_tightening(self) -> np.ndarray:
        """h_{K Emax} on the input box rows."""
        return setops.supports(self.Emax, U_ROWS @ self.K)

    def synthesis_result(self) -> synthesis.SynthesisResult:
        return synthesis.SynthesisResult(self.K, self.F, self.Emax, self.Zf_tmpc, self.kappa)


def tube_template(Acl, K, depth: int = 10) -> np.ndarray:
    """Box/diagonal directions, gain rows and corridor normals closed under Acl' for ``depth`` steps."""
    corridor = np.array([[1.0, 8.0, 0, 0], [1.0, -8.0, 0, 0]]) / np.sqrt(65.0)
    T = setops.merge_templates(setops.box_diagonal_template(4), np.vstack([K, -K]), corridor)
    dirs, M = [T], T.copy()
    for _ in range(depth):
        M = M @ Acl
        dirs.append(M)
    return setops.merge_templates(*dirs)


@lru_cache(maxsize=4)
def build_design(Ts: float = 0.1, eps: float = 0.01, depth: int = 10) -> LinearDesign:
    sysm = synthesis.holonomic_system(Ts)
    A, B = sysm.A, sysm.B
    K = synthesis.dlqr(A, B, Q_ANCILLARY, R_STAGE)
    kappa = synthesis.dlqr(A, B, Q_KAPPA, R_STAGE)
    F = synthesis.terminal_cost(A, B, kappa, Q_STAGE, R_STAGE, scale=1.0, transposed=True)
    W2 = fis.wmax_set(Ts)
    W = setops.embed_position_disturbance(W2)
    Acl = A + B @ K
    Emax = synthesis.mrpi_approx(Acl, W, eps, tube_template(Acl, K, depth))
    X = TemplatePolytope(VEL_ROWS, np.full(4, V_MAX))
    U = TemplatePolytope(U_ROWS, np.full(4, U_MAX))
    Acl_k = A + B @ kappa
    Zf_mpc = synthesis.max_positive_invariant(Acl_k, X, U, kappa)
    Xt = setops.pontryagin_diff(X, Emax)
    Ut = TemplatePolytope(U_ROWS, U.offsets - setops.supports(Emax, U_ROWS @ K))
    Zf_tmpc = synthesis.max_positive_invariant(Acl_k, Xt, Ut, kappa)
    return LinearDesign(sysm, K, kappa, F, W2, Emax, Zf_mpc, Zf_tmpc)


# --------------------------------------------------------------------------- configuration


@dataclass
class CostConfig:
    Q: np.ndarray = field(default_factory=lambda: Q_STAGE.copy())
    R: np.ndarray = field(default_factory=lambda: R_STAGE.copy())
    F: np.ndarray | None = None
    use_terminal: bool = False


@dataclass
class LinearConstraints:
    """Velocity box, input box and extra position half-planes H p <= h."""

    v_max: float = V_MAX
    u_max: float = U_MAX
    H_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    h_pos: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def state_rows(self):
        Hp = np.hstack([np.asarray(self.H_pos, float).reshape(-1, 2), np.zeros((len(self.h_pos), 2))])
        H = np.vstack([VEL_ROWS, Hp])
        h = np.concatenate([np.full(4, self.v_max), np.asarray(self.h_pos, float)])
        return H, h

    def input_rows(self):
        return U_ROWS, np.full(4, self.u_max)

    def position_violation(self, p) -> float:
        if not len(self.h_pos):
            return 0.0
        return float(np.max(np.asarray(self.H_pos) @ np.asarray(p)[:2] - self.h_pos))


@dataclass
class Plan:
    v_seq: np.ndarray  # (N, 2)
    z_seq: np.ndarray  # (N+1, 4), global coordinates
    cost: float
    feasible: bool
    report: SolveReport
    tube: list | None = None
    source: str = ""


@dataclass
class TubeSection:
    z: np.ndarray
    E: TemplatePolytope


@dataclass
class LinearControllerState:
    z: np.ndarray | None = None
    N: int = 5
    warm: np.ndarray | None = None  # last nominal input sequence (N, 2)
    last_plan: Plan | None = None


def _ref4(reference):
    r = np.zeros(4)
    if reference is not None:
        r[:2] = np.asarray(reference, float)[:2]
    return r


# --------------------------------------------------------------------------- condensed prediction


@lru_cache(maxsize=32)
def _prediction(Ts: float, N: int):
    sysm = synthesis.holonomic_system(Ts)
    A, B = sysm.A, sysm.B
    Phi = np.zeros((N + 1, 4, 4))
    Gam = np.zeros((N + 1, 4, 2 * N))
    Phi[0] = np.eye(4)
    for i in range(1, N + 1):
        Phi[i] = A @ Phi[i - 1]
        Gam[i] = A @ Gam[i - 1]
        Gam[i][:, 2 * (i - 1):2 * i] = B
    return Phi, Gam


def nominal_cost(z_seq, v_seq, cost: CostConfig, reference=None) -> float:
    """Stage cost over i < N plus the optional terminal weight (shifted by the reference)."""
    r = _ref4(reference)
    zs = np.asarray(z_seq) - r
    vs = np.asarray(v_seq)
    N = len(vs)
    c = float(np.einsum("ij,jk,ik->", zs[:N], cost.Q, zs[:N]) + np.einsum("ij,jk,ik->", vs, cost.R, vs))
    if cost.use_terminal and cost.F is not None:
        c += float(zs[N] @ cost.F @ zs[N])
    return c


def _batch_cost(Z, V, cost: CostConfig):
    """Vectorised cost; Z (P, N+1, 4) in shifted coordinates, V (P, N, 2)."""
    N = V.shape[1]
    c = np.einsum("pij,jk,pik->p", Z[:, :N], cost.Q, Z[:, :N]) + np.einsum("pij,jk,pik->p", V, cost.R, V)
    if cost.use_terminal and cost.F is not None:
        c = c + np.einsum("pj,jk,pk->p", Z[:, N], cost.F, Z[:, N])
    return c


def _qp_cost_terms(z0s, N, cost: CostConfig, Ts):
    Phi, Gam = _prediction(Ts, N)
    Qs = [cost.Q] * N + [cost.F if (cost.use_terminal and cost.F is not None) else np.zeros((4, 4))]
    H = 2.0 * sum(Gam[i].T @ Qs[i] @ Gam[i] for i in range(N + 1)) + 2.0 * np.kron(np.eye(N), cost.R)
    f = 2.0 * sum(Gam[i].T @ Qs[i] @ Phi[i] @ z0s for i in range(N + 1))
    const = float(sum(z0s @ Phi[i].T @ Qs[i] @ Phi[i] @ z0s for i in range(N + 1)))
    return H, f, const


def _stack_rows(N, Ts, z0s, state_H, state_h, input_H, input_h, term=None):
    """Inequalities G V <= g for the condensed problem (all step-independent except offsets)."""
    Phi, Gam = _prediction(Ts, N)
    G, g = [], []
    for i in range(1, N + 1):
        hi = state_h[i - 1] if np.ndim(state_h) == 2 else state_h
        G.append(state_H @ Gam[i])
        g.append(hi - state_H @ Phi[i] @ z0s)
    for i in range(N):
        hi = input_h[i] if np.ndim(input_h) == 2 else input_h
        sel = np.zeros((2, 2 * N))
        sel[:, 2 * i:2 * i + 2] = np.eye(2)
        G.append(input_H @ sel)
        g.append(hi)
    if term is not None:
        G.append(term.normals @ Gam[N])
        g.append(term.offsets - term.normals @ Phi[N] @ z0s)
    return np.vstack(G), np.concatenate(g)


def solve_nominal(z0, N: int, cost: CostConfig, state_H, state_h, input_H, input_h, term=None,
                  reference=None, Ts: float = 0.1, warm=None) -> Plan:
    """Condensed QP over the input sequence from a fixed initial (nominal) state."""
    r = _ref4(reference)
    z0s = np.asarray(z0, float) - r
    sh = state_h - state_H @ r
    H, f, const = _qp_cost_terms(z0s, N, cost, Ts)
    G, g = _stack_rows(N, Ts, z0s, state_H, sh, input_H, input_h, term)
    rep = solve_qp(QpProblem(H, f, G, g), x0=None if warm is None else np.ravel(warm))
    V = rep.solution.reshape(N, 2)
    Phi, Gam = _prediction(Ts, N)
    Z = np.array([Phi[i] @ z0s + Gam[i] @ rep.solution for i in range(N + 1)]) + r
    c = rep.objective + const
    rep.objective = c
    return Plan(V, Z, c, rep.feasible, rep, source="qp")


def solve_nominal_free_start(x, Emax: TemplatePolytope, N: int, cost: CostConfig, state_H, state_h, input_H,
                             input_h, term=None, reference=None, Ts: float = 0.1) -> Plan:
    """As :func:`solve_nominal` with the initial nominal state free subject to x in {z0} + Emax."""
    r = _ref4(reference)
    xs = np.asarray(x, float) - r
    sh = state_h - state_H @ r
    Phi, Gam = _prediction(Ts, N)
    n = 4 + 2 * N
    Qs = [cost.Q] * N + [cost.F if (cost.use_terminal and cost.F is not None) else np.zeros((4, 4))]
    M = [np.hstack([Phi[i], Gam[i]]) for i in range(N + 1)]
    H = 2.0 * sum(M[i].T @ Qs[i] @ M[i] for i in range(N + 1))
    H[4:, 4:] += 2.0 * np.kron(np.eye(N), cost.R)
    f = np.zeros(n)
    G, g = [], []
    for i in range(0, N + 1):
        hi = sh[i - 1] if (np.ndim(sh) == 2 and i > 0) else (sh if np.ndim(sh) == 1 else sh[0])
        G.append(state_H @ M[i])
        g.append(hi)
    for i in range(N):
        sel = np.zeros((2, n))
        sel[:, 4 + 2 * i:6 + 2 * i] = np.eye(2)
        G.append(input_H @ sel)
        g.append(input_h[i] if np.ndim(input_h) == 2 else input_h)
    if term is not None:
        G.append(term.normals @ M[N])
        g.append(term.offsets)
    # x - z0 in Emax
    G.append(np.hstack([-Emax.normals, np.zeros((Emax.n_facets, 2 * N))]))
    g.append(Emax.offsets - Emax.normals @ xs)
    rep = solve_qp(QpProblem(H, f, np.vstack(G), np.concatenate(g)))
    sol = rep.solution
    Z = np.array([M[i] @ sol for i in range(N + 1)]) + r
    return Plan(sol[4:].reshape(N, 2), Z, rep.objective, rep.feasible, rep, source="qp-free-start")


# --------------------------------------------------------------------------- controllers


class MpcController:
    name = "mpc"

    def __init__(self, design: LinearDesign, cost: CostConfig, cons: LinearConstraints, N: int = 5):
        self.design, self.cost, self.cons, self.N = design, cost, cons, N
        if cost.F is None:
            cost.F = design.F
        self.state = LinearControllerState(N=N)

    def terminal_set(self):
        return self.design.Zf_mpc if self.cost.use_terminal else None

    def plan(self, x, reference=None) -> Plan:
        H, h = self.cons.state_rows()
        Hu, hu = self.cons.input_rows()
        return solve_nominal(x, self.N, self.cost, H, h, Hu, hu, self.terminal_set(), reference,
                             self.design.system.Ts)

    def step(self, x, reference=None):
        p = self.plan(x, reference)
        self.state.last_plan = p
        self.state.z = np.asarray(x, float).copy()
        if not p.feasible:
            return np.zeros(2), np.zeros(2), p
        return p.v_seq[0].copy(), p.v_seq[0].copy(), p


class TmpcController:
    """Fixed tube: nominal problem with X - Emax and U - K Emax; u = K(x - z) + v."""

    name = "tmpc"

    def __init__(self, design: LinearDesign, cost: CostConfig, cons: LinearConstraints, N: int = 5):
        self.design, self.cost, self.cons, self.N = design, cost, cons, N
        if cost.F is None:
            cost.F = design.F
        self.state = LinearControllerState(N=N)

    def tightened(self):
        H, h = self.cons.state_rows()
        Hu, hu = self.cons.input_rows()
        ht = h - setops.supports(self.design.Emax, H)
        hut = hu - setops.supports(self.design.Emax, Hu @ self.design.K)
        return H, ht, Hu, hut

    def terminal_set(self):
        return self.design.Zf_tmpc if self.cost.use_terminal else None

    def plan_from(self, z, reference=None) -> Plan:
        H, ht, Hu, hut = self.tightened()
        z = np.asarray(z, float)
        p = solve_nominal(z, self.N, self.cost, H, ht, Hu, hut, self.terminal_set(), reference,
                          self.design.system.Ts)
        r = _ref4(reference)
        if np.any(H @ (z - r) - (ht - H @ r) > FEAS):
            p.feasible = False  # current nominal state itself outside the tightened set
        return p

    start_certified = True

    def project_start(self, x, reference=None):
        """Nearest (Q-weighted) nominal state inside the tightened state set."""
        H, ht, _, _ = self.tightened()
        x = np.asarray(x, float)
        Wt = 2.0 * (self.cost.Q + 1e-6 * np.eye(4))
        rep = solve_qp(QpProblem(Wt, -Wt @ x, H, ht))
        return rep.solution if rep.feasible else x.copy()

    def start_feasible(self, x, reference=None) -> bool:
        """Whether some nominal state with x in {z}+Emax admits a feasible plan."""
        H, ht, Hu, hut = self.tightened()
        p = solve_nominal_free_start(x, self.design.Emax, self.N, self.cost, H, ht, Hu, hut, self.terminal_set(),
                                     reference, self.design.system.Ts)
        return p.feasible

    def step(self, x, reference=None):
        x = np.asarray(x, float)
        if self.state.z is None:
            self.state.z = x.copy()
            p = self.plan_from(x, reference)
            if not p.feasible:
                H, ht, Hu, hut = self.tightened()
                p = solve_nominal_free_start(x, self.design.Emax, self.N, self.cost, H, ht, Hu, hut,
                                             self.terminal_set(), reference, self.design.system.Ts)
                if p.feasible:
                    self.state.z = p.z_seq[0].copy()
                else:
                    # no certified start: begin from the closest admissible nominal state
                    self.start_certified = False
                    self.state.z = self.project_start(x, reference)
                    p = self.plan_from(self.state.z, reference)
                    p.feasible = False
        else:
            p = self.plan_from(self.state.z, reference)
        if not p.feasible and self.state.warm is not None:
            p = shifted_plan(self, reference)
        self.state.last_plan = p
        v = p.v_seq[0].copy()
        u = self.design.K @ (x - self.state.z) + v
        if not self.start_certified:
            # outside the tube guarantee: saturate onto the input box
            u = np.clip(u, -self.cons.u_max, self.cons.u_max)
        self.state.warm = p.v_seq.copy()
        self.state.z = self.design.A @ self.state.z + self.design.B @ v
        return u, v, p


def shifted_plan(ctrl, reference=None) -> Plan:
    """Previous sequence shifted by one with the terminal law appended."""
    d = ctrl.design
    V = np.vstack([ctrl.state.warm[1:], np.zeros((1, 2))])
    z = ctrl.state.z.copy()
    r = _ref4(reference)
    Z = [z]
    for i in range(len(V) - 1):
        Z.append(d.A @ Z[-1] + d.B @ V[i])
    V[-1] = d.kappa @ (Z[-1] - r)
    Z.append(d.A @ Z[-1] + d.B @ V[-1])
    Z = np.array(Z)
    rep = SolveReport(V.ravel(), nominal_cost(Z, V, ctrl.cost, reference), np.inf, 0, 0.0, False,
                      message="shifted fallback")
    return Plan(V, Z, rep.objective, False, rep, source="shifted")


# --------------------------------------------------------------------------- dynamic tube


def _fis_vertices(model: fis.DisturbanceModel, centroids, beta_fn, n_edges: int = 8):
    """Per-step disturbance polygon vertices at tube centroids; centroids (..., 4) -> (..., n, 2)."""
    vx, vy = centroids[..., 2], centroids[..., 3]
    speed = np.hypot(vx, vy)
    heading = np.where(speed < 1e-9, 0.0, np.arctan2(vy, vx))
    beta = beta_fn(centroids[..., 0], centroids[..., 1])
    r_max, r_min = model.radii(speed, beta)
    r_max = np.minimum(r_max, fis.WMAX_RADIUS)
    r_min = np.minimum(r_min, r_max)
    return setops.circumscribed_vertices(model.Ts * r_max, model.Ts * r_min, heading, n_edges)


@lru_cache(maxsize=64)
def _acl_powers(Ts: float, N: int):
    d = build_design(Ts)
    P = [np.eye(4)]
    for _ in range(N):
        P.append(d.Acl @ P[-1])
    return np.array(P)


def tube_supports(Z, e0, verts, D, Acl_pow):
    """Exact support values of the error sets E_1..E_N.

    Z is unused apart from its batch shape; ``verts`` (P, N, n, 2) are the
    per-step disturbance polygons, D (m, 4) the query directions.  Returns
    (P, N+1, m) with index 0 the singleton {e0}.
    """
    P, N = verts.shape[0], verts.shape[1]
    out = np.zeros((P, N + 1, len(D)))
    for i in range(N + 1):
        out[:, i] = (Acl_pow[i] @ e0) @ D.T
        for j in range(i):
            g = (D @ Acl_pow[i - 1 - j])[:, :2]  # (m, 2)
            out[:, i] += np.max(np.einsum("pvk,mk->pmv", verts[:, j], g), axis=-1)
    return out


def sddtmpc_tube_propagate(z_seq, e0, design: LinearDesign, model: fis.DisturbanceModel, beta_fn=None,
                           template=None) -> list:
    """Error sets along a nominal trajectory, E_i = Acl E_{i-1} + W(c_{i-1}), E_0 = {e0}.

    Disturbances are evaluated at the tube centroids c_i = z_i + Acl^i e0.  Each
    E_i is reported on ``template`` with exact support values of the full sum, so
    no outer-approximation error accumulates along the horizon.
    """
    z_seq = np.asarray(z_seq, float)
    N = len(z_seq) - 1
    e0 = np.asarray(e0, float)
    beta_fn = beta_fn or (lambda px, py: np.ones_like(np.asarray(px, float)))
    T = setops.box_diagonal_template(4) if template is None else np.asarray(template, float)
    Apow = [np.eye(4)]
    for _ in range(N):
        Apow.append(design.Acl @ Apow[-1])
    Apow = np.array(Apow)
    cent = z_seq[:N] + np.einsum("ijk,k->ij", Apow[:N], e0)
    verts = _fis_vertices(model, cent[None], beta_fn)
    offs = tube_supports(z_seq[None], e0, verts, T, Apow)[0]
    return [TubeSection(z_seq[i], TemplatePolytope(T, offs[i])) for i in range(N + 1)]


class SddTmpcController:
    """Nominal inputs optimised by the swarm against an exact state-dependent tube."""

    name = "sddtmpc"

    def __init__(self, design: LinearDesign, cost: CostConfig, cons: LinearConstraints, N: int = 5,
                 model: fis.DisturbanceModel | None = None, beta_fn=None, swarm: SwarmConfig | None = None):
        self.design, self.cost, self.cons, self.N = design, cost, cons, N
        if cost.F is None:
            cost.F = design.F
        self.model = model if model is not None else fis.GroundTruthModel(design.system.Ts)
        self.beta_fn = beta_fn or (lambda px, py: np.ones(np.broadcast(np.asarray(px), np.asarray(py)).shape))
        self.swarm = swarm or SwarmConfig()
        self.state = LinearControllerState(N=N)
        self.tmpc = TmpcController(design, cost, cons, N)
        self._steps = 0

    def terminal_set(self):
        return self.design.Zf_tmpc if self.cost.use_terminal else None

    # the swarm objective and residuals over a batch of flattened input sequences
    def _problem(self, x, z, reference):
        d = self.design
        N = self.N
        Phi, Gam = _prediction(d.system.Ts, N)
        r = _ref4(reference)
        zs = np.asarray(z, float) - r
        e0 = np.asarray(x, float) - np.asarray(z, float)
        Apow = _acl_powers(d.system.Ts, N)
        H, h = self.cons.state_rows()
        h = h - H @ r
        Hu, hu = self.cons.input_rows()
        HuK = Hu @ d.K
        term = self.terminal_set()
        D = np.vstack([H, HuK])
        nH = len(H)
        cost = self.cost
        PhiZ = np.einsum("ijk,k->ij", Phi, zs)  # (N+1, 4)

        def rollout(Vflat):
            Zs = PhiZ[None] + np.einsum("ijk,pk->pij", Gam, Vflat)
            return Zs

        def tube(Vflat):
            Zs = rollout(Vflat)
            cent = Zs[:, :N] + r + np.einsum("ijk,k->ij", Apow[:N], e0)[None]
            verts = _fis_vertices(self.model, cent, self.beta_fn)
            return Zs, tube_supports(Zs, e0, verts, D, Apow)

        def objective(Vflat):
            Zs = rollout(Vflat)
            return _batch_cost(Zs, Vflat.reshape(len(Vflat), N, 2), cost)

        def residuals(Vflat):
            Zs, S = tube(Vflat)
            V = Vflat.reshape(len(Vflat), N, 2)
            rs = np.einsum("mk,pik->pim", H, Zs[:, 1:]) + S[:, 1:, :nH] - h
            ru = np.einsum("mk,pik->pim", Hu, V) + S[:, :N, nH:] - hu
            parts = [rs.reshape(len(Vflat), -1), ru.reshape(len(Vflat), -1)]
            if term is not None:
                parts.append(Zs[:, N] @ term.normals.T - term.offsets)
            return np.concatenate(parts, axis=1)

        return objective, residuals, tube, rollout

    def evaluate(self, x, z, V, reference=None):
        """(cost, max residual) of one input sequence."""
        obj, res, _, _ = self._problem(x, z, reference)
        Vf = np.asarray(V, float).reshape(1, -1)
        return float(obj(Vf)[0]), float(np.max(res(Vf)[0]))

    def warm_start(self, x, z, reference=None):
        """TMPC solution from z when feasible, else the shifted previous sequence."""
        p = self.tmpc.plan_from(z, reference)
        cands = []
        if p.feasible:
            cands.append((p.v_seq, "tmpc"))
        if self.state.warm is not None:
            cands.append((shifted_plan(self, reference).v_seq, "shifted"))
        best = None
        for V, src in cands:
            c, viol = self.evaluate(x, z, V, reference)
            key = (viol > FEAS, c)
            if best is None or key < best[0]:
                best = (key, V, src)
        return (best[1], best[2]) if best else (np.zeros((self.N, 2)), "zero")

    def plan(self, x, z=None, reference=None, iterations: int | None = None, seed: int | None = None) -> Plan:
        x = np.asarray(x, float)
        z = x.copy() if z is None else np.asarray(z, float)
        obj, res, tube, rollout = self._problem(x, z, reference)
        warm, src = self.warm_start(x, z, reference)
        cfg = SwarmConfig(**{**self.swarm.__dict__})
        if iterations is not None:
            cfg.iterations = iterations
        if seed is not None:
            cfg.seed = seed
        cfg.lower = np.full(2 * self.N, -self.cons.u_max)
        cfg.upper = np.full(2 * self.N, self.cons.u_max)
        rep = pso_minimize(obj, res, cfg, warm_start=np.ravel(warm), vectorized=True)
        Vf = rep.solution[None, :]
        Zs = rollout(Vf)[0] + _ref4(reference)
        return Plan(rep.solution.reshape(self.N, 2), Zs, rep.objective, rep.feasible, rep, source=f"pso<-{src}")

    def tube_offsets(self, x, z, V, reference=None, template=None):
        """Offsets of E_0..E_N on ``template`` (exact supports)."""
        T = setops.box_diagonal_template(4) if template is None else template
        d = self.design
        Phi, Gam = _prediction(d.system.Ts, self.N)
        r = _ref4(reference)
        e0 = np.asarray(x, float) - np.asarray(z, float)
        Apow = _acl_powers(d.system.Ts, self.N)
        Zs = (np.einsum("ijk,k->ij", Phi, np.asarray(z) - r) + Gam @ np.ravel(V))[None]
        cent = Zs[:, :self.N] + r + np.einsum("ijk,k->ij", Apow[:self.N], e0)[None]
        verts = _fis_vertices(self.model, cent, self.beta_fn)
        return tube_supports(Zs, e0, verts, T, Apow)[0]

    def step(self, x, reference=None):
        x = np.asarray(x, float)
        if self.state.z is None:
            self.state.z = x.copy()
        p = self.plan(x, self.state.z, reference, seed=self.swarm.seed + self._steps)
        self._steps += 1
        if not p.feasible and self.state.warm is not None:
            sp = shifted_plan(self, reference)
            c, viol = self.evaluate(x, self.state.z, sp.v_seq, reference)
            sp.cost = c
            p = sp
        self.state.last_plan = p
        v = p.v_seq[0].copy()
        u = self.design.K @ (x - self.state.z) + v
        self.state.warm = p.v_seq.copy()
        self.state.z = self.design.A @ self.state.z + self.design.B @ v
        return u, v, p


# --------------------------------------------------------------------------- functional entry points


def mpc_step(x, cost: CostConfig, cons: LinearConstraints, N: int = 5, reference=None, design=None):
    ctrl = MpcController(design or build_design(), cost, cons, N)
    u, _, p = ctrl.step(x, reference)
    return u, p.report


def tmpc_step(x, state: LinearControllerState, cost: CostConfig, cons: LinearConstraints, reference=None,
              design=None):
    ctrl = TmpcController(design or build_design(), cost, cons, state.N)
    ctrl.state = state
    u, _, p = ctrl.step(x, reference)
    return u, p.report


def sddtmpc_step(x, state: LinearControllerState, cost: CostConfig, cons: LinearConstraints,
                 swarm: SwarmConfig | None = None, model=None, beta_fn=None, reference=None, design=None):
    ctrl = SddTmpcController(design or build_design(), cost, cons, state.N, model, beta_fn, swarm)
    ctrl.state = state
    u, _, p = ctrl.step(x, reference)
    return u, p.report, p
