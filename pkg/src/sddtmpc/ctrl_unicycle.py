"""Leader-follower unicycle: nonlinear tube MPC and its state-dependent tube variant.

The follower is tracked at its head point, so the position kinematics are
p' = G(psi) u with G(psi) = Rot(psi) diag(1, rho), which is always invertible.
Error sets are axis-aligned boxes over (e_x, e_y, e_psi), stored as lo/hi arrays
so that the particle swarm can propagate a whole population at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import world
from .optimize import SolveReport, SwarmConfig, pso_minimize
from .setops import TemplatePolytope

NU_MAX = 0.13
RHO = 0.0267
ETA = 0.004
TS = 0.2
HORIZON = 10
KE = 2.3
KBAR = 1.2
NU_R = 0.015
OMEGA_R = 0.04
P_D = np.array([-0.1, -0.1])
LEADER_START = np.array([0.0, 0.0, np.pi / 3])
FOLLOWER_START = np.array([0.4, -0.2, -np.pi / 2])
Q_REL = np.diag([0.2, 0.2, 0.0])
R_REL = np.diag([0.4, 0.4])
F_REL = np.diag([0.5, 0.5])
HEADING_LIMIT = np.pi / 4
RISE_THRESHOLD = 0.05
INPUT_RESIDUAL_SCALE = 100.0

# facet normals of the diamond input set |nu|/nu_max + rho|omega|/nu_max <= 1
_U_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


class TubeError(ValueError):
    """The box tube left the small-heading-error regime or emptied the input set."""


@dataclass(frozen=True)
class UnicycleSynthesis:
    Ke: float = KE
    Ts: float = TS
    eta: float = ETA
    nu_max: float = NU_MAX
    rho: float = RHO
    Kbar: float = KBAR
    nu_R: float = NU_R
    omega_R: float = OMEGA_R
    p_d: tuple = (-0.1, -0.1)

    @property
    def Ked(self) -> float:
        return float(np.exp(-self.Ke * self.Ts))

    @property
    def Emax(self) -> float:
        """Half-width of the fixed position cross-section of the tube."""
        return self.Ts * self.eta / (1.0 - self.Ked)

    @property
    def Vconst(self) -> float:
        """Scale of the fixed nominal input set, a fraction of the diamond."""
        return np.sqrt(2.0) / 2.0 - self.eta * np.sqrt(2.0) / self.nu_max

    @property
    def Zf_bound(self) -> float:
        """Bound on |z_r1| + |z_r2| for the terminal set."""
        s2 = np.sqrt(2.0)
        return (self.nu_max * s2 / 2.0 - self.eta * s2 - s2 * self.nu_R) / self.Kbar

    def Ktheta_d(self, v1):
        """Discrete contraction of the heading error over one step."""
        return np.exp(-np.abs(np.asarray(v1, float)) * self.Ts / self.rho)

    @property
    def input_normals(self) -> np.ndarray:
        return _U_SIGNS * np.array([1.0, self.rho]) / self.nu_max

    def diamond_polytope(self, offsets) -> TemplatePolytope:
        """{u : input_normals u <= offsets} with the rows rescaled to unit length."""
        n = self.input_normals
        norms = np.linalg.norm(n, axis=1)
        return TemplatePolytope(n / norms[:, None], np.asarray(offsets, float) / norms)

    def input_set(self, scale: float = 1.0) -> TemplatePolytope:
        return self.diamond_polytope(np.full(4, float(scale)))

    def in_input_set(self, u, scale: float = 1.0, tol: float = 1e-9):
        return diamond_norm(u, self) <= scale + tol

    def ancillary_gain(self):
        return self.Ke


def diamond_norm(u, syn: UnicycleSynthesis):
    u = np.asarray(u, float)
    return (np.abs(u[..., 0]) + syn.rho * np.abs(u[..., 1])) / syn.nu_max


@dataclass
class UnicycleErrorBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, float).reshape(3)
        self.hi = np.asarray(self.hi, float).reshape(3)
        if np.any(self.lo > self.hi + 1e-15):
            raise ValueError("box lower bound above upper bound")

    @classmethod
    def point(cls, e):
        e = np.asarray(e, float)
        return cls(e.copy(), e.copy())

    @classmethod
    def symmetric(cls, r1, r2, r3):
        r = np.array([r1, r2, r3], float)
        return cls(-r, r)

    @property
    def E1(self):
        return (self.lo[0], self.hi[0])

    @property
    def E2(self):
        return (self.lo[1], self.hi[1])

    @property
    def E3(self):
        return (self.lo[2], self.hi[2])

    def contains(self, e, tol: float = 1e-12) -> bool:
        e = np.asarray(e, float)
        return bool(np.all(e >= self.lo - tol) and np.all(e <= self.hi + tol))

    def subset_of(self, other: "UnicycleErrorBox", tol: float = 1e-12) -> bool:
        return bool(np.all(self.lo >= other.lo - tol) and np.all(self.hi <= other.hi + tol))

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


# --------------------------------------------------------------------------- geometry helpers


def rot(theta):
    """Rotation matrices, shape (..., 2, 2)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def input_matrix(psi, rho: float = RHO):
    """G(psi) mapping (nu, omega) to the head-point velocity."""
    c, s = np.cos(psi), np.sin(psi)
    return np.stack([np.stack([c, -rho * s], -1), np.stack([s, rho * c], -1)], -2)


def to_leader_frame(z, xR, p_d=P_D):
    """Nominal state expressed relative to the leader; vectorised over leading axes."""
    z = np.asarray(z, float)
    xR = np.asarray(xR, float)
    p_d = np.asarray(p_d, float)
    zr3 = world.wrap_angle(xR[..., 2] - z[..., 2])
    d = xR[..., :2] - z[..., :2]
    c, s = np.cos(z[..., 2]), np.sin(z[..., 2])
    rel = np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], -1)
    cr, sr = np.cos(zr3), np.sin(zr3)
    off = np.stack([cr * p_d[0] - sr * p_d[1], sr * p_d[0] + cr * p_d[1]], -1)
    return np.concatenate([rel + off, zr3[..., None]], -1)


def from_leader_frame(zr, xR, p_d=P_D):
    """Inverse of :func:`to_leader_frame`."""
    zr = np.asarray(zr, float)
    xR = np.asarray(xR, float)
    psi = xR[..., 2] - zr[..., 2]
    rel = zr[..., :2] - np.einsum("...ij,j->...i", rot(zr[..., 2]), np.asarray(p_d, float))
    pos = xR[..., :2] - np.einsum("...ij,...j->...i", rot(psi), rel)
    return np.concatenate([pos, world.wrap_angle(psi)[..., None]], -1)


def relative_input(v, zr3, syn: UnicycleSynthesis):
    v = np.asarray(v, float)
    pdx, pdy = syn.p_d
    a = syn.nu_R - pdx * syn.omega_R
    c, s = np.cos(zr3), np.sin(zr3)
    return np.stack(
        [
            -v[..., 0] + a * c - pdx * syn.omega_R * s,
            -syn.rho * v[..., 1] + a * s - pdy * syn.omega_R * c,
        ],
        -1,
    )


def terminal_law(zr, syn: UnicycleSynthesis):
    zr = np.asarray(zr, float)
    pdx, pdy = syn.p_d
    a = syn.nu_R - pdx * syn.omega_R
    c, s = np.cos(zr[..., 2]), np.sin(zr[..., 2])
    nu = syn.Kbar * zr[..., 0] + a * c - pdx * syn.omega_R * s
    om = (syn.Kbar * zr[..., 1] + a * s - pdy * syn.omega_R * c) / syn.rho
    return np.stack([nu, om], -1)


def target_position(xR, p_d=P_D):
    """Where the follower's head should be for a leader pose ``xR``."""
    xR = np.asarray(xR, float)
    return xR[..., :2] + np.einsum("...ij,j->...i", rot(xR[..., 2]), np.asarray(p_d, float))


def nominal_step(z, v, Ts: float = TS, rho: float = RHO):
    """Exact one-step map of the disturbance-free follower with held inputs; vectorised."""
    z = np.asarray(z, float)
    v = np.asarray(v, float)
    om = v[..., 1]
    half = 0.5 * om * Ts
    mid = z[..., 2] + half
    sc = Ts * np.sinc(half / np.pi)
    ic, is_ = sc * np.cos(mid), sc * np.sin(mid)
    a, b = v[..., 0], rho * om
    return np.stack([z[..., 0] + ic * a - is_ * b, z[..., 1] + is_ * a + ic * b, z[..., 2] + om * Ts], -1)


def ancillary_unicycle(x, z, v, Ke: float = KE, rho: float = RHO):
    """Feedback that makes the head-point position error decay at rate Ke."""
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    v = np.asarray(v, float)
    target = np.einsum("...ij,...j->...i", input_matrix(z[..., 2], rho), v) - Ke * (x[..., :2] - z[..., :2])
    c, s = np.cos(x[..., 2]), np.sin(x[..., 2])
    # G(x3)^-1 = diag(1, 1/rho) Rot(-x3)
    return np.stack([c * target[..., 0] + s * target[..., 1], (-s * target[..., 0] + c * target[..., 1]) / rho], -1)


def lam(e3):
    """Input scale guaranteeing inclusion in the rotated diamond for heading error e3."""
    e3 = np.asarray(e3, float)
    return 1.0 / (np.cos(e3) + np.abs(np.sin(e3)))


# --------------------------------------------------------------------------- interval arithmetic


def _sin_range(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    sa, sb = np.sin(a), np.sin(b)
    lo = np.minimum(sa, sb)
    hi = np.maximum(sa, sb)
    two_pi = 2 * np.pi
    # a peak (or trough) lies inside [a, b] iff the next one after a is not beyond b
    top = a + np.mod(np.pi / 2 - a, two_pi)
    bot = a + np.mod(-np.pi / 2 - a, two_pi)
    hi = np.where(top <= b, 1.0, hi)
    lo = np.where(bot <= b, -1.0, lo)
    return lo, hi


def _cos_range(a, b):
    return _sin_range(np.asarray(a) + np.pi / 2, np.asarray(b) + np.pi / 2)


def _product_range(alo, ahi, blo, bhi):
    p1, p2, p3, p4 = alo * blo, alo * bhi, ahi * blo, ahi * bhi
    return (np.minimum(np.minimum(p1, p2), np.minimum(p3, p4)),
            np.maximum(np.maximum(p1, p2), np.maximum(p3, p4)))


def _bound_arrays(lo, hi, psi_lo, psi_hi, v1, v2, syn: UnicycleSynthesis):
    """Interval of the lumped heading disturbance, arrays over a leading batch axis.

    ``lo``/``hi`` hold (..., 3) error bounds and ``psi_lo``/``psi_hi`` the range of
    the nominal heading, so the realised heading lies in psi + e3.
    """
    rho, Ke = syn.rho, syn.Ke
    e3lo, e3hi = lo[..., 2], hi[..., 2]
    # (sin e - e) is decreasing
    g_lo, g_hi = np.sin(e3hi) - e3hi, np.sin(e3lo) - e3lo
    k1 = -v1 / rho
    t1 = (np.minimum(k1 * g_lo, k1 * g_hi), np.maximum(k1 * g_lo, k1 * g_hi))
    m = np.maximum(np.abs(e3lo), np.abs(e3hi))
    cm = np.cos(m) - 1.0
    t2 = (cm * np.maximum(v2, 0.0), cm * np.minimum(v2, 0.0))
    s_lo, s_hi = _sin_range(psi_lo + e3lo, psi_hi + e3hi)
    c_lo, c_hi = _cos_range(psi_lo + e3lo, psi_hi + e3hi)
    t3 = _product_range(s_lo, s_hi, lo[..., 0], hi[..., 0])
    t4 = _product_range(-c_hi, -c_lo, lo[..., 1], hi[..., 1])
    wlo = t1[0] + t2[0] + Ke / rho * (t3[0] + t4[0])
    whi = t1[1] + t2[1] + Ke / rho * (t3[1] + t4[1])
    return wlo, whi


def directional_bound(E: UnicycleErrorBox, z, v, syn: UnicycleSynthesis = UnicycleSynthesis()):
    """Interval (rad/s) of the heading-error terms lumped as a disturbance, at heading z[2]."""
    z = np.asarray(z, float)
    v = np.asarray(v, float)
    wlo, whi = _bound_arrays(E.lo, E.hi, z[2], z[2], v[0], v[1], syn)
    return float(wlo), float(whi)


def _heading_gain(v1, syn: UnicycleSynthesis):
    """(contraction, input-integral factor) of the heading error over one step."""
    a = np.abs(v1) / syn.rho
    K = np.exp(-a * syn.Ts)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(a * syn.Ts > 1e-9, (1.0 - K) / np.where(a > 0, a, 1.0), syn.Ts)
    return K, c


def _tube_arrays(lo, hi, psi, v, syn: UnicycleSynthesis, iters: int = 6):
    """One box-tube step, batched.  Returns (lo', hi', step_lo, step_hi).

    ``step_lo``/``step_hi`` bound the error at every instant inside the step,
    which is what the input tightening must cover with held inputs.
    """
    v1, v2 = v[..., 0], v[..., 1]
    Ts, eta, Ked = syn.Ts, syn.eta, syn.Ked
    new_lo = np.empty_like(lo)
    new_hi = np.empty_like(hi)
    new_lo[..., :2] = Ked * lo[..., :2] - Ts * eta
    new_hi[..., :2] = Ked * hi[..., :2] + Ts * eta
    # position error inside the step: convex mix of the start box and +-eta/Ke
    r = eta / syn.Ke
    s_lo = np.array(lo, dtype=float, copy=True)
    s_hi = np.array(hi, dtype=float, copy=True)
    s_lo[..., :2] = np.minimum(lo[..., :2], -r)
    s_hi[..., :2] = np.maximum(hi[..., :2], r)
    psi_lo = psi + np.minimum(0.0, v2 * Ts)
    psi_hi = psi + np.maximum(0.0, v2 * Ts)
    K, c = _heading_gain(v1, syn)
    # with v1 < 0 the heading error is not contracted; the excess 2|v1|/rho e3 goes into the bound
    extra = np.where(v1 < 0.0, 2.0 * np.abs(v1) / syn.rho, 0.0)

    def propagate(s_lo, s_hi):
        wlo, whi = _bound_arrays(s_lo, s_hi, psi_lo, psi_hi, v1, v2, syn)
        wlo = wlo + extra * np.minimum(s_lo[..., 2], 0.0)
        whi = whi + extra * np.maximum(s_hi[..., 2], 0.0)
        return K * lo[..., 2] + c * wlo, K * hi[..., 2] + c * whi

    # heading range inside the step: grow the guess until it covers its own image
    for _ in range(iters):
        e_lo, e_hi = propagate(s_lo, s_hi)
        g_lo = np.minimum(lo[..., 2], e_lo)
        g_hi = np.maximum(hi[..., 2], e_hi)
        grow = (g_lo < s_lo[..., 2]) | (g_hi > s_hi[..., 2])
        if not np.any(grow):
            break
        pad = 0.05 * (g_hi - g_lo) + 1e-12
        s_lo[..., 2] = np.where(g_lo < s_lo[..., 2], g_lo - pad, s_lo[..., 2])
        s_hi[..., 2] = np.where(g_hi > s_hi[..., 2], g_hi + pad, s_hi[..., 2])
    else:
        e_lo, e_hi = propagate(s_lo, s_hi)
    ok = (e_lo >= s_lo[..., 2]) & (e_hi <= s_hi[..., 2]) & (np.abs(s_lo[..., 2]) < HEADING_LIMIT) \
        & (np.abs(s_hi[..., 2]) < HEADING_LIMIT)
    e_lo = np.where(ok, e_lo, -np.inf)
    e_hi = np.where(ok, e_hi, np.inf)
    new_lo[..., 2] = e_lo
    new_hi[..., 2] = e_hi
    step_lo = np.minimum(np.minimum(s_lo, new_lo), lo)
    step_hi = np.maximum(np.maximum(s_hi, new_hi), hi)
    return new_lo, new_hi, step_lo, step_hi


def box_tube_step(E: UnicycleErrorBox, z, v, syn: UnicycleSynthesis = UnicycleSynthesis(),
                  strict: bool = True) -> UnicycleErrorBox:
    z = np.asarray(z, float)
    v = np.asarray(v, float)
    lo, hi, _, _ = _tube_arrays(E.lo[None], E.hi[None], np.array([z[2]]), v[None], syn)
    out = UnicycleErrorBox(lo[0], hi[0])
    if strict and max(abs(out.lo[2]), abs(out.hi[2])) >= HEADING_LIMIT:
        raise TubeError("heading error interval left +-pi/4")
    return out


def _input_offsets(lo, hi, psi_lo, psi_hi, syn: UnicycleSynthesis, samples: int = 9):
    """Offsets of the tightened input set on the diamond's four facets, batched.

    Covers every error in [lo, hi] and every nominal heading in [psi_lo, psi_hi]
    by sampling the heading range and adding a Lipschitz margin.
    """
    m = _U_SIGNS / syn.nu_max  # diag(1, 1/rho) applied to the facet normals
    c = 0.5 * (lo[..., :2] + hi[..., :2])
    a = 0.5 * (hi[..., :2] - lo[..., :2])
    t = np.linspace(0.0, 1.0, samples)
    th = psi_lo[..., None] + (psi_hi - psi_lo)[..., None] * t  # (..., S)
    ct, st = np.cos(th)[..., None, :], np.sin(th)[..., None, :]  # (..., 1, S)
    # q = -Rot(theta) m for each facet: (..., 4, S) per component
    q1 = -(ct * m[:, 0, None] - st * m[:, 1, None])
    q2 = -(st * m[:, 0, None] + ct * m[:, 1, None])
    h = q1 * c[..., 0, None, None] + q2 * c[..., 1, None, None] \
        + np.abs(q1) * a[..., 0, None, None] + np.abs(q2) * a[..., 1, None, None]
    sup = h.max(axis=-1)
    spacing = (psi_hi - psi_lo) / max(samples - 1, 1)
    lip = np.linalg.norm(m[0]) * (np.linalg.norm(c, axis=-1) + np.linalg.norm(a, axis=-1))
    sup = sup + (0.5 * spacing * lip)[..., None]
    e3max = np.maximum(np.abs(lo[..., 2]), np.abs(hi[..., 2]))
    lam_min = np.where(e3max <= HEADING_LIMIT + 1e-12, lam(np.minimum(e3max, HEADING_LIMIT)), 0.0)
    return lam_min[..., None] - syn.Ke * sup, lam_min


def tighten_inputs(E: UnicycleErrorBox, z, syn: UnicycleSynthesis = UnicycleSynthesis()) -> TemplatePolytope:
    """Nominal inputs whose ancillary-law output stays in the diamond for every error in E."""
    z = np.asarray(z, float)
    off, _ = _input_offsets(E.lo[None], E.hi[None], np.array([z[2]]), np.array([z[2]]), syn, samples=1)
    if np.any(off[0] < 0.0):
        raise TubeError("tightened input set is empty")
    return syn.diamond_polytope(off[0])


# --------------------------------------------------------------------------- optimal control problems


@dataclass
class UnicycleConfig:
    N: int = HORIZON
    particles: int = 50
    iterations: int = 60
    warm_iterations: int = 30
    seed: int = 0
    heading_window: float = 0.0
    penalty_weight: float = 1e4


@dataclass
class UnicyclePlan:
    z0: np.ndarray
    v_seq: np.ndarray
    z_seq: np.ndarray
    cost: float
    feasible: bool
    report: SolveReport | None = None
    tube_lo: np.ndarray | None = None
    tube_hi: np.ndarray | None = None
    lambdas: np.ndarray | None = None
    source: str = "pso"


def leader_reference(t0: float, N: int, syn: UnicycleSynthesis = UnicycleSynthesis(), xR0=LEADER_START):
    return world.leader_state(np.asarray(xR0, float), syn.nu_R, syn.omega_R, t0 + syn.Ts * np.arange(N + 1))


class _Problem:
    """Batched rollout, cost and constraint residuals over a swarm of decision vectors."""

    def __init__(self, x, xR_traj, syn: UnicycleSynthesis, cfg: UnicycleConfig, tube: bool):
        self.x = np.asarray(x, float)
        self.xR = np.asarray(xR_traj, float)
        self.syn = syn
        self.cfg = cfg
        self.tube = tube
        N = cfg.N
        win = np.array([syn.Emax, syn.Emax, cfg.heading_window])
        vb = np.tile([syn.nu_max, syn.nu_max / syn.rho], N)
        self.lower = np.concatenate([-win, -vb])
        self.upper = np.concatenate([win, vb])

    def unpack(self, X):
        X = np.atleast_2d(X)
        z0 = self.x - X[:, :3]  # e_k = x_k - z_k is the decision offset
        V = X[:, 3:].reshape(len(X), self.cfg.N, 2)
        return z0, V

    def pack(self, z0, V):
        return np.concatenate([self.x - np.asarray(z0, float), np.asarray(V, float).ravel()])

    def rollout(self, z0, V):
        N = self.cfg.N
        Z = np.empty((len(z0), N + 1, 3))
        Z[:, 0] = z0
        for i in range(N):
            Z[:, i + 1] = nominal_step(Z[:, i], V[:, i], self.syn.Ts, self.syn.rho)
        return Z

    def cost(self, Z, V):
        N = self.cfg.N
        zr = to_leader_frame(Z, self.xR[None, : N + 1])
        vr = relative_input(V, zr[:, :N, 2], self.syn)
        stage = np.einsum("pni,ij,pnj->p", zr[:, :N], Q_REL, zr[:, :N]) + np.einsum("pni,ij,pnj->p", vr, R_REL, vr)
        term = np.einsum("pi,ij,pj->p", zr[:, N, :2], F_REL, zr[:, N, :2])
        return stage + term, zr

    def tube_arrays(self, Z, V):
        P, N = len(Z), self.cfg.N
        lo = np.empty((P, N + 1, 3))
        hi = np.empty((P, N + 1, 3))
        off = np.empty((P, N, 4))
        lams = np.empty((P, N))
        e0 = self.x - Z[:, 0]
        e0[:, 2] = world.wrap_angle(e0[:, 2])
        lo[:, 0] = hi[:, 0] = e0
        for i in range(N):
            l1, h1, sl, sh = _tube_arrays(lo[:, i], hi[:, i], Z[:, i, 2], V[:, i], self.syn)
            lo[:, i + 1], hi[:, i + 1] = l1, h1
            v2 = V[:, i, 1] * self.syn.Ts
            off[:, i], lams[:, i] = _input_offsets(sl, sh, Z[:, i, 2] + np.minimum(0, v2),
                                                   Z[:, i, 2] + np.maximum(0, v2), self.syn)
        return lo, hi, off, lams

    def evaluate(self, X):
        z0, V = self.unpack(X)
        Z = self.rollout(z0, V)
        J, zr = self.cost(Z, V)
        syn, N = self.syn, self.cfg.N
        lhs = np.einsum("fj,pnj->pnf", syn.input_normals, V)
        if self.tube:
            # escaped tubes propagate as +-inf, scored as large violations below
            with np.errstate(invalid="ignore", over="ignore"):
                lo, hi, off, lams = self.tube_arrays(Z, V)
            r_in = np.nan_to_num(lhs - off, nan=1e3, posinf=1e3)
            e3 = np.maximum(np.abs(lo[:, 1:, 2]), np.abs(hi[:, 1:, 2]))
            r_head = np.nan_to_num(e3 - 0.99 * HEADING_LIMIT, nan=1e3, posinf=1e3)
            extra = (lo, hi, lams)
        else:
            r_in = lhs - syn.Vconst
            r_head = np.zeros((len(X), 0))
            extra = None
        r_term = (np.abs(zr[:, N, 0]) + np.abs(zr[:, N, 1]) - syn.Zf_bound)[:, None]
        # input limits are physical: weight them far above the terminal condition
        R = np.concatenate([INPUT_RESIDUAL_SCALE * r_in.reshape(len(X), -1), r_head, r_term], axis=1)
        return J, R, Z, extra

    def objective(self, X):
        return self.evaluate(X)[0]

    def residuals(self, X):
        return self.evaluate(X)[1]


def _solve(problem: _Problem, cfg: UnicycleConfig, warm, seed: int, iterations: int) -> SolveReport:
    cache = {}

    def evaluate(X):
        key = id(X), X.shape
        if cache.get("key") != key or cache.get("X") is not X:
            J, R, _, _ = problem.evaluate(X)
            cache.update(key=key, X=X, J=J, R=R)
        return cache["J"], cache["R"]

    swarm = SwarmConfig(particles=cfg.particles, iterations=iterations, penalty_weight=cfg.penalty_weight,
                        seed=seed, lower=problem.lower, upper=problem.upper)
    return pso_minimize(lambda X: evaluate(X)[0], lambda X: evaluate(X)[1], swarm, warm_start=warm,
                        vectorized=True)


def _penalised(problem: _Problem, X, weight):
    J, R, _, _ = problem.evaluate(X)
    return J + weight * np.sum(np.maximum(R, 0.0) ** 2, axis=1)


def _shift(problem: _Problem, previous: UnicyclePlan | None):
    """Previous plan advanced one step, tail filled by the terminal law."""
    if previous is None:
        return None
    N = problem.cfg.N
    z0 = previous.z_seq[1]
    V =np.vstack([previous.v_seq[1:], np.zeros((1, 2))])
    z_last = previous.z_seq[N]
    zr = to_leader_frame(z_last, problem.xR[N])
    V[-1] = np.clip(terminal_law(zr, problem.syn), -problem.upper[3:5], problem.upper[3:5])
    X = problem.pack(z0, V)
    return np.clip(X, problem.lower, problem.upper)


def _default_warm(problem: _Problem):
    """Hold the measured state and steer with the terminal law along the horizon."""
    N = problem.cfg.N
    z = problem.x.copy()
    V = np.zeros((N, 2))
    for i in range(N):
        zr = to_leader_frame(z, problem.xR[i])
        V[i] = terminal_law(zr, problem.syn)
        scale = max(1.0, diamond_norm(V[i], problem.syn) / problem.syn.Vconst)
        V[i] /= scale
        z = nominal_step(z, V[i], problem.syn.Ts, problem.syn.rho)
    return problem.pack(problem.x, V)


def _plan_from(problem: _Problem, X, report, source) -> UnicyclePlan:
    J, R, Z, extra = problem.evaluate(X[None])
    z0, V = problem.unpack(X[None])
    feasible = bool(np.max(R[0], initial=-np.inf) <= 1e-6)
    plan = UnicyclePlan(z0=z0[0], v_seq=V[0], z_seq=Z[0], cost=float(J[0]), feasible=feasible,
                        report=report, source=source)
    if extra is not None:
        plan.tube_lo, plan.tube_hi, plan.lambdas = extra[0][0], extra[1][0], extra[2][0]
    return plan


def ntmpc_plan(x, xR_traj, syn: UnicycleSynthesis, cfg: UnicycleConfig, previous: UnicyclePlan | None = None,
               seed: int = 0, iterations: int | None = None) -> UnicyclePlan:
    problem = _Problem(x, xR_traj, syn, cfg, tube=False)
    cands = [c for c in (_shift(problem, previous), _default_warm(problem)) if c is not None]
    warm = min(cands, key=lambda c: _penalised(problem, c[None], cfg.penalty_weight)[0])
    rep = _solve(problem, cfg, warm, seed, cfg.iterations if iterations is None else iterations)
    return _plan_from(problem, rep.solution, rep, "pso")


def sddtmpc_plan(x, xR_traj, syn: UnicycleSynthesis, cfg: UnicycleConfig, previous: UnicyclePlan | None = None,
                 seed: int = 0, warm_plan: UnicyclePlan | None = None) -> UnicyclePlan:
    problem = _Problem(x, xR_traj, syn, cfg, tube=True)
    if warm_plan is None:
        warm_plan = ntmpc_plan(x, xR_traj, syn, cfg, None, seed=seed + 7919, iterations=cfg.warm_iterations)
    cands = [problem.pack(warm_plan.z0, warm_plan.v_seq), _default_warm(problem)]
    shifted = _shift(problem, previous)
    if shifted is not None:
        cands.append(shifted)
    cands = [np.clip(c, problem.lower, problem.upper) for c in cands]
    warm = min(cands, key=lambda c: _penalised(problem, c[None], cfg.penalty_weight)[0])
    rep = _solve(problem, cfg, warm, seed, cfg.iterations)
    plan = _plan_from(problem, rep.solution, rep, "pso")
    if not plan.feasible and shifted is not None:
        alt = _plan_from(problem, shifted, None, "shifted")
        if alt.feasible:
            return alt
    return plan


def ntmpc_step(x, xR_traj, syn: UnicycleSynthesis = UnicycleSynthesis(), cfg: UnicycleConfig = UnicycleConfig(),
               previous: UnicyclePlan | None = None):
    plan = ntmpc_plan(x, xR_traj, syn, cfg, previous, seed=cfg.seed)
    u = ancillary_unicycle(x, plan.z0, plan.v_seq[0], syn.Ke, syn.rho)
    return u, plan.report, plan


def sddtmpc_unicycle_step(x, xR_traj, syn: UnicycleSynthesis = UnicycleSynthesis(), fis_free=None,
                          cfg: UnicycleConfig = UnicycleConfig(), previous: UnicyclePlan | None = None):
    """One step of the state-dependent tube controller; disturbances are bounded analytically here."""
    plan = sddtmpc_plan(x, xR_traj, syn, cfg, previous, seed=cfg.seed)
    u = ancillary_unicycle(x, plan.z0, plan.v_seq[0], syn.Ke, syn.rho)
    tube = [UnicycleErrorBox(l, h) for l, h in zip(plan.tube_lo, plan.tube_hi)]
    return u, plan.report, tube


# --------------------------------------------------------------------------- closed loop


@dataclass
class UnicycleRun:
    controller: str
    rows: list = field(default_factory=list)
    rise_time: float | None = None
    max_input_norm: float = 0.0
    nominal_outside_fixed: int = 0
    max_heading_error: float = 0.0
    tube_violations: int = 0
    infeasible_steps: int = 0
    final_distance: float = 0.0
    steady_error: float = 0.0


def _augmented_rhs(syn: UnicycleSynthesis):
    def f(s, v, w):
        x, z = s[:3], s[3:]
        u = ancillary_unicycle(x, z, v, syn.Ke, syn.rho)
        return np.concatenate([world.unicycle_derivative(x, u, w, syn.rho), world.unicycle_derivative(z, v, np.zeros(2), syn.rho)])

    return f


def simulate(controller: str, seed: int = 0, steps: int = 100, disturbed: bool = True,
             syn: UnicycleSynthesis = UnicycleSynthesis(), cfg: UnicycleConfig | None = None,
             substeps: int = 8, x0=FOLLOWER_START, xR0=LEADER_START) -> UnicycleRun:
    """Closed loop against the continuous-time plant with the ancillary law acting inside every step."""
    if controller not in ("tmpc", "sddtmpc"):
        raise ValueError("unicycle controller must be tmpc or sddtmpc")
    cfg = cfg or UnicycleConfig(seed=seed)
    rng = np.random.default_rng(seed)
    f = _augmented_rhs(syn)
    x = np.asarray(x0, float).copy()
    run = UnicycleRun(controller)
    prev = None
    h = syn.Ts / substeps
    for k in range(steps):
        t = k * syn.Ts
        xR = leader_reference(t, cfg.N, syn, xR0)
        if controller == "tmpc":
            plan = ntmpc_plan(x, xR, syn, cfg, prev, seed=cfg.seed * 100003 + k)
        else:
            plan = sddtmpc_plan(x, xR, syn, cfg, prev, seed=cfg.seed * 100003 + k)
        prev = plan
        run.infeasible_steps += int(not plan.feasible)
        v = plan.v_seq[0]
        u0 = ancillary_unicycle(x, plan.z0, v, syn.Ke, syn.rho)
        dist = float(np.linalg.norm(target_position(xR[0]) - x[:2]))
        if run.rise_time is None and dist < RISE_THRESHOLD:
            run.rise_time = t
        s = np.concatenate([x, plan.z0])
        w_first = np.zeros(2)
        u_norm = diamond_norm(u0, syn)
        e3_peak = abs(float(world.wrap_angle(x[2] - plan.z0[2])))
        for j in range(substeps):
            w = world.sample_bounded_disturbance(syn.eta, rng) if disturbed else np.zeros(2)
            if j == 0:
                w_first = w
            s = world.integrate_adaptive(f, s, v, w, h, rtol=1e-9, atol=1e-12)
            if run.rise_time is None:
                t_sub = t + (j + 1) * h
                xR_sub = world.leader_state(np.asarray(xR0, float), syn.nu_R, syn.omega_R, t_sub)
                if np.linalg.norm(target_position(xR_sub) - s[:2]) < RISE_THRESHOLD:
                    run.rise_time = t_sub
            u_norm = max(u_norm, float(diamond_norm(ancillary_unicycle(s[:3], s[3:], v, syn.Ke, syn.rho), syn)))
            e3_peak = max(e3_peak, abs(float(world.wrap_angle(s[2] - s[5]))))
        x_next = s[:3].copy()
        e_next = x_next - s[3:]
        e_next[2] = world.wrap_angle(e_next[2])
        if plan.tube_lo is not None:
            inside = np.all(e_next >= plan.tube_lo[1] - 1e-12) and np.all(e_next <= plan.tube_hi[1] + 1e-12)
            run.tube_violations += int(not inside)
        run.max_input_norm = max(run.max_input_norm, u_norm)
        run.nominal_outside_fixed += int(diamond_norm(v, syn) > syn.Vconst + 1e-9)
        run.max_heading_error = max(run.max_heading_error, abs(float(e_next[2])))
        run.rows.append(
            dict(k=k, t=t, x=x.copy(), z=plan.z0.copy(), u=u0, v=v.copy(), w=w_first, xR=xR[0].copy(),
                 distance=dist, cost=plan.cost, feasible=plan.feasible, u_norm=u_norm, v_norm=float(diamond_norm(v, syn)),
                 e3_peak=e3_peak, e3_start=float(world.wrap_angle(x[2] - plan.z0[2])),
                 lam=float(plan.lambdas[0]) if plan.lambdas is not None else float("nan"), report=plan.report)
        )
        x = x_next
        x[2] = float(world.wrap_angle(x[2]))
    xR_end = world.leader_state(np.asarray(xR0, float), syn.nu_R, syn.omega_R, steps * syn.Ts)
    run.final_distance = float(np.linalg.norm(target_position(xR_end) - x[:2]))
    tail = [r["distance"] for r in run.rows[-20:]]
    run.steady_error = float(np.mean(tail)) if tail else 0.0
    return run
