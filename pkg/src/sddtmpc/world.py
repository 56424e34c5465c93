"""Ground-truth plants, disturbance generators and slipperiness fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .setops import Ellipse2

TS_HOLONOMIC = 0.1
MAJOR_SLOPE = 0.202
MINOR_GAIN = 0.225


# --------------------------------------------------------------------------- holonomic robot


def holonomic_step(x, u, w, Ts: float = TS_HOLONOMIC) -> np.ndarray:
    """Double integrator in the plane; ``w`` is added to the position."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    return np.array(
        [
            x[0] + Ts * x[2] + w[0],
            x[1] + Ts * x[3] + w[1],
            x[2] + Ts * u[0],
            x[3] + Ts * u[1],
        ]
    )


def true_radii(speed, beta):
    """(r_max, r_min) of the ground-truth disturbance ellipse; vectorised."""
    speed = np.abs(np.asarray(speed, dtype=float))
    beta = np.asarray(beta, dtype=float)
    r_min = MINOR_GAIN * beta ** 2 * np.sqrt(speed)
    r_max = MAJOR_SLOPE * speed + r_min
    return r_max, r_min


def heading_of(vx, vy):
    vx = np.asarray(vx, dtype=float)
    vy = np.asarray(vy, dtype=float)
    return np.where(np.hypot(vx, vy) < 1e-9, 0.0, np.arctan2(vy, vx))


def true_disturbance_set(x, beta) -> Ellipse2:
    x = np.asarray(x, dtype=float)
    r_max, r_min = true_radii(np.hypot(x[2], x[3]), beta)
    return Ellipse2(float(r_max), float(r_min), float(heading_of(x[2], x[3])))


@dataclass(frozen=True)
class DisturbanceMode:
    kind: str = "none"  # none | attract | repel | push_up | push_down | uniform_random
    target: tuple | None = None

    KINDS = ("none", "attract", "repel", "push_up", "push_down", "uniform_random")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown disturbance mode {self.kind!r}")


def _boundary_along(e: Ellipse2, direction) -> np.ndarray:
    """Point where the ray from the centre along ``direction`` leaves the ellipse."""
    d = np.asarray(direction, dtype=float)
    nd = np.linalg.norm(d)
    if nd < 1e-15 or e.r_max == 0.0:
        return np.zeros(2)
    d = d / nd
    c, s = np.cos(e.heading), np.sin(e.heading)
    a = c * d[0] + s * d[1]
    b = -s * d[0] + c * d[1]
    if e.r_min == 0.0:
        # flat ellipse: only the major axis direction has extent
        t = e.r_max if abs(b) < 1e-12 else 0.0
    else:
        t = 1.0 / np.sqrt((a / e.r_max) ** 2 + (b / e.r_min) ** 2)
    return t * d


def sample_disturbance(e: Ellipse2, mode: DisturbanceMode, rng: np.random.Generator, position=None) -> np.ndarray:
    """Draw one disturbance inside ``e`` according to ``mode``.

    Directed modes go to 0.9 of the boundary along their direction with a
    +-10 % radial jitter; ``uniform_random`` is uniform over the area.
    """
    if mode.kind == "none" or e.r_max == 0.0:
        return np.zeros(2)
    if mode.kind == "uniform_random":
        rad = np.sqrt(rng.random())
        ang = 2.0 * np.pi * rng.random()
        local = np.array([e.r_max * rad * np.cos(ang), e.r_min * rad * np.sin(ang)])
        c, s = np.cos(e.heading), np.sin(e.heading)
        return np.array([c * local[0] - s * local[1], s * local[0] + c * local[1]])
    if mode.kind in ("attract", "repel"):
        if mode.target is None or position is None:
            raise ValueError("attract/repel need a target and the current position")
        direction = np.asarray(mode.target, float) - np.asarray(position, float)[:2]
        if mode.kind == "repel":
            direction = -direction
    elif mode.kind == "push_up":
        direction = np.array([0.0, 1.0])
    else:
        direction = np.array([0.0, -1.0])
    scale = 0.9 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0))
    return scale * _boundary_along(e, direction)


@dataclass(frozen=True)
class BetaField:
    kind: str = "constant"  # constant | corridor | two_zone
    value: float = 1.0
    split_y: float = 3.0
    upper: float = 1.0
    lower: float = 0.4

    def __call__(self, px, py=0.0):
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast(px, py).shape, self.value)
        if self.kind == "corridor":
            return 1.0 / (np.abs(5.0 - px) + 1.0) + 0.0 * py
        if self.kind == "two_zone":
            return np.where(py >= self.split_y, self.upper, self.lower) + 0.0 * px
        raise ValueError(f"unknown beta field {self.kind!r}")


# --------------------------------------------------------------------------- unicycles


def unicycle_derivative(x, u, w, rho: float) -> np.ndarray:
    """Head-point unicycle kinematics with an additive position disturbance."""
    psi = x[2]
    nu, om = u[0], u[1]
    return np.array(
        [
            nu * np.cos(psi) - rho * om * np.sin(psi) + w[0],
            nu * np.sin(psi) + rho * om * np.cos(psi) + w[1],
            om,
        ]
    )


def leader_derivative(xR, nuR: float, omegaR: float) -> np.ndarray:
    return np.array([nuR * np.cos(xR[2]), nuR * np.sin(xR[2]), omegaR])


def leader_state(xR0, nuR: float, omegaR: float, t) -> np.ndarray:
    """Closed-form leader pose after time ``t`` (vectorised over t)."""
    t = np.asarray(t, dtype=float)
    px, py, psi0 = xR0
    if abs(omegaR) < 1e-12:
        return np.stack([px + nuR * t * np.cos(psi0), py + nuR * t * np.sin(psi0), psi0 + 0 * t], axis=-1)
    psi = psi0 + omegaR * t
    r = nuR / omegaR
    return np.stack([px + r * (np.sin(psi) - np.sin(psi0)), py - r * (np.cos(psi) - np.cos(psi0)), psi], axis=-1)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def sample_bounded_disturbance(eta: float, rng: np.random.Generator) -> np.ndarray:
    ang = 2.0 * np.pi * rng.random()
    mag = eta * rng.random()
    return mag * np.array([np.cos(ang), np.sin(ang)])


# --------------------------------------------------------------------------- adaptive integration

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class StepSizeUnderflow(RuntimeError):
    pass


def integrate_adaptive(f, x0, u, w, horizon: float, rtol: float = 1e-8, atol: float = 1e-10,
                       h0: float | None = None) -> np.ndarray:
    """Integrate dx/dt = f(x, u, w) over ``horizon`` with u, w held constant."""
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    x = np.asarray(x0, dtype=float).copy()
    t = 0.0
    h = horizon / 10.0 if h0 is None else h0
    if horizon == 0.0:
        return x
    while t < horizon:
        h = min(h, horizon - t)
        k = []
        for i in range(7):
            xi = x + h * sum(a * kj for a, kj in zip(_A[i], k)) if i else x
            k.append(np.asarray(f(xi, u, w), dtype=float))
        k = np.array(k)
        x5 = x + h * (_B5 @ k)
        x4 = x + h * (_B4 @ k)
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
        err = np.sqrt(np.mean(((x5 - x4) / scale) ** 2))
        if err <= 1.0:
            t += h
            x = x5
        fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        h *= fac
        if h < 1e-12 and t < horizon:
            raise StepSizeUnderflow("adaptive step size fell below 1e-12 s")
    return x
