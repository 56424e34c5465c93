"""Convex-set algebra over fixed-template H-polytopes.

A :class:`TemplatePolytope` is ``{x : normals @ x <= offsets}`` with unit-norm
rows.  Minkowski sums and linear images are outer approximations on a fixed
set of facet directions (offset_i = support in direction n_i), which keeps the
facet count bounded when sets are propagated over a horizon.  Pontryagin
differences with an H-rep minuend are exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection
from scipy.spatial import QhullError

TOL = 1e-9
VERTEX_ENUM_LIMIT = 2000


class SetError(ValueError):
    """Raised for dimension mismatches and unbounded operands."""


@dataclass(frozen=True, eq=False)
class TemplatePolytope:
    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if normals.shape[0] != offsets.shape[0]:
            raise SetError("normals and offsets disagree on facet count")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise SetError("template normals must be unit vectors")
        normals.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_inequalities(cls, A, b) -> "TemplatePolytope":
        """Build from ``A x <= b`` with arbitrary row scaling (zero rows dropped)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        norms = np.linalg.norm(A, axis=1)
        keep = norms > 1e-14
        if np.any(~keep & (b < -TOL)):
            # 0 <= negative: the whole set is empty
            return cls(np.vstack([np.eye(A.shape[1])[:1], -np.eye(A.shape[1])[:1]]), [-1.0, -1.0])
        return cls(A[keep] / norms[keep, None], b[keep] / norms[keep])

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_facets(self) -> int:
        return self.normals.shape[0]

    def same_template(self, other: "TemplatePolytope") -> bool:
        return self.normals.shape == other.normals.shape and np.allclose(self.normals, other.normals, atol=1e-12)

    @cached_property
    def _box(self):
        # (lower, upper) when the template is exactly the 2*dim axis directions
        d = self.dim
        if self.n_facets != 2 * d:
            return None
        lo = np.full(d, np.nan)
        hi = np.full(d, np.nan)
        for n, b in zip(self.normals, self.offsets):
            idx = np.flatnonzero(np.abs(n) > 1e-15)
            if idx.size != 1:
                return None
            i = idx[0]
            if n[i] > 0:
                hi[i] = b
            else:
                lo[i] = -b
        if np.isnan(lo).any() or np.isnan(hi).any():
            return None
        return lo, hi

    @cached_property
    def vertices(self):
        """Vertex list by facet-subset enumeration, or None when that would be too costly."""
        d, m = self.dim, self.n_facets
        if not self._bounded:
            return None
        if comb(m, d) > VERTEX_ENUM_LIMIT:
            return _qhull_vertices(self)
        pts = []
        for idx in combinations(range(m), d):
            A = self.normals[list(idx)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            x = np.linalg.solve(A, self.offsets[list(idx)])
            if np.all(self.normals @ x <= self.offsets + 1e-9):
                pts.append(x)
        if not pts:
            return np.zeros((0, d))
        pts = np.array(pts)
        _, keep = np.unique(np.round(pts, 10), axis=0, return_index=True)
        return pts[np.sort(keep)]

    @cached_property
    def _bounded(self) -> bool:
        # bounded iff the normals positively span R^d, i.e. N' lam = 0 has a solution with lam > 0
        N = self.normals
        if self.dim == 1:
            return bool(np.any(N[:, 0] > 0) and np.any(N[:, 0] < 0))
        if self.dim == 2:
            ang = np.sort(np.arctan2(N[:, 1], N[:, 0]))
            gaps = np.diff(np.r_[ang, ang[0] + 2 * np.pi])
            return bool(np.max(gaps) < np.pi - 1e-12)
        res = linprog(np.zeros(self.n_facets), A_eq=N.T, b_eq=np.zeros(self.dim),
                      bounds=[(1.0, None)] * self.n_facets, method="highs")
        return res.status == 0

    def contains(self, x, tol: float = TOL) -> np.ndarray | bool:
        """Membership of one point (1-D) or many (rows of 2-D)."""
        x = np.asarray(x, dtype=float)
        slack = x @ self.normals.T - self.offsets
        return np.all(slack <= tol, axis=-1)

    def is_empty(self) -> bool:
        box = self._box
        if box is not None:
            return bool(np.any(box[0] > box[1] + TOL))
        res = linprog(
            np.zeros(self.dim),
            A_ub=self.normals,
            b_ub=self.offsets + TOL,
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        return res.status == 2

    def translate(self, t) -> "TemplatePolytope":
        return TemplatePolytope(self.normals, self.offsets + self.normals @ np.asarray(t, dtype=float))

    def scale(self, c: float) -> "TemplatePolytope":
        if c < 0:
            raise SetError("scale factor must be nonnegative")
        return TemplatePolytope(self.normals, c * self.offsets)

    def intersect(self, other: "TemplatePolytope") -> "TemplatePolytope":
        _check_dim(self, other)
        if self.same_template(other):
            return TemplatePolytope(self.normals, np.minimum(self.offsets, other.offsets))
        return TemplatePolytope(np.vstack([self.normals, other.normals]), np.concatenate([self.offsets, other.offsets]))

    def to_dict(self) -> dict:
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TemplatePolytope":
        return cls(np.asarray(d["normals"], dtype=float), np.asarray(d["offsets"], dtype=float))

    def __repr__(self):
        return f"TemplatePolytope(dim={self.dim}, facets={self.n_facets})"


def _qhull_vertices(P: "TemplatePolytope"):
    """Vertices through qhull; None for flat or empty sets (callers fall back to LPs)."""
    d = P.dim
    # Chebyshev centre: max r s.t. n_i.x + r <= b_i
    res = linprog(
        np.r_[np.zeros(d), -1.0],
        A_ub=np.hstack([P.normals, np.ones((P.n_facets, 1))]),
        b_ub=P.offsets,
        bounds=[(None, None)] * d + [(0, None)],
        method="highs",
    )
    if res.status != 0 or res.x[-1] < 1e-9:
        return None
    try:
        hs = HalfspaceIntersection(np.hstack([P.normals, -P.offsets[:, None]]), res.x[:d])
    except QhullError:
        return None
    return hs.intersections


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise SetError("box bounds differ in dimension")
        if np.any(lo > hi):
            raise SetError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def to_polytope(self) -> TemplatePolytope:
        eye = np.eye(self.dim)
        return TemplatePolytope(np.vstack([eye, -eye]), np.concatenate([self.upper, -self.lower]))


@dataclass(frozen=True)
class Ellipse2:
    """Planar ellipse centred at the origin; ``heading`` is the major-axis angle."""

    r_max: float
    r_min: float
    heading: float = 0.0

    def __post_init__(self):
        if self.r_min < 0 or self.r_max < self.r_min - 1e-12:
            raise SetError("ellipse requires r_max >= r_min >= 0")

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float)
        c, s = np.cos(self.heading), np.sin(self.heading)
        along = c * d[..., 0] + s * d[..., 1]
        across = -s * d[..., 0] + c * d[..., 1]
        return np.hypot(self.r_max * along, self.r_min * across)

    @property
    def area(self) -> float:
        return np.pi * self.r_max * self.r_min


# --------------------------------------------------------------------------- templates


def box(lower, upper) -> TemplatePolytope:
    return Box(lower, upper).to_polytope()


def polygon_template(n_edges: int, phase: float = 0.0) -> np.ndarray:
    ang = phase + 2.0 * np.pi * np.arange(n_edges) / n_edges
    return np.column_stack([np.cos(ang), np.sin(ang)])


def box_diagonal_template(dim: int) -> np.ndarray:
    """Axis directions plus every normalised +-e_i +- e_j pair."""
    rows = [s * np.eye(dim)[i] for i in range(dim) for s in (1.0, -1.0)]
    for i in range(dim):
        for j in range(i + 1, dim):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    v = np.zeros(dim)
                    v[i], v[j] = si, sj
                    rows.append(v / np.sqrt(2.0))
    return np.array(rows)


def merge_templates(*templates) -> np.ndarray:
    """Stack direction sets (rows normalised), dropping near-duplicates."""
    rows = []
    for t in templates:
        for r in np.atleast_2d(np.asarray(t, dtype=float)):
            r = r / np.linalg.norm(r)
            if not any(np.allclose(r, q, atol=1e-10) for q in rows):
                rows.append(r)
    return np.array(rows)


def singleton(dim: int, point=None, template=None) -> TemplatePolytope:
    point = np.zeros(dim) if point is None else np.asarray(point, dtype=float)
    normals = np.vstack([np.eye(dim), -np.eye(dim)]) if template is None else np.asarray(template, dtype=float)
    return TemplatePolytope(normals, normals @ point)


# --------------------------------------------------------------------------- core ops


def _check_dim(P: TemplatePolytope, Q: TemplatePolytope):
    if P.dim != Q.dim:
        raise SetError(f"dimension mismatch: {P.dim} vs {Q.dim}")


def support(P: TemplatePolytope, d) -> float:
    """max_{x in P} d.x via a small LP; -inf for an empty set."""
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size != P.dim:
        raise SetError("direction dimension mismatch")
    box_ = P._box
    if box_ is not None:
        lo, hi = box_
        if np.any(lo > hi + TOL):
            return -np.inf
        return float(np.sum(np.where(d >= 0, d * hi, d * lo)))
    V = P.vertices
    if V is not None:
        return float(np.max(V @ d)) if len(V) else -np.inf
    if not np.any(d):
        return 0.0 if not P.is_empty() else -np.inf
    res = linprog(-d, A_ub=P.normals, b_ub=P.offsets, bounds=[(None, None)] * P.dim, method="highs-ds")
    if res.status == 3:
        raise SetError("polytope is unbounded in the requested direction")
    if res.status == 2:
        return -np.inf
    if res.status != 0:
        raise SetError(f"support LP failed: {res.message}")
    return float(-res.fun)


def supports(P: TemplatePolytope, D) -> np.ndarray:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    V = P.vertices
    if V is not None and len(V) and P._box is None:
        return np.max(D @ V.T, axis=1)
    return np.array([support(P, d) for d in np.atleast_2d(D)])


def minkowski_sum(P: TemplatePolytope, Q: TemplatePolytope, template=None) -> TemplatePolytope:
    _check_dim(P, Q)
    normals = P.normals if template is None else np.asarray(template, dtype=float)
    return TemplatePolytope(normals, supports(P, normals) + supports(Q, normals))


def pontryagin_diff(X: TemplatePolytope, E: TemplatePolytope) -> TemplatePolytope:
    """X minus E; may be empty (check ``is_empty``), which is not an error."""
    _check_dim(X, E)
    return TemplatePolytope(X.normals, X.offsets - supports(E, X.normals))


def linear_map(M, P: TemplatePolytope, template=None) -> TemplatePolytope:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] != P.dim:
        raise SetError("matrix columns must equal polytope dimension")
    if template is None:
        if M.shape[0] != P.dim:
            raise SetError("non-square map needs an explicit output template")
        template = P.normals
    template = np.atleast_2d(np.asarray(template, dtype=float))
    if template.shape[1] != M.shape[0]:
        raise SetError("template dimension must equal matrix rows")
    return TemplatePolytope(template, supports(P, template @ M))


def is_subset(P: TemplatePolytope, Q: TemplatePolytope, tol: float = TOL) -> bool:
    _check_dim(P, Q)
    return bool(np.all(supports(P, Q.normals) <= Q.offsets + tol))


def subset_violation(P: TemplatePolytope, Q: TemplatePolytope) -> float:
    """Largest facet excess of P over Q (<= 0 means contained)."""
    _check_dim(P, Q)
    return float(np.max(supports(P, Q.normals) - Q.offsets))


# --------------------------------------------------------------------------- ellipses


def circumscribe_ellipse(e: Ellipse2, n_edges: int = 8) -> TemplatePolytope:
    """Tangential polygon; facet normals evenly spaced from the major axis."""
    if n_edges < 4 or n_edges % 2:
        raise SetError("n_edges must be even and >= 4")
    normals = polygon_template(n_edges, e.heading)
    if e.r_max == 0.0:
        return TemplatePolytope(normals, np.zeros(n_edges))
    return TemplatePolytope(normals, e.support(normals))


def circumscribed_vertices(r_max, r_min, heading, n_edges: int = 8) -> np.ndarray:
    """Vertices of :func:`circumscribe_ellipse` polygons, vectorised over a batch.

    Inputs broadcast to shape ``S``; returns ``S + (n_edges, 2)``.  Vertex j is
    the intersection of facets j and j+1.
    """
    r_max, r_min, heading = np.broadcast_arrays(
        np.asarray(r_max, float), np.asarray(r_min, float), np.asarray(heading, float)
    )
    step = 2.0 * np.pi / n_edges
    phi = step * np.arange(n_edges)
    # facet offsets in the ellipse frame
    b = np.hypot(r_max[..., None] * np.cos(phi), r_min[..., None] * np.sin(phi))
    b_next = np.roll(b, -1, axis=-1)
    # intersection of n_j.x = b_j, n_{j+1}.x = b_{j+1} for unit normals at phi_j, phi_j + step
    s = np.sin(step)
    cj, sj = np.cos(phi), np.sin(phi)
    cn, sn = np.cos(phi + step), np.sin(phi + step)
    vx = (b * sn - b_next * sj) / s
    vy = (b_next * cj - b * cn) / s
    c, si = np.cos(heading)[..., None], np.sin(heading)[..., None]
    return np.stack([c * vx - si * vy, si * vx + c * vy], axis=-1)


def embed_position_disturbance(W2: TemplatePolytope) -> TemplatePolytope:
    """Lift a planar set onto (p_x, p_y, v_x, v_y) with velocity pinned to zero."""
    if W2.dim != 2:
        raise SetError("expected a 2-D disturbance set")
    n = W2.normals
    pos = np.hstack([n, np.zeros((n.shape[0], 2))])
    vel = np.array([[0, 0, 1.0, 0], [0, 0, -1.0, 0], [0, 0, 0, 1.0], [0, 0, 0, -1.0]])
    return TemplatePolytope(np.vstack([pos, vel]), np.concatenate([W2.offsets, np.zeros(4)]))


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
