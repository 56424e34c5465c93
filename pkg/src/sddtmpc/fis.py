"""TSK fuzzy inference for disturbance-ellipse radii and its genetic trainer."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import setops, world

NU_MAX = 2.0 * np.sqrt(2.0)
N_SETS = 5
N_COEFFS = 6
# worst-case major radius over the admissible box (speed 2*sqrt(2), beta 1)
WMAX_RADIUS = float(world.true_radii(NU_MAX, 1.0)[0])


@dataclass(frozen=True)
class MembershipFn:
    center: float
    half_width: float
    kind: str = "triangular"

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")

    def __call__(self, x):
        return np.clip(1.0 - np.abs(np.asarray(x, float) - self.center) / self.half_width, 0.0, 1.0)


@dataclass
class TskRule:
    antecedents: tuple
    consequent_coeffs: np.ndarray


def regressors(nu, beta):
    """Quadratic consequent basis [nu^2, beta^2, nu*beta, nu, beta, 1]."""
    nu = np.asarray(nu, float)
    beta = np.asarray(beta, float)
    return np.stack([nu * nu, beta * beta, nu * beta, nu, beta, np.ones_like(nu)], axis=-1)


def _grid(lo, hi, n=N_SETS):
    c = np.linspace(lo, hi, n)
    return c, c[1] - c[0]


@dataclass
class FisModel:
    coeffs: np.ndarray  # (25, 6), rule index = i_nu * 5 + i_beta
    output_label: str = "major"
    wmax_radius: float = WMAX_RADIUS
    nu_range: tuple = (0.0, NU_MAX)
    beta_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, float).reshape(N_SETS * N_SETS, N_COEFFS)

    @property
    def nu_centers(self):
        return _grid(*self.nu_range)

    @property
    def beta_centers(self):
        return _grid(*self.beta_range)

    @property
    def rules(self):
        (cn, wn), (cb, wb) = self.nu_centers, self.beta_centers
        return [
            TskRule((MembershipFn(cn[i], wn), MembershipFn(cb[j], wb)), self.coeffs[i * N_SETS + j])
            for i in range(N_SETS)
            for j in range(N_SETS)
        ]

    def firing(self, nu, beta):
        """Normalised firing strengths, shape (..., 25)."""
        (cn, wn), (cb, wb) = self.nu_centers, self.beta_centers
        nu = np.clip(np.asarray(nu, float), *self.nu_range)
        beta = np.clip(np.asarray(beta, float), *self.beta_range)
        mn = np.clip(1.0 - np.abs(nu[..., None] - cn) / wn, 0.0, 1.0)
        mb = np.clip(1.0 - np.abs(beta[..., None] - cb) / wb, 0.0, 1.0)
        mu = (mn[..., :, None] * mb[..., None, :]).reshape(*nu.shape, N_SETS * N_SETS)
        s = mu.sum(axis=-1, keepdims=True)
        return mu / s

    def design_matrix(self, nu, beta):
        """Features such that raw output = design_matrix @ coeffs.ravel()."""
        w = self.firing(nu, beta)
        phi = regressors(np.clip(nu, *self.nu_range), np.clip(beta, *self.beta_range))
        return (w[..., :, None] * phi[..., None, :]).reshape(*w.shape[:-1], -1)

    def raw(self, nu, beta):
        w = self.firing(nu, beta)
        phi = regressors(np.clip(nu, *self.nu_range), np.clip(beta, *self.beta_range))
        return np.einsum("...r,...c,rc->...", w, phi, self.coeffs)

    def __call__(self, nu, beta):
        return np.clip(self.raw(nu, beta), 0.0, self.wmax_radius)

    def to_dict(self):
        return {
            "output_label": self.output_label,
            "wmax_radius": self.wmax_radius,
            "grid": {"nu": list(self.nu_range), "beta": list(self.beta_range), "sets": N_SETS},
            "rules": [
                {"centers": [r.antecedents[0].center, r.antecedents[1].center], "coeffs": r.consequent_coeffs.tolist()}
                for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            coeffs=np.array([r["coeffs"] for r in d["rules"]]),
            output_label=d.get("output_label", "major"),
            wmax_radius=d.get("wmax_radius", WMAX_RADIUS),
            nu_range=tuple(d["grid"]["nu"]),
            beta_range=tuple(d["grid"]["beta"]),
        )


def eval_fis(model: FisModel, nu, beta, diagnostics: dict | None = None):
    """Clipped weighted-average output; out-of-domain inputs are clamped and flagged."""
    nu_a = np.asarray(nu, float)
    beta_a = np.asarray(beta, float)
    if diagnostics is not None:
        out = (nu_a < model.nu_range[0]) | (nu_a > model.nu_range[1]) | (beta_a < model.beta_range[0]) | (
            beta_a > model.beta_range[1])
        diagnostics["clamped"] = bool(np.any(out))
    return model(nu_a, beta_a)


# --------------------------------------------------------------------------- data


@dataclass
class DisturbanceDataset:
    inputs: np.ndarray  # (n, 2): speed, beta
    targets: np.ndarray  # (n, 2): r_max, r_min
    train: np.ndarray
    validation: np.ndarray
    test_inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    test_targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


def gen_dataset(n_train_val: int = 1240, n_test: int = 100_000, seed: int = 0,
                split=(660, 580), ground_truth=world.true_radii) -> DisturbanceDataset:
    rng = np.random.default_rng(seed)

    def draw(n):
        nu = rng.uniform(0.0, NU_MAX, n)
        beta = rng.uniform(0.0, 1.0, n)
        r_max, r_min = ground_truth(nu, beta)
        return np.column_stack([nu, beta]), np.column_stack([r_max, r_min])

    X, Y = draw(n_train_val)
    n_tr = int(round(n_train_val * split[0] / (split[0] + split[1])))
    perm = rng.permutation(n_train_val)
    Xt, Yt = draw(n_test)
    return DisturbanceDataset(X, Y, np.sort(perm[:n_tr]), np.sort(perm[n_tr:]), Xt, Yt)


# --------------------------------------------------------------------------- GA trainer


@dataclass
class GaConfig:
    population: int = 60
    generations: int = 400
    mutation_rate: float = 0.1
    negative_penalty_weight: float = 1000.0
    seed: int = 0
    tournament: int = 3


def fitness(pred, target, neg_weight):
    err = pred - target
    under = np.maximum(0.0, -err)
    return np.mean(err ** 2, axis=0) + neg_weight * np.mean(under ** 2, axis=0)


def train_ga(inputs, targets, cfg: GaConfig = GaConfig(), label: str = "major", curve: list | None = None,
             val_inputs=None, val_targets=None) -> FisModel:
    """Evolve the 150 consequent coefficients; memberships stay on the fixed grid.

    The initial population is scattered around a ridge least-squares fit;
    selection is k-tournament with one elite, crossover is arithmetic blend,
    mutation is Gaussian with sigma = mutation_rate * per-gene range.
    """
    rng = np.random.default_rng(cfg.seed)
    inputs = np.asarray(inputs, float)
    targets = np.asarray(targets, float).reshape(-1)
    template = FisModel(np.zeros((25, 6)), output_label=label)
    Phi = template.design_matrix(inputs[:, 0], inputs[:, 1])
    n_genes = Phi.shape[1]
    wmax = template.wmax_radius

    ridge = 1e-8 * np.eye(n_genes)
    theta_ls = np.linalg.solve(Phi.T @ Phi + ridge, Phi.T @ targets)
    # initial spread: perturbations that move the output by about the LS residual
    resid = float(np.sqrt(np.mean((Phi @ theta_ls - targets) ** 2))) + 1e-3 * float(np.std(targets)) + 1e-12
    col = np.sqrt(np.mean(Phi ** 2, axis=0)) + 1e-12
    spread = resid / col / np.sqrt(N_COEFFS)
    pop = theta_ls + rng.uniform(-1.0, 1.0, size=(cfg.population, n_genes)) * spread
    pop[0] = theta_ls
    # coefficient range is taken from the initial population
    sigma = cfg.mutation_rate * (pop.max(axis=0) - pop.min(axis=0))

    def score(P):
        pred = np.clip(Phi @ P.T, 0.0, wmax)
        return fitness(pred, targets[:, None], cfg.negative_penalty_weight)

    if val_inputs is not None:
        Phi_val = template.design_matrix(val_inputs[:, 0], val_inputs[:, 1])
        val_targets = np.asarray(val_targets, float).reshape(-1)

    fit = score(pop)
    p_gene = min(1.0, 4.0 / n_genes)
    for gen in range(cfg.generations):
        elite = pop[np.argmin(fit)].copy()
        elite_fit = float(np.min(fit))
        if curve is not None:
            row = {"generation": gen, "best_fitness": elite_fit}
            pred = np.clip(Phi @ elite, 0.0, wmax)
            row["neg_error_rate"] = float(np.mean(pred < targets))
            if val_inputs is not None:
                pv = np.clip(Phi_val @ elite, 0.0, wmax)
                row["val_fitness"] = float(fitness(pv[:, None], val_targets[:, None], cfg.negative_penalty_weight)[0])
            curve.append(row)
        # tournament selection of parents
        idx = rng.integers(0, cfg.population, size=(2 * cfg.population, cfg.tournament))
        winners = idx[np.arange(len(idx)), np.argmin(fit[idx], axis=1)]
        pa, pb = pop[winners[::2]], pop[winners[1::2]]
        a = rng.random((cfg.population, 1))
        children = a * pa + (1.0 - a) * pb
        mask = rng.random(children.shape) < p_gene
        children = children + mask * rng.normal(size=children.shape) * sigma
        # a shared shift of the constant terms helps move the whole surface
        shift = rng.normal(size=(cfg.population, 1)) * cfg.mutation_rate * resid
        children[:, 5::6] += shift
        children[0] = elite
        pop = children
        fit = score(pop)
        fit[0] = elite_fit
    best = pop[np.argmin(fit)]
    return FisModel(best.reshape(25, 6), output_label=label)


def error_stats(model: FisModel, inputs, targets) -> dict:
    """Normalised prediction errors (prediction - target) / max(target)."""
    pred = model(inputs[:, 0], inputs[:, 1])
    scale = float(np.max(targets))
    err = (pred - targets) / scale
    neg, pos = err[err < 0], err[err > 0]
    return {
        "negative_rate": float(np.mean(err < 0)),
        "mean_negative": float(np.mean(-neg)) if neg.size else 0.0,
        "mean_positive": float(np.mean(pos)) if pos.size else 0.0,
        "max_negative": float(np.max(-neg)) if neg.size else 0.0,
        "max_positive": float(np.max(pos)) if pos.size else 0.0,
    }


@dataclass
class DisturbanceModel:
    """Pair of radius models plus the state-space bound they are clipped into."""

    major: FisModel
    minor: FisModel
    Ts: float = world.TS_HOLONOMIC
    n_edges: int = 8

    def radii(self, speed, beta):
        r_max = self.major(speed, beta)
        r_min = np.minimum(self.minor(speed, beta), r_max)
        return r_max, r_min

    def to_json(self):
        return json.dumps({"major": self.major.to_dict(), "minor": self.minor.to_dict(), "Ts": self.Ts})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(FisModel.from_dict(d["major"]), FisModel.from_dict(d["minor"]), d.get("Ts", world.TS_HOLONOMIC))


class GroundTruthModel(DisturbanceModel):
    """Exact radii, used as a reference disturbance model."""

    def __init__(self, Ts: float = world.TS_HOLONOMIC, n_edges: int = 8):
        self.Ts = Ts
        self.n_edges = n_edges

    def radii(self, speed, beta):
        return world.true_radii(speed, beta)


class ZeroModel(DisturbanceModel):
    def __init__(self, Ts: float = world.TS_HOLONOMIC, n_edges: int = 8):
        self.Ts = Ts
        self.n_edges = n_edges

    def radii(self, speed, beta):
        z = np.zeros(np.broadcast(np.asarray(speed), np.asarray(beta)).shape)
        return z, z


def wmax_set(Ts: float = world.TS_HOLONOMIC, n_edges: int = 8) -> setops.TemplatePolytope:
    """Axis-aligned polygon holding every heading-rotated circumscribed polygon of the admissible ellipses."""
    r = Ts * WMAX_RADIUS / np.cos(np.pi / n_edges)
    return setops.TemplatePolytope(setops.polygon_template(n_edges), np.full(n_edges, r))


def disturbance_set(model: DisturbanceModel, x, beta: float) -> setops.TemplatePolytope:
    """Per-step position disturbance polygon predicted at state ``x``."""
    x = np.asarray(x, float)
    speed = float(np.hypot(x[2], x[3]))
    r_max, r_min = model.radii(speed, beta)
    heading = float(world.heading_of(x[2], x[3]))
    e = setops.Ellipse2(float(r_max) * model.Ts, float(r_min) * model.Ts, heading)
    P = setops.circumscribe_ellipse(e, model.n_edges)
    return setops.TemplatePolytope(P.normals, P.offsets).intersect(wmax_set(model.Ts, model.n_edges))
