"""Closed-loop scenario harness, logging and table/plot output."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ctrl_linear as cl
from . import fis, world
from .optimize import SwarmConfig

TRAJ_COLUMNS = ["k", "t", "x1", "x2", "x3", "x4", "z1", "z2", "z3", "z4", "u1", "u2", "v1", "v2", "w1", "w2",
                "beta", "cost", "feasible"]

SCENARIOS = ("s1", "s2", "s3", "s4", "unicycle")
CONTROLLERS = ("mpc", "tmpc", "sddtmpc")
CASES = {
    "s1": ("none", "attract", "repel"),
    "s2": ("none", "push_up", "push_down"),
    "s3": ("none", "push_up"),
    "s4": ("up", "down"),
    "unicycle": ("none", "uniform_random"),
}

# closed rectilinear U-shaped loop starting and ending at the origin, 17 m in total
S1_WAYPOINTS = np.array([[4.5, 0.0], [4.5, 2.75], [3.25, 2.75], [3.25, 1.5], [1.25, 1.5], [1.25, 2.75], [0.0, 2.75],
                         [0.0, 0.0]])
S1_SWITCH = 0.3
S2_START, S2_GOAL = np.array([2.0, 0.01]), np.array([8.5, 0.01])
S3_START, S3_GOAL = np.array([5.5, 0.0]), np.array([11.0, 0.0])
S4_START, S4_GOAL = np.array([2.3, 3.0]), np.array([3.25, 3.05])
# triangular obstacle between start and goal of scenario 4, symmetric about y = 3.025
S4_OBSTACLE = np.array([[2.4, 3.025], [3.0, 3.625], [3.0, 2.425]])


@dataclass
class ScenarioConfig:
    id: str = "s1"
    controller: str = "sddtmpc"
    disturbance_case: str = "none"
    horizon: int | None = None
    use_terminal: bool = False
    seed: int = 0
    max_steps: int = 400
    pso_iterations: int = 60
    fis_path: str | None = None

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.id!r}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.disturbance_case not in CASES[self.id]:
            raise ValueError(f"case {self.disturbance_case!r} not defined for {self.id}")
        if self.id == "unicycle" and self.controller == "mpc":
            raise ValueError("the unicycle study compares tmpc and sddtmpc only")
        if self.horizon is None:
            self.horizon = {"s3": 6, "unicycle": 10}.get(self.id, 5)
        if self.id == "s3":
            self.horizon = 6


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def solver(self, k: int, report):
        if report is not None:
            self.diagnostics.append((k, report.iterations_used, report.objective, report.constraint_violation,
                                     report.wall_time))

    def event(self, kind: str, k: int, **info):
        self.events.append({"kind": kind, "k": k, **info})

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self, columns=TRAJ_COLUMNS) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in columns])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return f"{float(v):.10g}"


@dataclass
class RunSummary:
    scenario: str
    controller: str
    case: str
    seed: int
    mission_time: float | None = None
    total_realized_cost: float = 0.0
    min_wall_distance: float | None = None
    crashed: bool = False
    infeasible_steps: int = 0
    final_error: float = 0.0
    infeasible_at_start: bool = False
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


# --------------------------------------------------------------------------- scenario geometry


def s3_constraints() -> cl.LinearConstraints:
    """Narrowing corridor p_x + 8 p_y <= 10, p_x - 8 p_y <= 10."""
    return cl.LinearConstraints(H_pos=np.array([[1.0, 8.0], [1.0, -8.0]]), h_pos=np.array([10.0, 10.0]))


def s2_constraints() -> cl.LinearConstraints:
    return cl.LinearConstraints(H_pos=np.array([[0.0, -1.0]]), h_pos=np.array([0.0]))


def _edge_halfplane(a, b, inside_point):
    """Row (n, c) of the line through a, b; ``inside_point`` violates n.p <= c."""
    t = np.asarray(b, float) - np.asarray(a, float)
    n = np.array([t[1], -t[0]])
    n /= np.linalg.norm(n)
    c = n @ a
    if n @ inside_point < c:
        n, c = -n, -c
    return n, c


def s4_constraints(branch: str) -> cl.LinearConstraints:
    """Pass-above or pass-below half-plane extending the obstacle's upper or lower edge."""
    tip, top, bottom = S4_OBSTACLE
    centroid = S4_OBSTACLE.mean(axis=0)
    if branch == "up":
        n, c = _edge_halfplane(tip, top, centroid)
    else:
        n, c = _edge_halfplane(tip, bottom, centroid)
    return cl.LinearConstraints(H_pos=n[None, :], h_pos=np.array([c]))


def point_in_triangle(p, tri=S4_OBSTACLE) -> bool:
    a, b, c = tri
    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
    d1, d2, d3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (neg and pos)


def beta_field_for(scenario: str) -> world.BetaField:
    if scenario == "s2":
        return world.BetaField("corridor")
    if scenario == "s4":
        return world.BetaField("two_zone", split_y=3.025, upper=1.0, lower=0.4)
    return world.BetaField("constant", 1.0)


# --------------------------------------------------------------------------- controller factory


_FIS_CACHE: dict = {}


def load_disturbance_model(path: str | None = None) -> fis.DisturbanceModel:
    """Trained FIS pair from ``path``, or trained once per process with the default seed."""
    key = path or "<default>"
    if key not in _FIS_CACHE:
        if path:
            if not os.path.exists(path):
                raise ValueError(f"disturbance model file {path!r} not found")
            with open(path) as fh:
                _FIS_CACHE[key] = fis.DisturbanceModel.from_json(fh.read())
        else:
            _FIS_CACHE[key] = train_default_model()
    return _FIS_CACHE[key]


def train_default_model(seed: int = 0, curve: list | None = None) -> fis.DisturbanceModel:
    ds = fis.gen_dataset(seed=seed)
    cfg = fis.GaConfig(seed=seed)
    X = ds.inputs[ds.train]
    Xv = ds.inputs[ds.validation]
    models = []
    for k, label in enumerate(("major", "minor")):
        c = [] if curve is not None else None
        models.append(fis.train_ga(X, ds.targets[ds.train, k], cfg, label=label, curve=c,
                                   val_inputs=Xv, val_targets=ds.targets[ds.validation, k]))
        if curve is not None:
            curve.extend({"model": label, **row} for row in c)
    return fis.DisturbanceModel(models[0], models[1])


def make_linear_controller(cfg: ScenarioConfig, cons: cl.LinearConstraints, beta: world.BetaField,
                           model: fis.DisturbanceModel | None = None):
    design = cl.build_design()
    cost = cl.CostConfig(use_terminal=cfg.use_terminal)
    if cfg.controller == "mpc":
        return cl.MpcController(design, cost, cons, cfg.horizon)
    if cfg.controller == "tmpc":
        return cl.TmpcController(design, cost, cons, cfg.horizon)
    model = model if model is not None else load_disturbance_model(cfg.fis_path)
    swarm = SwarmConfig(iterations=cfg.pso_iterations, seed=cfg.seed)
    return cl.SddTmpcController(design, cost, cons, cfg.horizon, model=model, beta_fn=beta, swarm=swarm)


def _mode_for(case: str, target=None) -> world.DisturbanceMode:
    if case in ("none", "push_up", "push_down", "uniform_random"):
        return world.DisturbanceMode(case)
    return world.DisturbanceMode(case, tuple(target))


# --------------------------------------------------------------------------- linear scenarios


def run_scenario(cfg: ScenarioConfig, model: fis.DisturbanceModel | None = None):
    """Closed-loop run of one linear scenario; returns (TrajectoryLog, RunSummary)."""
    if cfg.id == "unicycle":
        return run_unicycle_single(cfg)
    if cfg.id == "s4":
        return run_s4(cfg, model)
    rng = np.random.default_rng(cfg.seed)
    beta = beta_field_for(cfg.id)
    Ts = 0.1
    if cfg.id == "s1":
        cons = cl.LinearConstraints()
        x = np.zeros(4)
        x[:2] = S1_WAYPOINTS[-1]
        goals = list(S1_WAYPOINTS)
    elif cfg.id == "s2":
        cons = s2_constraints()
        x = np.array([*S2_START, 0.0, 0.0])
        goals = [S2_GOAL]
    else:
        cons = s3_constraints()
        x = np.array([*S3_START, 0.0, 0.0])
        goals = [S3_GOAL]
    ctrl = make_linear_controller(cfg, cons, beta, model)
    log = TrajectoryLog(meta={"scenario": cfg.id, "controller": cfg.controller, "case": cfg.disturbance_case})
    summ = RunSummary(cfg.id, cfg.controller, cfg.disturbance_case, cfg.seed)
    wp = 0
    min_wall = np.inf
    farthest = x[0]
    for k in range(cfg.max_steps):
        ref = goals[wp]
        u, v, plan = ctrl.step(x, ref)
        z_now = plan.z_seq[0]
        if k == 0 and not plan.feasible:
            summ.infeasible_at_start = True
            log.event("infeasible", k, px=float(x[0]))
            if cfg.id == "s3":
                break
        if not plan.feasible:
            summ.infeasible_steps += 1
            if cfg.id == "s3" and "infeasible_onset" not in summ.extra:
                summ.extra["infeasible_onset"] = {"k": k, "px": float(x[0])}
                log.event("infeasible", k, px=float(x[0]))
                break
        b = float(beta(x[0], x[1]))
        e = world.true_disturbance_set(x, b)
        e = world.Ellipse2(Ts * e.r_max, Ts * e.r_min, e.heading)
        w = world.sample_disturbance(e, _mode_for(cfg.disturbance_case, ref), rng, position=x)
        stage = float(x @ cl.Q_STAGE @ x - 2 * x[:2] @ cl.Q_STAGE[:2, :2] @ ref + ref @ cl.Q_STAGE[:2, :2] @ ref
                      + u @ cl.R_STAGE @ u)
        summ.total_realized_cost += stage
        log.add(k=k, t=k * Ts, x1=x[0], x2=x[1], x3=x[2], x4=x[3], z1=z_now[0], z2=z_now[1], z3=z_now[2],
                z4=z_now[3], u1=u[0], u2=u[1], v1=v[0], v2=v[1], w1=w[0], w2=w[1], beta=b, cost=plan.cost,
                feasible=bool(plan.feasible))
        log.solver(k, plan.report)
        x = world.holonomic_step(x, u, w, Ts)
        viol = cons.position_violation(x)
        if cfg.id == "s2":
            min_wall = min(min_wall, x[1])
        if cfg.id == "s3":
            min_wall = min(min_wall, float(np.min((cons.h_pos - cons.H_pos @ x[:2]) / np.linalg.norm(cons.H_pos, axis=1))))
        if viol > 1e-9 and not summ.crashed:
            summ.crashed = True
            log.event("crash", k + 1, x=x.tolist())
        farthest = max(farthest, x[0])
        # goal predicates
        nominal = x if cfg.controller == "mpc" else ctrl.state.z
        if cfg.id == "s1":
            if np.linalg.norm(nominal[:2] - goals[wp]) <= S1_SWITCH:
                log.event("waypoint_reached", k + 1, index=wp)
                if wp == len(goals) - 1:
                    summ.mission_time = (k + 1) * Ts
                    break
                wp += 1
        elif cfg.id == "s2" and x[0] >= S2_GOAL[0]:
            summ.mission_time = (k + 1) * Ts
            break
    summ.final_error = float(np.linalg.norm(x[:2] - goals[wp]))
    if cfg.id in ("s2", "s3") and np.isfinite(min_wall):
        summ.min_wall_distance = float(min_wall)
    if cfg.id == "s3":
        summ.extra["farthest_px"] = float(farthest)
        if summ.infeasible_at_start and cfg.controller == "tmpc":
            summ.extra["frontier"] = tmpc_frontier(cfg.horizon)
    return log, summ


def tmpc_frontier(N: int = 6, lo: float = 0.0, hi: float = 10.0, tol: float = 1e-4) -> dict:
    """Largest p_x at rest on the corridor axis for which the tube MPC problem is feasible."""
    design = cl.build_design()
    ctrl = cl.TmpcController(design, cl.CostConfig(), s3_constraints(), N)

    def feasible(px):
        return ctrl.plan_from(np.array([px, 0.0, 0.0, 0.0]), S3_GOAL).feasible

    if not feasible(lo):
        return {"px": None, "half_width": None}
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
    return {"px": lo, "half_width": (10.0 - lo) / 8.0}


def run_s4(cfg: ScenarioConfig, model=None):
    """Evaluate the optimal cost of the chosen initial vertical speed branch ('up' / 'down')."""
    branch = cfg.disturbance_case
    if not cfg.use_terminal:
        # the branch costs are compared with terminal cost and set in place
        cfg = ScenarioConfig(**{**cfg.__dict__, "use_terminal": True})
    beta = beta_field_for("s4")
    cons = s4_constraints(branch)
    x0 = np.array([*S4_START, 1.0, 1.2 if branch == "up" else -1.2])
    ctrl = make_linear_controller(cfg, cons, beta, model)
    if cfg.controller == "mpc":
        plan = ctrl.plan(x0, S4_GOAL)
    elif cfg.controller == "tmpc":
        _, _, plan = ctrl.step(x0, S4_GOAL)
    else:
        plan = ctrl.plan(x0, x0, S4_GOAL, iterations=cfg.pso_iterations)
    log = TrajectoryLog(meta={"scenario": "s4", "controller": cfg.controller, "case": branch})
    for i, (z, v) in enumerate(zip(plan.z_seq[:-1], plan.v_seq)):
        log.add(k=i, t=i * 0.1, x1=z[0], x2=z[1], x3=z[2], x4=z[3], z1=z[0], z2=z[1], z3=z[2], z4=z[3], u1=v[0],
                u2=v[1], v1=v[0], v2=v[1], w1=0.0, w2=0.0, beta=float(beta(z[0], z[1])), cost=plan.cost,
                feasible=bool(plan.feasible))
    summ = RunSummary("s4", cfg.controller, branch, cfg.seed, total_realized_cost=float(plan.cost),
                      infeasible_at_start=not plan.feasible, extra={"evaluated_cost": float(plan.cost)})
    summ.crashed = any(point_in_triangle(z[:2]) for z in plan.z_seq)
    return log, summ


# --------------------------------------------------------------------------- unicycle study


UNICYCLE_COLUMNS = ["k", "t", "xR1", "xR2", "xR3", "distance", "u_norm", "v_norm", "e3", "lam"]


def unicycle_log(run, case: str, seed: int):
    """Convert a closed-loop unicycle run into the common log/summary pair."""
    from . import ctrl_unicycle as cu

    log = TrajectoryLog(meta={"scenario": "unicycle", "controller": run.controller, "case": case})
    for r in run.rows:
        x, z, u, v, w = r["x"], r["z"], r["u"], r["v"], r["w"]
        log.add(k=r["k"], t=r["t"], x1=x[0], x2=x[1], x3=x[2], x4=float("nan"), z1=z[0], z2=z[1], z3=z[2],
                z4=float("nan"), u1=u[0], u2=u[1], v1=v[0], v2=v[1], w1=w[0], w2=w[1], beta=float("nan"),
                cost=r["cost"], feasible=bool(r["feasible"]), xR1=r["xR"][0], xR2=r["xR"][1], xR3=r["xR"][2],
                distance=r["distance"], u_norm=r["u_norm"], v_norm=r["v_norm"], e3=r["e3_peak"], lam=r["lam"])
        log.solver(r["k"], r.get("report"))
        if not r["feasible"]:
            log.event("infeasible", r["k"])
    summ = RunSummary("unicycle", run.controller, case, seed, mission_time=run.rise_time,
                      infeasible_steps=run.infeasible_steps, final_error=run.final_distance,
                      infeasible_at_start=bool(run.rows and not run.rows[0]["feasible"]))
    summ.extra = {
        "rise_time": run.rise_time,
        "max_input_norm": run.max_input_norm,
        "nominal_outside_fixed": run.nominal_outside_fixed,
        "max_heading_error": run.max_heading_error,
        "tube_violations": run.tube_violations,
        "steady_error": run.steady_error,
        "fixed_input_scale": float(cu.UnicycleSynthesis().Vconst),
    }
    return log, summ


def run_unicycle_single(cfg: ScenarioConfig):
    from . import ctrl_unicycle as cu

    ucfg = cu.UnicycleConfig(N=cfg.horizon, iterations=cfg.pso_iterations, seed=cfg.seed)
    steps = min(cfg.max_steps, 100)
    run = cu.simulate(cfg.controller, seed=cfg.seed, steps=steps, disturbed=cfg.disturbance_case != "none", cfg=ucfg)
    return unicycle_log(run, cfg.disturbance_case, cfg.seed)


def run_unicycle(cfg: ScenarioConfig):
    """Both unicycle controllers under the same seed: ((log_tmpc, log_sdd), (summary_tmpc, summary_sdd))."""
    pairs = [run_unicycle_single(ScenarioConfig(**{**cfg.__dict__, "controller": c})) for c in ("tmpc", "sddtmpc")]
    return (pairs[0][0], pairs[1][0]), (pairs[0][1], pairs[1][1])


# --------------------------------------------------------------------------- cost comparison at one state


COMPARISON_STATE = np.array([0.35, 0.65, 0.0, 0.0])
COMPARISON_ITERATIONS = (40, 80, 120, 160, 200)


def cost_comparison(use_terminal: bool, iterations=COMPARISON_ITERATIONS, seed: int = 0, x0=COMPARISON_STATE,
                    model=None) -> dict:
    """Optimal nominal costs of the three controllers steering x0 to the origin without position limits."""
    design = cl.build_design()
    cons = cl.LinearConstraints()
    cost = cl.CostConfig(use_terminal=use_terminal)
    mpc = cl.MpcController(design, cost, cons, 5).plan(x0, np.zeros(2))
    tmpc = cl.TmpcController(design, cl.CostConfig(use_terminal=use_terminal), cons, 5).plan_from(x0, np.zeros(2))
    sdd = cl.SddTmpcController(design, cl.CostConfig(use_terminal=use_terminal), cons, 5,
                               model=model if model is not None else load_disturbance_model())
    swarm_costs = {}
    for it in iterations:
        p = sdd.plan(x0, x0, np.zeros(2), iterations=it, seed=seed)
        swarm_costs[it] = float(p.cost) if p.feasible else float("nan")
    return {"mpc": float(mpc.cost), "tmpc": float(tmpc.cost), "pso": swarm_costs,
            "mpc_feasible": bool(mpc.feasible), "tmpc_feasible": bool(tmpc.feasible)}


# --------------------------------------------------------------------------- reports


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (int, float, np.floating, np.integer, bool)) else v for v in r])


def report_tables(summaries, out_dir: str, cost_rows=None) -> list:
    """Write mission-time, cost-comparison and unicycle tables; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    summaries = list(summaries)

    p = os.path.join(out_dir, "mission_times.csv")
    rows = []
    for s in summaries:
        if s.scenario in ("s1", "s2", "s3"):
            rows.append([s.scenario, s.case, s.controller, s.seed,
                         "" if s.mission_time is None else s.mission_time, int(s.crashed), s.infeasible_steps])
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    _write_csv(p, ["scenario", "case", "controller", "seed", "mission_time", "crashed", "infeasible_steps"], rows)
    paths.append(p)

    p = os.path.join(out_dir, "cost_comparison.csv")
    header = ["terminal", "mpc", "tmpc"] + [f"pso_{it}" for it in COMPARISON_ITERATIONS]
    rows = []
    for row in cost_rows or []:
        rows.append([int(row["terminal"]), row["mpc"], row["tmpc"]] + [row["pso"].get(it, "") for it in COMPARISON_ITERATIONS])
    _write_csv(p, header, rows)
    paths.append(p)

    p = os.path.join(out_dir, "unicycle_metrics.csv")
    rows = []
    for s in summaries:
        if s.scenario == "unicycle":
            e = s.extra
            rows.append([s.controller, s.case, s.seed, "" if e.get("rise_time") is None else e["rise_time"],
                         e.get("steady_error", ""), e.get("max_input_norm", ""), e.get("nominal_outside_fixed", ""),
                         e.get("max_heading_error", ""), e.get("tube_violations", "")])
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    _write_csv(p, ["controller", "case", "seed", "rise_time", "steady_error", "max_input_norm",
                   "nominal_outside_fixed", "max_heading_error", "tube_violations"], rows)
    paths.append(p)

    p = os.path.join(out_dir, "branch_costs.csv")
    rows = sorted([[s.controller, s.case, s.extra.get("evaluated_cost", "")] for s in summaries if s.scenario == "s4"])
    _write_csv(p, ["controller", "branch", "evaluated_cost"], rows)
    paths.append(p)
    return paths


# --------------------------------------------------------------------------- SVG plots


class _Svg:
    """Minimal line-plot canvas with a fixed data-to-pixel mapping."""

    W, H, PAD = 640, 420, 50

    def __init__(self, xs, ys, title=""):
        xs = np.asarray([v for v in np.ravel(xs) if np.isfinite(v)] or [0.0], float)
        ys = np.asarray([v for v in np.ravel(ys) if np.isfinite(v)] or [0.0], float)
        self.x0, self.x1 = float(xs.min()), float(xs.max())
        self.y0, self.y1 = float(ys.min()), float(ys.max())
        if self.x1 - self.x0 < 1e-12:
            self.x0, self.x1 = self.x0 - 0.5, self.x1 + 0.5
        if self.y1 - self.y0 < 1e-12:
            self.y0, self.y1 = self.y0 - 0.5, self.y1 + 0.5
        self.parts = [f'<rect x="0" y="0" width="{self.W}" height="{self.H}" fill="white"/>',
                      f'<text x="{self.W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']

    def px(self, x, y):
        sx = self.PAD + (x - self.x0) / (self.x1 - self.x0) * (self.W - 2 * self.PAD)
        sy = self.H - self.PAD - (y - self.y0) / (self.y1 - self.y0) * (self.H - 2 * self.PAD)
        return sx, sy

    def polyline(self, xs, ys, color="black", cls="series", width=1.5):
        pts = " ".join("%.2f,%.2f" % self.px(x, y) for x, y in zip(xs, ys) if np.isfinite(x) and np.isfinite(y))
        self.parts.append(f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def polygon(self, xs, ys, color="gray", cls="boundary"):
        pts = " ".join("%.2f,%.2f" % self.px(x, y) for x, y in zip(xs, ys))
        self.parts.append(f'<polygon class="{cls}" points="{pts}" fill="none" stroke="{color}" stroke-dasharray="4,3"/>')

    def hline(self, y, color="red", cls="wall"):
        a = self.px(self.x0, y)
        b = self.px(self.x1, y)
        self.parts.append(f'<line class="{cls}" x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                          f'stroke="{color}" stroke-width="2"/>')

    def rect(self, x, y, w, h, fill, cls="heat"):
        self.parts.append(f'<rect class="{cls}" x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{fill}"/>')

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.W}" height="{self.H}">\n')
            fh.write("\n".join(self.parts))
            fh.write("\n</svg>\n")


def _heat(b):
    b = float(np.clip(b, 0.0, 1.0))
    return "rgb(%d,%d,%d)" % (int(255 * b), int(80 + 100 * (1 - b)), int(255 * (1 - b)))


def emit_plots(log: TrajectoryLog, out_dir: str) -> list:
    """Static SVG plots for one run; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if not log.rows:
        return paths
    scen = log.meta.get("scenario", "")
    t = log.column("t")
    x1, x2 = log.column("x1"), log.column("x2")
    z1, z2 = log.column("z1"), log.column("z2")

    extra_y = [0.0] if scen == "s2" else []
    c = _Svg(np.concatenate([x1, z1]), np.concatenate([x2, z2, extra_y]), f"{scen} positions")
    if scen != "unicycle":
        beta = log.column("beta")
        n = len(beta)
        width = (c.W - 2 * c.PAD) / max(n, 1)
        for i, b in enumerate(beta):
            c.rect(c.PAD + i * width, c.H - 18, width + 0.5, 10, _heat(b))
    else:
        c.polyline(log.column("xR1"), log.column("xR2"), "green", "leader")
    if scen == "s2":
        c.hline(0.0)
    c.polyline(x1, x2, "blue", "realized")
    c.polyline(z1, z2, "orange", "nominal")
    p = os.path.join(out_dir, "positions.svg")
    c.write(p)
    paths.append(p)

    err = np.hypot(x1 - z1, x2 - z2)
    c = _Svg(t, err, "distance from nominal")
    c.polyline(t, err, "purple", "tube_error")
    p = os.path.join(out_dir, "tube_error.svg")
    c.write(p)
    paths.append(p)

    if scen == "unicycle":
        from . import ctrl_unicycle as cu

        syn = cu.UnicycleSynthesis()
        d = log.column("distance")
        c = _Svg(t, d, "distance to target")
        c.polyline(t, d, "blue", "distance")
        c.hline(cu.RISE_THRESHOLD, "gray", "threshold")
        p = os.path.join(out_dir, "distance.svg")
        c.write(p)
        paths.append(p)
        # inputs drawn as (nu, rho*omega) so the diamond is a square rotated by 45 degrees
        nu, rw = log.column("u1"), syn.rho * log.column("u2")
        vnu, vrw = log.column("v1"), syn.rho * log.column("v2")
        dx = np.array([1.0, 0.0, -1.0, 0.0]) * syn.nu_max
        dy = np.array([0.0, 1.0, 0.0, -1.0]) * syn.nu_max
        c = _Svg(np.concatenate([nu, vnu, dx]), np.concatenate([rw, vrw, dy]), "inputs (nu, rho*omega)")
        c.polygon(dx, dy, "black", "boundary_U")
        c.polygon(syn.Vconst * dx, syn.Vconst * dy, "gray", "boundary_fixed")
        c.polyline(vnu, vrw, "orange", "nominal_input")
        c.polyline(nu, rw, "blue", "real_input")
        p = os.path.join(out_dir, "inputs.svg")
        c.write(p)
        paths.append(p)
    else:
        u1, u2 = log.column("u1"), log.column("u2")
        c = _Svg(np.concatenate([t, t]), np.concatenate([u1, u2, [cl.U_MAX, -cl.U_MAX]]), "inputs")
        c.hline(cl.U_MAX, "black", "boundary_U")
        c.hline(-cl.U_MAX, "black", "boundary_U")
        c.polyline(t, u1, "blue", "u1")
        c.polyline(t, u2, "orange", "u2")
        p = os.path.join(out_dir, "inputs.svg")
        c.write(p)
        paths.append(p)
    return paths


# --------------------------------------------------------------------------- batch


def write_run(log: TrajectoryLog, summ: RunSummary, out_dir: str, plots: bool = True):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trajectory.csv"), "w") as fh:
        fh.write(log.to_csv())
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        fh.write(summ.to_json())
    _write_csv(os.path.join(out_dir, "diagnostics.csv"), ["step", "iterations", "objective", "violation", "wall_time"],
               log.diagnostics)
    with open(os.path.join(out_dir, "events.json"), "w") as fh:
        json.dump(log.events, fh, indent=2, default=float)
    if summ.scenario == "unicycle":
        with open(os.path.join(out_dir, "leader.csv"), "w") as fh:
            fh.write(log.to_csv(UNICYCLE_COLUMNS))
    if plots:
        emit_plots(log, os.path.join(out_dir, "plots"))


def load_summaries(root: str) -> list:
    out = []
    for dirpath, _, files in sorted(os.walk(root)):
        if "summary.json" in files:
            with open(os.path.join(dirpath, "summary.json")) as fh:
                out.append(RunSummary(**json.load(fh)))
    return out


def run_batch(cells, out_root: str, model=None, plots: bool = False, workers: int = 1) -> list:
    """Run independent (scenario, controller, case, seed) cells; each writes to its own directory."""
    cells = list(cells)

    def one(cfg):
        log, summ = run_scenario(cfg, model)
        name = f"{cfg.id}_{cfg.controller}_{cfg.disturbance_case}_seed{cfg.seed}"
        write_run(log, summ, os.path.join(out_root, name), plots=plots)
        return summ

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(one, cells))
    return [one(c) for c in cells]
