"""Command-line entry point: ``sddtmpc run|batch|train-fis|report``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import config as cfgmod
from . import sim

log = logging.getLogger("sddtmpc")

EXIT_OK, EXIT_INFEASIBLE, EXIT_CRASH = 0, 2, 3

SCENARIO_KEYS = ("id", "controller", "disturbance_case", "horizon", "use_terminal", "seed", "max_steps",
                 "pso_iterations", "fis_path")


def exit_code(summ: sim.RunSummary) -> int:
    if summ.crashed:
        return EXIT_CRASH
    if summ.infeasible_at_start:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _scenario_config(values: dict) -> sim.ScenarioConfig:
    aliases = {"scenario": "id", "case": "disturbance_case", "pso_iters": "pso_iterations", "fis": "fis_path"}
    clean = {}
    for k, v in values.items():
        k = aliases.get(k, k)
        if k in SCENARIO_KEYS:
            clean[k] = v
    if "id" in clean:
        clean["id"] = str(clean["id"])
    return sim.ScenarioConfig(**clean)


def cmd_run(args) -> int:
    base = cfgmod.load_config(args.config) if args.config else {}
    over = {"id": args.scenario, "controller": args.controller, "disturbance_case": args.case, "seed": args.seed,
            "pso_iterations": args.pso_iters, "max_steps": args.max_steps, "horizon": args.horizon,
            "fis_path": args.fis}
    if args.no_terminal:
        over["use_terminal"] = False
    if args.terminal:
        over["use_terminal"] = True
    cfg = _scenario_config(cfgmod.merge(base, over))
    log.info("running %s/%s/%s seed=%d", cfg.id, cfg.controller, cfg.disturbance_case, cfg.seed)
    lg, summ = sim.run_scenario(cfg)
    sim.write_run(lg, summ, args.out, plots=not args.no_plots)
    sim.report_tables([summ], os.path.join(args.out, "tables"))
    code = exit_code(summ)
    print(json.dumps({"out": args.out, "exit": code, "mission_time": summ.mission_time, "crashed": summ.crashed,
                      "infeasible_at_start": summ.infeasible_at_start}))
    return code


def matrix_cells(values: dict) -> list:
    """Expand a batch matrix (scenarios, controllers, cases, seeds) into scenario configs."""
    scenarios = [str(s) for s in cfgmod.as_list(values.get("scenarios", "s1"))]
    controllers = cfgmod.as_list(values.get("controllers", list(sim.CONTROLLERS)))
    seeds = cfgmod.as_list(values.get("seeds", 0))
    shared = {k: values[k] for k in ("use_terminal", "max_steps", "pso_iterations", "horizon", "fis_path") if k in values}
    cells = []
    for scen in scenarios:
        cases = cfgmod.as_list(values.get("cases", list(sim.CASES[scen])))
        for ctrl in controllers:
            if scen == "unicycle" and ctrl == "mpc":
                continue
            for case in cases:
                if case not in sim.CASES[scen]:
                    continue
                for seed in seeds:
                    cells.append(sim.ScenarioConfig(id=scen, controller=ctrl, disturbance_case=case, seed=int(seed),
                                                    **shared))
    return cells


def cmd_batch(args) -> int:
    values = cfgmod.load_config(args.matrix)
    out = args.out or str(values.get("out", "batch_out"))
    cells = matrix_cells(values)
    log.info("batch of %d cells into %s", len(cells), out)
    summaries = sim.run_batch(cells, out, plots=bool(values.get("plots", False)), workers=int(values.get("workers", 1)))
    sim.report_tables(summaries, os.path.join(out, "tables"))
    print(json.dumps({"out": out, "cells": len(cells), "crashed": sum(s.crashed for s in summaries)}))
    return EXIT_OK


def cmd_train_fis(args) -> int:
    curve = []
    model = sim.train_default_model(seed=args.seed, curve=curve)
    with open(args.out, "w") as fh:
        fh.write(model.to_json())
    curve_path = args.curve or os.path.splitext(args.out)[0] + "_curve.csv"
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "generation", "best_fitness", "neg_error_rate"])
        for row in curve:
            w.writerow([row["model"], row["generation"], f"{row['best_fitness']:.10g}", f"{row['neg_error_rate']:.10g}"])
    print(json.dumps({"model": args.out, "curve": curve_path}))
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = sim.load_summaries(args.inp)
    cost_rows = []
    if args.costs:
        for term in (False, True):
            row = sim.cost_comparison(term)
            cost_rows.append({"terminal": term, **row})
    paths = sim.report_tables(summaries, os.path.join(args.inp, "tables"), cost_rows)
    print(json.dumps({"runs": len(summaries), "tables": paths}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sddtmpc", description="Tube MPC scenario runner")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario cell")
    r.add_argument("--config", help="flat key = value file; flags override it")
    r.add_argument("--scenario", choices=sim.SCENARIOS)
    r.add_argument("--controller", choices=sim.CONTROLLERS)
    r.add_argument("--case")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--no-terminal", action="store_true")
    r.add_argument("--terminal", action="store_true", help="add terminal cost and set")
    r.add_argument("--pso-iters", type=int)
    r.add_argument("--max-steps", type=int)
    r.add_argument("--horizon", type=int)
    r.add_argument("--fis", help="trained model JSON from train-fis")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run a scenario x controller x case x seed matrix")
    b.add_argument("--matrix", required=True)
    b.add_argument("--out")
    b.set_defaults(func=cmd_batch)

    t = sub.add_parser("train-fis", help="train the disturbance model pair")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--curve", help="training-curve CSV path")
    t.set_defaults(func=cmd_train_fis)

    rp = sub.add_parser("report", help="aggregate summaries under a directory into tables")
    rp.add_argument("--in", dest="inp", required=True)
    rp.add_argument("--costs", action="store_true", help="also compute the single-state cost comparison")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
