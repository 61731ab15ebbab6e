"""Command line entry point.

Subcommands: run a campaign, validate a configured example, replay a
finished run directory, or hand a run directory to the plotting
package.  Exit codes: 0 success, 1 assertion/guarantee failure,
2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import filecmp
import json
import logging
import os
import sys
import tempfile

import numpy as np

from .closed_loop import IterationFailure, run_from_config, write_campaign
from .controller import SolverFailure
from .examples import ConfigError, build
from .safe_set import TrajectoryRejected
from .systems import check_monotone_on_lines, lifted_from_rollout, reconstruct_input, reconstruct_state, window_from_rollout

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("liftmpc")


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(config, dict) or "example" not in config:
        raise ConfigError("config must be an object with an 'example' field")
    return config


def _apply_cli_overrides(config: dict, args) -> dict:
    config = dict(config)
    run = dict(config.get("run") or {})
    if args.iterations is not None:
        run["iterations"] = args.iterations
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    config["run"] = run
    return config


def cmd_run(args) -> int:
    config = _apply_cli_overrides(_load_config(args.config), args)
    result, run_cfg = run_from_config(config, quiet=args.quiet)
    out = args.out or "runs/" + config["example"]
    write_campaign(result, out, full_config=config)
    if not args.quiet:
        print(result.summary())
    print(f"campaign complete: {len(result.records)} iterations, artifacts in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config = _load_config(args.config)
    example = build(config["example"], config.get("overrides"))
    rng = np.random.default_rng(args.seed or 0)
    sys_ = example.plant
    tol = 1e-6 if example.example_id == "unicycle" else 1e-9
    worst_x = worst_u = 0.0
    n_trials = 200
    for _ in range(n_trials):
        x0, us = example.sample_rollout(rng, sys_.lift_depth)
        w = window_from_rollout(sys_, x0, us[: sys_.lift_depth - 1])
        worst_x = max(worst_x, float(np.max(np.abs(reconstruct_state(sys_, w) - x0))))
        Y = lifted_from_rollout(sys_, x0, us)
        worst_u = max(worst_u, float(np.max(np.abs(reconstruct_input(sys_, Y) - us[0]))))
    print(f"round-trip over {n_trials} rollouts: state {worst_x:.2e}, input {worst_u:.2e} (tol {tol:.0e})")
    ok = worst_x <= tol and worst_u <= tol

    if example.example_id == "pwa":
        rep = check_monotone_on_lines(
            lambda w: sys_.state_map(w.reshape(2, 1).T), np.full(2, -5.0), np.zeros(2),
            n_lines=200, n_points=30)
        print(f"state-map monotone on lines: {'pass' if rep.passed else 'FAIL'}")
        ok = ok and rep.passed
    print("validation", "passed" if ok else "FAILED")
    return EXIT_OK if ok else EXIT_ASSERTION


def cmd_replay(args) -> int:
    run_dir = args.run
    config_path = os.path.join(run_dir, "config.json")
    costs_path = os.path.join(run_dir, "costs.csv")
    if not (os.path.exists(config_path) and os.path.exists(costs_path)):
        raise ConfigError(f"{run_dir} is not a finished run directory")
    with open(config_path) as fh:
        config = json.load(fh)
    result, _ = run_from_config(config, quiet=args.quiet)
    with tempfile.TemporaryDirectory() as tmp:
        write_campaign(result, tmp, full_config=config)
        same = filecmp.cmp(costs_path, os.path.join(tmp, "costs.csv"), shallow=False)
    print("replay:", "costs.csv reproduced exactly" if same else "costs.csv MISMATCH")
    return EXIT_OK if same else EXIT_ASSERTION


def cmd_export_plots(args) -> int:
    try:
        from liftplots.render import render
    except ImportError:
        print("the plotting package (liftplots) is not installed", file=sys.stderr)
        return EXIT_CONFIG
    render(run_dir=args.run, figure=args.figure, out=args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liftmpc",
                                     description="learning MPC campaigns in lifted output space")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a campaign from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="artifact directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--iterations", type=int, default=None)
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_val = sub.add_parser("validate", help="round-trip and map property report")
    p_val.add_argument("--config", required=True)
    p_val.add_argument("--seed", type=int, default=None)
    p_val.add_argument("--quiet", action="store_true")
    p_val.set_defaults(fn=cmd_validate)

    p_rep = sub.add_parser("replay", help="re-run a finished campaign and compare costs.csv")
    p_rep.add_argument("--run", required=True)
    p_rep.add_argument("--quiet", action="store_true")
    p_rep.set_defaults(fn=cmd_replay)

    p_plot = sub.add_parser("export-plots", help="render a figure from campaign artifacts")
    p_plot.add_argument("--run", required=True)
    p_plot.add_argument("--figure", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LMPC_LOG", "WARNING"))
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IterationFailure, TrajectoryRejected) as exc:
        print(f"guarantee failure: {exc}", file=sys.stderr)
        return EXIT_ASSERTION
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
