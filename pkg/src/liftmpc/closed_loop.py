"""Closed-loop iteration driver and campaign runner.

Runs the plant under the receding-horizon policy until the output
windows settle at the equilibrium, stores the trajectory in the safe
set, and asserts the closed-loop guarantees as it goes: feasibility at
every step after the first, the one-step cost decrease, constraint
satisfaction, and non-increasing iteration costs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controller import (
    LmpcConfig,
    StepResult,
    initial_warm_start,
    solve_step,
    warm_start_from_previous,
)
from .examples import SeedTrajectory, build
from .safe_set import OutputSafeSet


class IterationFailure(RuntimeError):
    """Theorem assertion or convergence failure during a closed-loop run."""


@dataclass
class RunConfig:
    iterations: int = 10          # table rows including the seeded iteration 0
    max_steps: Optional[int] = None
    tol_conv: Optional[float] = None
    seed: int = 0                 # recorded for reproducibility of randomized tests
    x_S: Optional[np.ndarray] = None
    fixed_start: bool = True      # per-iteration start equals x_S; enables the
    eq19_tol: float = 1e-6        # performance (cost non-increase) assertion
    perf_tol: float = 1e-6
    box_slack: float = 1e-8


@dataclass
class IterationRecord:
    iteration: int
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    objectives: list
    total_cost: float = np.nan
    converged: bool = False
    steps: int = 0
    diagnostics: list = field(default_factory=list)

    def replay_error(self, plant) -> float:
        """Largest dynamics mismatch when replaying stored inputs."""
        err = 0.0
        x = self.states[0]
        for t, u in enumerate(self.inputs):
            x = plant.step(x, u)
            err = max(err, float(np.max(np.abs(x - self.states[t + 1]))))
        return err


@dataclass
class CampaignResult:
    example_id: str
    records: list
    safe_set: OutputSafeSet
    config: dict

    @property
    def costs(self) -> list:
        return [r.total_cost for r in self.records]

    def summary(self) -> str:
        lines = ["iteration  cost"]
        for r in self.records:
            lines.append(f"{r.iteration:9d}  {r.total_cost:.6f}")
        return "\n".join(lines)


def generate_initial_trajectory(example) -> SeedTrajectory:
    """Iteration-zero trajectory from the example's seeding controller,
    validated against the constraints before use."""
    seed = example.seed()
    for x in seed.states:
        if not example.plant.state_feasible(x, slack=1e-9):
            raise IterationFailure(f"seed state {x} violates the constraints")
    for u in seed.inputs:
        if not example.plant.input_box.contains(u, slack=1e-9):
            raise IterationFailure(f"seed input {u} violates the constraints")
    return seed


def _window_deviation_series(example, outputs) -> np.ndarray:
    depth = example.control_system.lift_depth
    outputs = np.asarray(outputs)
    n = outputs.shape[0] - depth + 1
    return np.array([example.deviation(outputs[t : t + depth].T) for t in range(max(n, 0))])


def _converged_at(example, outputs, tol: float, consec: int) -> Optional[int]:
    devs = _window_deviation_series(example, outputs)
    for t in range(devs.size - consec + 1):
        if np.all(devs[t : t + consec] <= tol):
            return t
    return None


def run_iteration(
    example,
    safe_set: OutputSafeSet,
    run_config: RunConfig,
    iteration: int,
    lmpc_config: Optional[LmpcConfig] = None,
) -> IterationRecord:
    """One closed-loop rollout from x_S until the windows settle."""
    lmpc_config = lmpc_config or LmpcConfig()
    plant = example.plant
    depth = example.control_system.lift_depth
    tol = run_config.tol_conv if run_config.tol_conv is not None else example.tol_conv
    max_steps = run_config.max_steps if run_config.max_steps is not None else example.max_steps
    consec = example.consec
    x = np.array(run_config.x_S if run_config.x_S is not None else example.x_S, dtype=float)
    augmented = example.augmented
    u_cur = example.u_S.copy() if augmented else None

    # zero-length run: already at the equilibrium, hold it
    hold_states = [x.copy()]
    hold_u = plant.u_eq
    for _ in range(depth + consec):
        hold_states.append(plant.step(hold_states[-1], hold_u))
    hold_out = np.array([plant.output(s) for s in hold_states])
    if _converged_at(example, hold_out, tol, consec) == 0:
        inputs = np.tile(hold_u, (len(hold_states) - 1, 1))
        return IterationRecord(iteration=iteration, states=np.array(hold_states),
                               inputs=inputs, outputs=hold_out, objectives=[],
                               converged=True, steps=0)

    states = [x.copy()]
    outputs = [np.asarray(plant.output(x), dtype=float)]
    inputs: list = []
    objectives: list = []
    diagnostics: list = []
    prev: Optional[StepResult] = None

    for t in range(max_steps):
        if not plant.state_feasible(x, run_config.box_slack):
            raise IterationFailure(f"state constraint violated at t={t}: {x}")
        x_ctrl = np.concatenate([x, u_cur]) if augmented else x
        if prev is not None:
            warm = warm_start_from_previous(example, prev, safe_set)
        elif run_config.fixed_start and run_config.x_S is None:
            warm = initial_warm_start(example, safe_set)
        else:
            warm = None
        result = solve_step(example, x_ctrl, safe_set, lmpc_config, warm)
        if not result.feasible:
            if t == 0:
                raise IterationFailure("initial state is outside the region of attraction")
            raise IterationFailure(f"recursive feasibility lost at t={t}")
        objectives.append(result.objective)
        diagnostics.append({"iteration": iteration, "t": t, "objective": result.objective,
                            "status": result.status,
                            "mode_seq": list(result.mode_seq) if result.mode_seq else None,
                            **{k: v for k, v in result.diagnostics.items() if k != "kkt"}})
        u_applied = u_cur if augmented else result.u0
        if not plant.input_box.contains(u_applied, run_config.box_slack):
            raise IterationFailure(f"input constraint violated at t={t}: {u_applied}")
        inputs.append(np.asarray(u_applied, dtype=float))
        x = plant.step(x, u_applied)
        states.append(x.copy())
        outputs.append(np.asarray(plant.output(x), dtype=float))
        if augmented:
            u_cur = result.u0
        prev = result

        if len(outputs) >= depth + consec:
            tail = np.array(outputs[-(depth + consec - 1):])
            devs = _window_deviation_series(example, tail)
            if devs.size >= consec and np.all(devs[-consec:] <= tol):
                break
    else:
        raise IterationFailure(
            f"iteration {iteration} did not converge within {max_steps} steps"
        )

    outputs = np.array(outputs)
    # one-step cost decrease along the realized run (the Lyapunov chain)
    for t in range(len(objectives) - 1):
        stage = example.stage_cost(outputs[t : t + depth].T)
        if objectives[t + 1] > objectives[t] - stage + run_config.eq19_tol * (1.0 + abs(objectives[t])):
            raise IterationFailure(
                f"cost decrease violated at t={t}: "
                f"{objectives[t + 1]:.9g} > {objectives[t]:.9g} - {stage:.9g}"
            )
    return IterationRecord(iteration=iteration, states=np.array(states),
                           inputs=np.array(inputs), outputs=outputs,
                           objectives=objectives, converged=True,
                           steps=len(inputs), diagnostics=diagnostics)


def run_campaign(
    example,
    run_config: RunConfig,
    lmpc_config: Optional[LmpcConfig] = None,
    quiet: bool = True,
) -> CampaignResult:
    """Seeded iteration plus LMPC iterations with the safe set growing in
    between; asserts that iteration costs do not increase."""
    lmpc_config = lmpc_config or LmpcConfig()
    if run_config.iterations < 1:
        raise IterationFailure("campaign needs at least the seeded iteration")
    system = example.control_system
    safe_set = OutputSafeSet(m=system.m, width=system.lift_depth)
    tol = run_config.tol_conv if run_config.tol_conv is not None else example.tol_conv

    def store(outputs, j):
        return safe_set.add_trajectory(
            outputs, example.stage_cost, system=system,
            deviation=example.deviation, equilibrium_tail=example.equilibrium_tail,
            tol_conv=tol, consec=example.consec, iteration=j,
            window_check=getattr(example, "window_feasible", None),
        )

    seed = generate_initial_trajectory(example)
    store(seed.outputs, 0)
    rec0 = IterationRecord(iteration=0, states=seed.states, inputs=seed.inputs,
                           outputs=seed.outputs, objectives=[], converged=True,
                           steps=len(seed.inputs))
    rec0.total_cost = safe_set.points[safe_set.trajectories[0][0]].cost_to_go
    records = [rec0]
    if not quiet:
        print(f"iteration 0 (seed): cost {rec0.total_cost:.6f}, {rec0.steps} steps")

    n_before = len(safe_set)
    for j in range(1, run_config.iterations):
        rec = run_iteration(example, safe_set, run_config, j, lmpc_config)
        store(rec.outputs, j)
        assert len(safe_set) >= n_before  # stored points only ever accumulate
        n_before = len(safe_set)
        rec.total_cost = safe_set.points[safe_set.trajectories[-1][0]].cost_to_go
        prev_cost = records[-1].total_cost
        if run_config.fixed_start and rec.total_cost > prev_cost + run_config.perf_tol * (1.0 + prev_cost):
            raise IterationFailure(
                f"iteration cost increased: J^{j} = {rec.total_cost:.9g} "
                f"> J^{j - 1} = {prev_cost:.9g}"
            )
        records.append(rec)
        if not quiet:
            print(f"iteration {j}: cost {rec.total_cost:.6f}, {rec.steps} steps")

    config = {"iterations": run_config.iterations, "seed": run_config.seed,
              "tol_conv": tol,
              "max_steps": run_config.max_steps if run_config.max_steps is not None else example.max_steps}
    return CampaignResult(example_id=example.example_id, records=records,
                          safe_set=safe_set, config=config)


# ---------------------------------------------------------------------------
# campaign artifacts


def write_campaign(result: CampaignResult, out_dir, full_config: Optional[dict] = None) -> None:
    """costs.csv, trajectories.csv, diagnostics.jsonl, safe_set.json, config.json."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "costs.csv"), "w") as fh:
        fh.write("iteration,cost\n")
        for rec in result.records:
            fh.write(f"{rec.iteration},{rec.total_cost!r}\n")
    n = result.records[0].states.shape[1]
    m = result.records[0].inputs.shape[1]
    m_out = result.records[0].outputs.shape[1]
    with open(os.path.join(out_dir, "trajectories.csv"), "w") as fh:
        cols = (["iteration", "t"] + [f"x{i}" for i in range(n)]
                + [f"u{i}" for i in range(m)] + [f"y{i}" for i in range(m_out)])
        fh.write(",".join(cols) + "\n")
        for rec in result.records:
            for t in range(rec.states.shape[0]):
                row = [str(rec.iteration), str(t)]
                row += [repr(v) for v in rec.states[t]]
                if t < rec.inputs.shape[0]:
                    row += [repr(v) for v in rec.inputs[t]]
                else:
                    row += [""] * m
                row += [repr(v) for v in rec.outputs[t]]
                fh.write(",".join(row) + "\n")
    with open(os.path.join(out_dir, "diagnostics.jsonl"), "w") as fh:
        for rec in result.records:
            for d in rec.diagnostics:
                fh.write(json.dumps(d) + "\n")
    result.safe_set.save(os.path.join(out_dir, "safe_set.json"))
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(full_config if full_config is not None else
                  {"example": result.example_id, "overrides": {}, "run": result.config}, fh, indent=2)


def run_from_config(config: dict, quiet: bool = True):
    """Build the example and run the campaign described by a config dict."""
    overrides = dict(config.get("overrides") or {})
    j_max = overrides.get("j_max")
    example = build(config["example"], overrides)
    run_cfg = RunConfig()
    if j_max is not None:
        run_cfg.iterations = int(j_max)
    for key in ("iterations", "max_steps", "tol_conv", "seed"):
        if key in (config.get("run") or {}):
            setattr(run_cfg, key, config["run"][key])
    result = run_campaign(example, run_cfg, quiet=quiet)
    return result, run_cfg
