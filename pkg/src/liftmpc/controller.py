"""Receding-horizon policy over the convex safe set.

Each step solves one horizon problem whose variables are the grid of
future outputs plus barycentric weights over the stored safe-set
points; the applied input is reconstructed from the leading outputs of
the solution.  Hybrid (PWA) instances are solved exactly by enumerating
the 2^N mode sequences, one convex QP each; smooth instances go through
the SQP layer.  Infeasibility is reported as an explicit
outside-the-region-of-attraction result, never an exception.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .qp import QuadraticProgram, solve_qp
from .safe_set import OutputSafeSet
from .sqp import ConstraintBlock, NonlinearProgram, solve_nlp
from .transcribe import StepPieces


class SolverFailure(RuntimeError):
    """The horizon problem is feasible but no solution was obtained."""


@dataclass
class LmpcConfig:
    warm_residual_tol: float = 1e-8
    tie_break_tol: float = 1e-12
    nlp_max_iter: int = 100
    nlp_kkt_tol: float = 1e-6
    nlp_feas_tol: float = 1e-10
    nlp_stall_tol: Optional[float] = 1e-10
    max_enumeration_horizon: int = 12
    cold_start_cuts: int = 30


@dataclass
class WarmStart:
    y_flat: np.ndarray
    lam: np.ndarray
    mode_seq: Optional[tuple] = None
    objective: float = np.nan


@dataclass
class StepResult:
    status: str  # optimal | fallback | outside_roa
    u0: Optional[np.ndarray]
    objective: float
    y_grid: Optional[np.ndarray] = None  # (m, n_cols) predicted outputs
    lam: Optional[np.ndarray] = None
    mode_seq: Optional[tuple] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status != "outside_roa"


class _JointProblem:
    """Horizon pieces and safe-set block assembled over (outputs, weights)."""

    def __init__(self, pieces: StepPieces, safe_set: OutputSafeSet):
        grid = pieces.grid
        P, costs = safe_set.matrix()
        if P.shape[0] != grid.m * grid.depth:
            raise ValueError("safe-set width does not match the problem grid")
        self.pieces = pieces
        self.grid = grid
        self.n_y = grid.n_vars
        self.n_pts = P.shape[1]
        self.n = self.n_y + self.n_pts
        term = grid.terminal_indices()

        rows = np.zeros((term.size + 1, self.n))
        rhs = np.zeros(term.size + 1)
        for r, i in enumerate(term):
            rows[r, i] = 1.0
            rows[r, self.n_y :] = -P[r]
        rows[-1, self.n_y :] = 1.0
        rhs[-1] = 1.0
        pad = np.zeros((pieces.A_eq.shape[0], self.n_pts))
        self.A_eq = np.vstack([np.hstack([pieces.A_eq, pad]), rows])
        self.b_eq = np.concatenate([pieces.b_eq, rhs])
        self.A_in = np.hstack([pieces.A_in, np.zeros((pieces.A_in.shape[0], self.n_pts))])
        self.b_in = pieces.b_in
        self.lb = np.concatenate([np.full(self.n_y, -np.inf), np.zeros(self.n_pts)])
        self.ub = np.concatenate([np.full(self.n_y, np.inf), np.ones(self.n_pts)])
        self.H = np.zeros((self.n, self.n))
        self.H[: self.n_y, : self.n_y] = pieces.H
        self.g = np.concatenate([pieces.g, costs])
        self.const = pieces.const

    def split(self, v):
        return v[: self.n_y], v[self.n_y :]

    def objective_value(self, v) -> float:
        val = 0.5 * v @ self.H @ v + self.g @ v + self.const
        if self.pieces.smooth_objective is not None:
            val += self.pieces.smooth_objective.value(v[: self.n_y])
        return float(val)

    def violation(self, v) -> float:
        r = float(np.max(np.abs(self.A_eq @ v - self.b_eq), initial=0.0))
        if self.A_in.shape[0]:
            r = max(r, float(np.max(self.A_in @ v - self.b_in, initial=0.0)))
        r = max(r, float(np.max(self.lb - v, initial=0.0)))
        r = max(r, float(np.max(v - self.ub, initial=0.0)))
        if self.pieces.smooth_ineq is not None:
            gv = self.pieces.smooth_ineq.value(v[: self.n_y])
            r = max(r, float(np.max(gv, initial=0.0)))
        return r

    def as_qp(self) -> QuadraticProgram:
        return QuadraticProgram(H=self.H, g=self.g, A_eq=self.A_eq, b_eq=self.b_eq,
                                A_in=self.A_in, b_in=self.b_in,
                                lb=self.lb, ub=self.ub, const=self.const)

    def as_nlp(self) -> NonlinearProgram:
        smooth = self.pieces.smooth_objective
        n_y = self.n_y

        def objective(v):
            val = 0.5 * v @ self.H @ v + self.g @ v + self.const
            if smooth is not None:
                val += smooth.value(v[:n_y])
            return float(val)

        def gradient(v):
            grad = self.H @ v + self.g
            if smooth is not None:
                grad[:n_y] += smooth.gradient(v[:n_y])
            return grad

        def hessian(v):
            Hm = self.H.copy()
            if smooth is not None:
                Hm[:n_y, :n_y] += smooth.curvature(v[:n_y])
            return Hm

        ineq = None
        if self.pieces.smooth_ineq is not None:
            si = self.pieces.smooth_ineq

            def fn(v):
                return si.value(v[:n_y])

            def jac(v):
                J = np.zeros((si.value(v[:n_y]).size, self.n))
                J[:, :n_y] = si.jacobian(v[:n_y])
                return J

            ineq = ConstraintBlock(fn=fn, jac=jac)
        return NonlinearProgram(
            n=self.n,
            objective=objective,
            gradient=gradient,
            hessian=hessian,
            ineq_nonlin=ineq,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            A_in=self.A_in,
            b_in=self.b_in,
            lb=self.lb,
            ub=self.ub,
        )

    def find_feasible(self, config: LmpcConfig, hint: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        """Feasibility-only solve; cutting planes handle the smooth convex
        inequalities (their linearizations never exclude feasible points)."""
        A_in, b_in = self.A_in, self.b_in
        si = self.pieces.smooth_ineq
        for _ in range(config.cold_start_cuts):
            sol = solve_qp(
                QuadraticProgram(H=np.zeros((self.n, self.n)), g=np.zeros(self.n),
                                 A_eq=self.A_eq, b_eq=self.b_eq, A_in=A_in, b_in=b_in,
                                 lb=self.lb, ub=self.ub),
                warm_start=hint,
                check_psd=False,
            )
            if sol.status != "optimal":
                return None
            v = sol.x
            hint = v
            if si is None:
                return v
            gv = si.value(v[: self.n_y])
            worst = int(np.argmax(gv))
            if gv[worst] <= 1e-10:
                return v
            J = si.jacobian(v[: self.n_y])[worst]
            row = np.zeros(self.n)
            row[: self.n_y] = J
            y0 = v[: self.n_y]
            A_in = np.vstack([A_in, row[None, :]])
            b_in = np.concatenate([b_in, [J @ y0 - gv[worst]]])
        return None


def _extract(example, joint: _JointProblem, v, status, mode_seq, diag, x_ctrl) -> StepResult:
    y_flat, lam = joint.split(v)
    grid = joint.grid
    y_grid = y_flat.reshape(grid.n_cols, grid.m).T
    lifted = y_grid[:, : grid.depth + 1]
    u0 = example.extract_input(lifted, x_ctrl)
    diag = dict(diag)
    diag["lam_support"] = int(np.sum(lam > 1e-9))
    return StepResult(
        status=status,
        u0=np.asarray(u0, float),
        objective=joint.objective_value(v),
        y_grid=y_grid,
        lam=lam,
        mode_seq=mode_seq,
        diagnostics=diag,
    )


def _certify_warm(joint: _JointProblem, warm: WarmStart, tol: float) -> Optional[np.ndarray]:
    if warm is None or warm.lam.size != joint.n_pts:
        return None
    v = np.concatenate([warm.y_flat, warm.lam])
    if joint.violation(v) <= tol:
        return v
    return None


def enumerate_pwa_modes(
    example, x_ctrl, safe_set: OutputSafeSet, config: LmpcConfig,
    warm: Optional[WarmStart] = None,
) -> StepResult:
    """Exact hybrid solve: one QP per mode sequence, minimum objective wins,
    ties go to the lexicographically smallest sequence."""
    N = example.N
    if N > config.max_enumeration_horizon:
        raise ValueError(f"mode enumeration with N={N} exceeds the guard")
    attempted = 0
    best = None
    objectives = {}
    for mode_seq in itertools.product((0, 1), repeat=N):
        attempted += 1
        joint = _JointProblem(example.step_pieces(x_ctrl, mode_seq), safe_set)
        warm_v = None
        if warm is not None and warm.mode_seq == mode_seq:
            warm_v = _certify_warm(joint, warm, config.warm_residual_tol)
        sol = solve_qp(joint.as_qp(), warm_start=warm_v, check_psd=False)
        if sol.status != "optimal":
            continue
        objectives[mode_seq] = sol.objective
        if best is None or sol.objective < best[1].objective - config.tie_break_tol:
            best = (mode_seq, sol, joint)
    assert attempted == 2 ** N
    if best is None:
        return StepResult(status="outside_roa", u0=None, objective=np.inf,
                          diagnostics={"attempted": attempted})
    mode_seq, sol, joint = best
    assert sol.objective <= min(objectives.values()) + config.tie_break_tol
    diag = {
        "attempted": attempted,
        "feasible_sequences": len(objectives),
        "qp_iterations": sol.iterations,
        "kkt": sol.kkt_residuals,
        "enumeration_min": min(objectives.values()),
    }
    return _extract(example, joint, sol.x, "optimal", mode_seq, diag, x_ctrl)


def _solve_smooth(
    example, x_ctrl, safe_set: OutputSafeSet, config: LmpcConfig,
    warm: Optional[WarmStart] = None,
) -> StepResult:
    joint = _JointProblem(example.step_pieces(x_ctrl), safe_set)
    v0 = _certify_warm(joint, warm, config.warm_residual_tol) if warm is not None else None
    warm_used = v0 is not None
    if v0 is None:
        hint = np.concatenate([warm.y_flat, warm.lam]) \
            if (warm is not None and warm.lam.size == joint.n_pts) else None
        v0 = joint.find_feasible(config, hint=hint)
        if v0 is None:
            return StepResult(status="outside_roa", u0=None, objective=np.inf)
    nlp = joint.as_nlp()
    sol = solve_nlp(
        nlp, v0,
        max_iter=config.nlp_max_iter,
        kkt_tol=config.nlp_kkt_tol,
        feas_tol=config.nlp_feas_tol,
        stall_tol=config.nlp_stall_tol,
    )
    # the solution is usable when feasible and at least as good as the
    # certified shifted candidate; stationarity is not required by the
    # closed-loop guarantees
    feasible = sol.constraint_violation <= 10 * config.nlp_feas_tol
    improved = (not warm_used) or sol.objective <= joint.objective_value(v0) + 1e-8
    if not (feasible and improved):
        if warm_used:
            diag = {"solver_status": sol.status, "kkt": sol.kkt_residual,
                    "note": "shifted candidate kept"}
            return _extract(example, joint, v0, "fallback", None, diag, x_ctrl)
        raise SolverFailure(
            f"smooth horizon solve failed (status {sol.status}, "
            f"violation {sol.constraint_violation:.2e}) without a warm start"
        )
    diag = {
        "solver_status": sol.status,
        "sqp_iterations": sol.iterations,
        "kkt": sol.kkt_residual,
        "violation": sol.constraint_violation,
        "warm": warm_used,
    }
    return _extract(example, joint, sol.x, "optimal", None, diag, x_ctrl)


def solve_step(
    example, x_ctrl, safe_set: OutputSafeSet, config: Optional[LmpcConfig] = None,
    warm: Optional[WarmStart] = None,
) -> StepResult:
    """Solve the horizon problem at the current (controller) state and
    return the first input; infeasibility yields an outside-roa result."""
    if len(safe_set) == 0:
        raise ValueError("safe set is empty; store an initial trajectory first")
    x_ctrl = np.asarray(x_ctrl, dtype=float)
    if not np.all(np.isfinite(x_ctrl)):
        raise ValueError("controller state must be finite")
    config = config or LmpcConfig()
    if example.hybrid:
        return enumerate_pwa_modes(example, x_ctrl, safe_set, config, warm)
    return _solve_smooth(example, x_ctrl, safe_set, config, warm)


def warm_start_from_previous(example, prev: StepResult, safe_set: OutputSafeSet) -> Optional[WarmStart]:
    """Shift the previous solution one step and advance the barycentric
    weights onto stored successors (the recursive-feasibility candidate)."""
    if prev is None or not prev.feasible or prev.lam is None:
        return None
    lam = prev.lam
    if lam.size != len(safe_set):
        grown = np.zeros(len(safe_set))
        grown[: lam.size] = lam
        lam = grown
    shifted = safe_set.shifted_weights(lam)
    if shifted is None:
        return None
    new_last = np.zeros(example.control_system.m)
    for i, w in enumerate(shifted):
        if w > 0.0:
            new_last += w * safe_set.points[i].window[:, -1]
    y_grid = np.hstack([prev.y_grid[:, 1:], new_last.reshape(-1, 1)])
    mode_seq = None
    if example.hybrid:
        grid_N = prev.y_grid.shape[1] - example.control_system.lift_depth
        mode_seq = tuple(prev.mode_seq[1:]) + (example.mode_of_output(prev.y_grid[0, grid_N]),)
    return WarmStart(y_flat=y_grid.T.reshape(-1), lam=shifted, mode_seq=mode_seq)


def initial_warm_start(example, safe_set: OutputSafeSet) -> Optional[WarmStart]:
    """Replay candidate for the first step of an iteration: the prefix of the
    cheapest stored trajectory with all weight on its window at time N.

    All stored trajectories start from the same augmented state, so this
    candidate is feasible and its objective equals the stored cost, which
    pins the new iteration's value at or below the previous one.
    """
    if not safe_set.trajectories:
        return None
    system = example.control_system
    grid_cols = example.N + system.lift_depth
    best = None
    for traj in safe_set.trajectories:
        cost = safe_set.points[traj[0]].cost_to_go
        if len(traj) > example.N and (best is None or cost < best[0]):
            best = (cost, traj)
    if best is None:
        return None
    traj = best[1]
    cols = [safe_set.points[i].window[:, 0] for i in traj]
    last = safe_set.points[traj[-1]]
    cols.extend(last.window[:, j] for j in range(1, system.lift_depth))
    cols.append(last.successor_output)
    if len(cols) < grid_cols:
        return None
    y_grid = np.column_stack(cols[:grid_cols])
    lam = np.zeros(len(safe_set))
    lam[traj[example.N]] = 1.0
    mode_seq = None
    if example.hybrid:
        mode_seq = tuple(example.mode_of_output(y_grid[0, k]) for k in range(example.N))
    return WarmStart(y_flat=y_grid.T.reshape(-1), lam=lam, mode_seq=mode_seq)


def in_region_of_attraction(
    example, x_ctrl, safe_set: OutputSafeSet, config: Optional[LmpcConfig] = None
) -> bool:
    """Feasibility of the horizon problem from this state."""
    config = config or LmpcConfig()
    if len(safe_set) == 0:
        return False
    x_ctrl = np.asarray(x_ctrl, dtype=float)
    if example.hybrid:
        for mode_seq in itertools.product((0, 1), repeat=example.N):
            joint = _JointProblem(example.step_pieces(x_ctrl, mode_seq), safe_set)
            if joint.find_feasible(config) is not None:
                return True
        return False
    joint = _JointProblem(example.step_pieces(x_ctrl), safe_set)
    return joint.find_feasible(config) is not None
