"""Storage of output windows from successful iterations.

The safe set keeps, per stored trajectory, the sliding windows of
consecutive outputs together with their accumulated cost to go.  Its
convex hull is never materialized: hull membership and the barycentric
terminal cost are linear programs over the stored points.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .qp import QuadraticProgram, solve_qp
from .systems import LiftedSystem, MapDomainError, forward_shift

INFEASIBLE_COST = float("inf")


class TrajectoryRejected(ValueError):
    """Trajectory not storable: infeasible or not converged."""


@dataclass
class SafeSetPoint:
    window: np.ndarray            # (m, width)
    successor_output: np.ndarray  # output following the window
    cost_to_go: float
    iteration: int
    time: int
    successor: Optional[int] = None  # global index of the next stored point


@dataclass
class TerminalCost:
    value: float
    weights: Optional[np.ndarray]

    @property
    def feasible(self) -> bool:
        return np.isfinite(self.value)


class OutputSafeSet:
    """Windows with costs to go, grouped by contributing iteration."""

    def __init__(self, m: int, width: int):
        self.m = int(m)
        self.width = int(width)
        self.points: list[SafeSetPoint] = []
        self.trajectories: list[list[int]] = []
        self.iterations: list[int] = []
        self._matrix_cache = None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.m * self.width

    def matrix(self):
        """(dim, n_points) matrix of flattened windows and the cost vector."""
        if self._matrix_cache is None or self._matrix_cache[0].shape[1] != len(self.points):
            P = np.column_stack([p.window.T.reshape(-1) for p in self.points]) \
                if self.points else np.zeros((self.dim, 0))
            c = np.array([p.cost_to_go for p in self.points])
            self._matrix_cache = (P, c)
        return self._matrix_cache

    def flat(self, window) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        if window.shape != (self.m, self.width):
            raise ValueError(f"window shape {window.shape} != {(self.m, self.width)}")
        return window.T.reshape(-1)

    def add_trajectory(
        self,
        outputs,
        stage_cost: Callable[[np.ndarray], float],
        *,
        system: LiftedSystem,
        deviation: Callable[[np.ndarray], float],
        equilibrium_tail: Callable[[np.ndarray], tuple],
        tol_conv: float,
        consec: int = 2,
        iteration: Optional[int] = None,
        feas_slack: float = 1e-8,
        window_check: Optional[Callable] = None,
        dedup: bool = False,
        dedup_radius: float = 1e-9,
    ) -> int:
        """Store a converged feasible trajectory of outputs.

        Finds the first time whose `consec` consecutive windows sit within
        tol_conv of the equilibrium, truncates there, appends the example's
        equilibrium tail with zero cost to go, accumulates costs backward,
        and checks reconstructed state/input feasibility for every point.
        Raises TrajectoryRejected for non-converged or infeasible data.
        """
        outputs = np.asarray(outputs, dtype=float)
        if outputs.ndim != 2 or outputs.shape[1] != self.m:
            raise ValueError("outputs must be (T, m)")
        n_windows = outputs.shape[0] - self.width + 1
        if n_windows < consec:
            raise TrajectoryRejected("trajectory shorter than one convergence window")
        windows = [outputs[t : t + self.width].T for t in range(n_windows)]
        devs = np.array([deviation(w) for w in windows])
        T_conv = None
        for t in range(n_windows - consec + 1):
            if np.all(devs[t : t + consec] <= tol_conv):
                T_conv = t
                break
        if T_conv is None:
            raise TrajectoryRejected(
                f"trajectory did not converge (min deviation {devs.min():.3e} > {tol_conv:.1e})"
            )

        tail_windows, tail_succ, self_loop = equilibrium_tail(windows[T_conv])
        kept = windows[: T_conv + 1]
        succ_outputs = [outputs[t + self.width] for t in range(T_conv)]
        # the truncated point hands over to the first tail window
        succ_outputs.append(tail_windows[0][:, -1] if tail_windows else outputs[T_conv + self.width - 1])

        costs = [float(stage_cost(w)) for w in kept]
        n_tail = len(tail_windows)
        ctg = [0.0] * n_tail
        acc = 0.0
        ctg_main = []
        for c in reversed(costs):
            acc += c
            ctg_main.append(acc)
        ctg_main.reverse()

        all_windows = kept + list(tail_windows)
        all_succ = succ_outputs + list(tail_succ)
        all_ctg = ctg_main + ctg
        iteration = len(self.iterations) if iteration is None else iteration

        base = len(self.points)
        indices: list[int] = []
        P, _ = self.matrix() if dedup else (None, None)
        for t, (w, so, cv) in enumerate(zip(all_windows, all_succ, all_ctg)):
            if window_check is not None:
                if not window_check(w, so, feas_slack):
                    raise TrajectoryRejected(f"stored window at t={t} fails the feasibility check")
            else:
                self._check_point(w, so, system, deviation, tol_conv, feas_slack)
            if dedup and len(self.points):
                flat = self.flat(w)
                P_now, c_now = self.matrix()
                d = np.max(np.abs(P_now - flat[:, None]), axis=0)
                j = int(np.argmin(d))
                if d[j] <= dedup_radius and c_now[j] <= cv:
                    indices.append(j)
                    continue
            self.points.append(
                SafeSetPoint(window=np.array(w, dtype=float), successor_output=np.array(so, dtype=float),
                             cost_to_go=float(cv), iteration=iteration, time=t)
            )
            indices.append(len(self.points) - 1)
            self._matrix_cache = None
        for k in range(len(indices) - 1):
            self.points[indices[k]].successor = indices[k + 1]
        last = self.points[indices[-1]]
        if self_loop:
            last.successor = indices[-1]
        self.trajectories.append(indices)
        self.iterations.append(iteration)
        self._matrix_cache = None
        return iteration

    def _check_point(self, window, succ_output, system, deviation, tol_conv, slack):
        lifted = np.hstack([window, np.asarray(succ_output, float).reshape(-1, 1)])
        try:
            x = system.state_map(window)
            u = system.input_map(lifted)
        except MapDomainError:
            if deviation(window) <= 10.0 * tol_conv:
                return  # equilibrium tail point, feasible by construction
            raise TrajectoryRejected(
                "reconstruction undefined away from the equilibrium"
            ) from None
        if not system.state_feasible(x, slack):
            raise TrajectoryRejected(f"stored point has infeasible state {x}")
        if not system.input_box.contains(u, slack):
            raise TrajectoryRejected(f"stored point has infeasible input {u}")

    # ------------------------------------------------------------------
    # queries

    def terminal_cost(self, query, warm_start: Optional[np.ndarray] = None,
                      subset=None) -> TerminalCost:
        """Barycentric cost: cheapest convex combination of stored points
        matching the query window; +inf when the query is outside the hull.

        `subset` restricts the combination to the given point indices;
        returned weights are always full length.
        """
        if not self.points:
            return TerminalCost(value=INFEASIBLE_COST, weights=None)
        P, c = self.matrix()
        n = len(self.points)
        if subset is not None:
            subset = np.asarray(subset, dtype=int)
            P = P[:, subset]
            c = c[subset]
            n = subset.size
            warm_start = None
        A_eq = np.vstack([P, np.ones((1, n))])
        b_eq = np.concatenate([self.flat(query), [1.0]])
        sol = solve_qp(
            QuadraticProgram(H=np.zeros((n, n)), g=c, A_eq=A_eq, b_eq=b_eq,
                             lb=np.zeros(n), ub=np.ones(n)),
            warm_start=warm_start,
            check_psd=False,
        )
        if sol.status != "optimal":
            return TerminalCost(value=INFEASIBLE_COST, weights=None)
        lam = sol.x.copy()
        lam[lam < 1e-14] = 0.0  # numerical dust from the least-squares solves
        value = float(c @ lam)
        # an exactly matching stored point beats a tolerance-feasible optimum
        exact = np.flatnonzero(np.max(np.abs(P - b_eq[:-1, None]), axis=0) <= 1e-15)
        if exact.size:
            j = exact[np.argmin(c[exact])]
            if c[j] < value:
                lam = np.zeros(n)
                lam[j] = 1.0
                value = float(c[j])
        if subset is not None:
            full = np.zeros(len(self.points))
            full[subset] = lam
            lam = full
        return TerminalCost(value=value, weights=lam)

    def membership_certificate(self, query) -> Optional[np.ndarray]:
        """Any barycentric representation of the query, or None."""
        if not self.points:
            return None
        P, _ = self.matrix()
        n = len(self.points)
        A_eq = np.vstack([P, np.ones((1, n))])
        b_eq = np.concatenate([self.flat(query), [1.0]])
        sol = solve_qp(
            QuadraticProgram(H=np.zeros((n, n)), g=np.zeros(n), A_eq=A_eq, b_eq=b_eq,
                             lb=np.zeros(n), ub=np.ones(n)),
            check_psd=False,
        )
        return sol.x if sol.status == "optimal" else None

    def points_with_successors(self) -> list[int]:
        return [i for i, p in enumerate(self.points) if p.successor is not None]

    def exact_shift_points(self, tol: float = 1e-12) -> list[int]:
        """Points whose stored successor window is the forward shift of their
        own window (everywhere except across the truncation snap)."""
        out = []
        for i, p in enumerate(self.points):
            if p.successor is None:
                continue
            shifted = forward_shift(p.window, p.successor_output)
            if float(np.max(np.abs(shifted - self.points[p.successor].window))) <= tol:
                out.append(i)
        return out

    def successor_window(self, index: int) -> np.ndarray:
        p = self.points[index]
        if p.successor is None:
            raise ValueError("point has no stored successor")
        return self.points[p.successor].window

    def shifted_weights(self, weights, tol: float = 1e-12) -> Optional[np.ndarray]:
        """Move every point's weight onto its stored successor; None if some
        carrying point has no successor."""
        out = np.zeros(len(self.points))
        for i, w in enumerate(np.asarray(weights, float)):
            if w <= tol:
                continue
            succ = self.points[i].successor
            if succ is None:
                return None
            out[succ] += w
        return out

    # ------------------------------------------------------------------
    # persistence

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "width": self.width,
            "iterations": self.iterations,
            "trajectories": [
                [
                    {
                        "window": self.points[i].window.tolist(),
                        "successor_output": self.points[i].successor_output.tolist(),
                        "cost_to_go": self.points[i].cost_to_go,
                        "iteration": self.points[i].iteration,
                        "time": self.points[i].time,
                        "successor": self.points[i].successor,
                    }
                    for i in traj
                ]
                for traj in self.trajectories
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "OutputSafeSet":
        ss = cls(m=doc["m"], width=doc["width"])
        for traj in doc["trajectories"]:
            indices = []
            for rec in traj:
                ss.points.append(
                    SafeSetPoint(
                        window=np.array(rec["window"], dtype=float),
                        successor_output=np.array(rec["successor_output"], dtype=float),
                        cost_to_go=float(rec["cost_to_go"]),
                        iteration=int(rec["iteration"]),
                        time=int(rec["time"]),
                        successor=rec["successor"],
                    )
                )
                indices.append(len(ss.points) - 1)
            ss.trajectories.append(indices)
        ss.iterations = list(doc["iterations"])
        return ss

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "OutputSafeSet":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def export_csv(self, path) -> None:
        """Rows of (iteration, time, flattened window, cost_to_go)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["iteration", "time"]
            header += [f"y{j}_{c}" for j in range(self.width) for c in range(self.m)]
            header.append("cost_to_go")
            writer.writerow(header)
            for p in self.points:
                row = [p.iteration, p.time]
                row += [repr(v) for v in p.window.T.reshape(-1)]
                row.append(repr(p.cost_to_go))
                writer.writerow(row)
