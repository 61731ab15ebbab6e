"""System abstraction for control in lifted output space.

A system is described by its dynamics ``x+ = f(x, u)`` together with an
output ``y = h(x)`` from which state and input can be reconstructed:
the state from a window of `lift_depth` consecutive outputs, the input
from `lift_depth + 1` consecutive outputs.  Windows are plain numpy
arrays of shape ``(m, width)`` whose columns are consecutive outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class MapDomainError(ValueError):
    """Raised when a reconstruction map is evaluated outside its domain."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with optional unconstrained components (+/-inf)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("bound shapes differ")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_intervals(cls, intervals) -> "Box":
        """Build from (lo, hi) pairs; None for a pair or an endpoint means
        unconstrained."""
        lo, hi = [], []
        for iv in intervals:
            if iv is None:
                lo.append(-np.inf)
                hi.append(np.inf)
            else:
                lo.append(-np.inf if iv[0] is None else iv[0])
                hi.append(np.inf if iv[1] is None else iv[1])
        return cls(np.array(lo, dtype=float), np.array(hi, dtype=float))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def constrained(self) -> np.ndarray:
        """Mask of components with at least one finite bound."""
        return np.isfinite(self.lower) | np.isfinite(self.upper)

    def contains(self, v, slack: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(
            np.all(v >= self.lower - slack) and np.all(v <= self.upper + slack)
        )

    def violation(self, v) -> float:
        """Largest bound violation, 0 if inside."""
        v = np.asarray(v, dtype=float)
        under = np.where(np.isfinite(self.lower), self.lower - v, -np.inf)
        over = np.where(np.isfinite(self.upper), v - self.upper, -np.inf)
        return float(max(0.0, np.max(under), np.max(over)))

    def clip(self, v) -> np.ndarray:
        return np.clip(np.asarray(v, dtype=float), self.lower, self.upper)

    def scaling(self):
        """Diagonal D and offset d with the box written as ||D v - d||_inf <= 1.

        Unconstrained components get a zero row so they never bind.
        Semi-infinite intervals are not representable this way and raise.
        """
        lo, hi = self.lower, self.upper
        D = np.zeros(self.dim)
        d = np.zeros(self.dim)
        for i in range(self.dim):
            if not np.isfinite(lo[i]) and not np.isfinite(hi[i]):
                continue
            if not (np.isfinite(lo[i]) and np.isfinite(hi[i])):
                raise ValueError("semi-infinite interval has no scaling form")
            width = hi[i] - lo[i]
            if width == 0.0:
                raise ValueError("degenerate interval")
            D[i] = 2.0 / width
            d[i] = (hi[i] + lo[i]) / width
        return np.diag(D), d


@dataclass(frozen=True)
class LiftedSystem:
    """Dynamics, output, and output-window reconstruction maps.

    `state_map` takes an (m, lift_depth) window; `input_map` takes an
    (m, lift_depth + 1) matrix of consecutive outputs.  `x_eq` is the
    equilibrium held by the constant input `u_eq` (zero for systems with
    an unforced equilibrium).
    """

    name: str
    n: int
    m: int
    lift_depth: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    output: Callable[[np.ndarray], np.ndarray]
    state_map: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]
    state_box: Box
    input_box: Box
    x_eq: np.ndarray
    u_eq: np.ndarray = None
    state_halfspaces: Optional[tuple] = None  # (A, b) extra rows A x <= b

    def __post_init__(self):
        object.__setattr__(self, "x_eq", np.asarray(self.x_eq, dtype=float))
        u_eq = np.zeros(self.m) if self.u_eq is None else np.asarray(self.u_eq, dtype=float)
        object.__setattr__(self, "u_eq", u_eq)
        if self.state_halfspaces is not None:
            A, b = self.state_halfspaces
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape != (b.size, self.n):
                raise ValueError("state halfspace shapes inconsistent")
            object.__setattr__(self, "state_halfspaces", (A, b))

    def state_feasible(self, x, slack: float = 0.0) -> bool:
        if not self.state_box.contains(x, slack):
            return False
        if self.state_halfspaces is not None:
            A, b = self.state_halfspaces
            if np.any(A @ np.asarray(x, float) > b + slack):
                return False
        return True

    @property
    def y_eq(self) -> np.ndarray:
        return np.asarray(self.output(self.x_eq), dtype=float)

    def eq_window(self, width: Optional[int] = None) -> np.ndarray:
        """Constant window of equilibrium outputs (default width lift_depth)."""
        width = self.lift_depth if width is None else width
        return np.tile(self.y_eq.reshape(self.m, 1), (1, width))

    def step(self, x, u) -> np.ndarray:
        return np.asarray(self.dynamics(np.asarray(x, float), np.asarray(u, float)), dtype=float)

    def rollout(self, x0, inputs) -> np.ndarray:
        """Simulate; returns states of shape (len(inputs)+1, n)."""
        states = [np.asarray(x0, dtype=float)]
        for u in inputs:
            states.append(self.step(states[-1], u))
        return np.array(states)


def forward_shift(window: np.ndarray, y_next) -> np.ndarray:
    """Drop the first column, append y_next as the last."""
    window = np.asarray(window, dtype=float)
    y_next = np.asarray(y_next, dtype=float).reshape(-1)
    if y_next.size != window.shape[0]:
        raise ValueError("output dimension does not match window")
    return np.hstack([window[:, 1:], y_next.reshape(-1, 1)])


def backward_shift(window: np.ndarray, y_prev) -> np.ndarray:
    """Prepend y_prev, drop the last column.  Inverse of forward_shift."""
    window = np.asarray(window, dtype=float)
    y_prev = np.asarray(y_prev, dtype=float).reshape(-1)
    if y_prev.size != window.shape[0]:
        raise ValueError("output dimension does not match window")
    return np.hstack([y_prev.reshape(-1, 1), window[:, :-1]])


def window_from_rollout(sys: LiftedSystem, x0, inputs) -> np.ndarray:
    """Window of lift_depth outputs generated by x0 and lift_depth-1 inputs."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if len(inputs) != sys.lift_depth - 1:
        raise ValueError(f"expected {sys.lift_depth - 1} inputs, got {len(inputs)}")
    states = sys.rollout(x0, inputs)
    return np.column_stack([sys.output(x) for x in states])


def lifted_from_rollout(sys: LiftedSystem, x0, inputs) -> np.ndarray:
    """Matrix of lift_depth+1 outputs generated by x0 and lift_depth inputs."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if len(inputs) != sys.lift_depth:
        raise ValueError(f"expected {sys.lift_depth} inputs, got {len(inputs)}")
    states = sys.rollout(x0, inputs)
    return np.column_stack([sys.output(x) for x in states])


def reconstruct_state(sys: LiftedSystem, window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=float)
    if window.shape != (sys.m, sys.lift_depth):
        raise ValueError(f"window shape {window.shape} != {(sys.m, sys.lift_depth)}")
    return np.asarray(sys.state_map(window), dtype=float)


def reconstruct_input(sys: LiftedSystem, lifted: np.ndarray) -> np.ndarray:
    lifted = np.asarray(lifted, dtype=float)
    if lifted.shape != (sys.m, sys.lift_depth + 1):
        raise ValueError(f"lifted shape {lifted.shape} != {(sys.m, sys.lift_depth + 1)}")
    return np.asarray(sys.input_map(lifted), dtype=float)


def box_membership(sys: LiftedSystem, x=None, u=None, slack: float = 0.0) -> bool:
    """Componentwise constraint check for a state and/or input."""
    ok = True
    if x is not None:
        ok = ok and sys.state_feasible(x, slack)
    if u is not None:
        ok = ok and sys.input_box.contains(u, slack)
    return ok


def augment(sys: LiftedSystem, alpha: float = 0.0, beta: float = 1.0) -> LiftedSystem:
    """Extend the state with the input through a first-order compensator.

    The augmented state is (x, u), the new input z drives u+ = alpha*u +
    beta*z, and the lift depth grows by one.  With alpha=0, beta=1 the
    compensator passes z through as the next input.
    """
    if beta == 0.0:
        raise ValueError("beta must be nonzero")
    n, m, R = sys.n, sys.m, sys.lift_depth

    def dyn(xz, z):
        x, u = xz[:n], xz[n:]
        return np.concatenate([sys.step(x, u), alpha * u + beta * np.asarray(z, float)])

    def out(xz):
        return np.asarray(sys.output(xz[:n]), dtype=float)

    def state_map(window):
        # window has R+1 columns: state from the first R, input from all.
        x = sys.state_map(window[:, :R])
        u = sys.input_map(window)
        return np.concatenate([np.asarray(x, float).reshape(-1), np.asarray(u, float).reshape(-1)])

    def input_map(lifted):
        u_next = sys.input_map(lifted[:, 1:])
        u_cur = sys.input_map(lifted[:, :-1])
        return (np.asarray(u_next, float) - alpha * np.asarray(u_cur, float)) / beta

    state_box = Box(
        np.concatenate([sys.state_box.lower, sys.input_box.lower]),
        np.concatenate([sys.state_box.upper, sys.input_box.upper]),
    )
    input_box = Box(np.full(m, -np.inf), np.full(m, np.inf))
    halfspaces = None
    if sys.state_halfspaces is not None:
        A, b = sys.state_halfspaces
        halfspaces = (np.hstack([A, np.zeros((A.shape[0], m))]), b)
    z_eq = (1.0 - alpha) / beta * sys.u_eq
    return LiftedSystem(
        name=sys.name + "+input",
        n=n + m,
        m=m,
        lift_depth=R + 1,
        dynamics=dyn,
        output=out,
        state_map=state_map,
        input_map=input_map,
        state_box=state_box,
        input_box=input_box,
        x_eq=np.concatenate([sys.x_eq, sys.u_eq]),
        u_eq=z_eq,
        state_halfspaces=halfspaces,
    )


@dataclass
class LineCheckResult:
    component: int
    passed: bool
    worst_violation: float
    witness: Optional[tuple] = None  # (endpoint_a, endpoint_b, values)


@dataclass
class MonotoneReport:
    mode: str
    n_components: int
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed_components(self):
        return [r.component for r in self.results if not r.passed]


def check_monotone_on_lines(
    fn: Callable[[np.ndarray], np.ndarray],
    domain_lower: np.ndarray,
    domain_upper: np.ndarray,
    n_lines: int = 500,
    n_points: int = 50,
    mode: str = "monotone",
    tol: float = 1e-10,
    seed: int = 0,
    accept: Optional[Callable[[np.ndarray], bool]] = None,
) -> MonotoneReport:
    """Sampled check that each component of fn is monotone on line segments.

    Segments are drawn uniformly from the box [domain_lower, domain_upper];
    `accept` can reject endpoints (e.g. to stay clear of map singularities).
    mode="monotone" requires every restriction to be non-strictly monotone;
    mode="upper" only requires the maximum over the segment to occur at an
    endpoint (upper bound preservation, the one-sided variant).
    """
    if mode not in ("monotone", "upper"):
        raise ValueError(f"unknown mode {mode!r}")
    lo = np.asarray(domain_lower, dtype=float)
    hi = np.asarray(domain_upper, dtype=float)
    rng = np.random.default_rng(seed)
    ts = np.linspace(0.0, 1.0, n_points)

    def draw_point():
        for _ in range(1000):
            p = lo + (hi - lo) * rng.random(lo.shape)
            if accept is None or accept(p):
                return p
        raise RuntimeError("could not sample an acceptable domain point")

    worst = None
    witnesses = None
    for _ in range(n_lines):
        a, b = draw_point(), draw_point()
        values = np.array([np.atleast_1d(np.asarray(fn(a + t * (b - a)), dtype=float)) for t in ts])
        if worst is None:
            worst = np.zeros(values.shape[1])
            witnesses = [None] * values.shape[1]
        diffs = np.diff(values, axis=0)
        if mode == "monotone":
            inc = np.sum(np.maximum(diffs, 0.0), axis=0)
            dec = np.sum(np.maximum(-diffs, 0.0), axis=0)
            viol = np.minimum(inc, dec)
        else:
            peak = values.max(axis=0)
            ends = np.maximum(values[0], values[-1])
            viol = peak - ends
        for i in range(values.shape[1]):
            if viol[i] > worst[i]:
                worst[i] = viol[i]
                witnesses[i] = (a.copy(), b.copy(), values[:, i].copy())

    report = MonotoneReport(mode=mode, n_components=0 if worst is None else worst.size)
    for i in range(report.n_components):
        ok = worst[i] <= tol
        report.results.append(
            LineCheckResult(
                component=i,
                passed=ok,
                worst_violation=float(worst[i]),
                witness=None if ok else witnesses[i],
            )
        )
    return report
