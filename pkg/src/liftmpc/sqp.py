"""Sequential quadratic programming with an l1 merit line search.

Nonlinear programs carry their linear constraints explicitly so those
stay exact in every subproblem; nonlinear blocks are linearized around
the current iterate.  The Hessian model is a user callback (when the
problem has useful structure, e.g. Gauss-Newton) or a damped BFGS
update, so subproblems are always convex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .qp import QuadraticProgram, solve_qp


class EvaluationError(RuntimeError):
    """A problem callback failed; carries the offending iterate."""

    def __init__(self, message, iterate):
        super().__init__(message)
        self.iterate = np.asarray(iterate, dtype=float)


def finite_difference_jacobian(fn, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fn(x), dtype=float))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fp = np.atleast_1d(np.asarray(fn(x + e), dtype=float))
        fm = np.atleast_1d(np.asarray(fn(x - e), dtype=float))
        J[:, i] = (fp - fm) / (2.0 * step)
    return J


@dataclass
class ConstraintBlock:
    """Vector constraint c(x) (= 0 or <= 0) with optional analytic Jacobian."""

    fn: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-6

    def value(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.fn(x), dtype=float))

    def jacobian(self, x) -> np.ndarray:
        if self.jac is not None:
            return np.atleast_2d(np.asarray(self.jac(x), dtype=float))
        return finite_difference_jacobian(self.fn, x, self.fd_step)


@dataclass
class NonlinearProgram:
    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq_nonlin: Optional[ConstraintBlock] = None
    ineq_nonlin: Optional[ConstraintBlock] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    fd_step: float = 1e-6

    def __post_init__(self):
        n = self.n
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).reshape(-1)
        self.A_in = np.zeros((0, n)) if self.A_in is None else np.atleast_2d(np.asarray(self.A_in, float))
        self.b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, float).reshape(-1)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).reshape(-1)

    def eval_objective(self, x):
        try:
            return float(self.objective(x))
        except (ArithmeticError, ValueError) as exc:
            raise EvaluationError(f"objective failed: {exc}", x) from exc

    def eval_gradient(self, x):
        try:
            if self.gradient is not None:
                return np.asarray(self.gradient(x), dtype=float).reshape(-1)
            return finite_difference_jacobian(lambda z: np.array([self.objective(z)]), x, self.fd_step)[0]
        except (ArithmeticError, ValueError) as exc:
            raise EvaluationError(f"gradient failed: {exc}", x) from exc

    def violation(self, x, c_eq=None, g_in=None) -> float:
        v = 0.0
        if self.A_eq.shape[0]:
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if self.A_in.shape[0]:
            v = max(v, float(np.max(self.A_in @ x - self.b_in, initial=0.0)))
        v = max(v, float(np.max(self.lb - x, initial=0.0)))
        v = max(v, float(np.max(x - self.ub, initial=0.0)))
        if self.eq_nonlin is not None:
            c = self.eq_nonlin.value(x) if c_eq is None else c_eq
            if c.size:
                v = max(v, float(np.max(np.abs(c))))
        if self.ineq_nonlin is not None:
            g = self.ineq_nonlin.value(x) if g_in is None else g_in
            if g.size:
                v = max(v, float(np.max(g, initial=0.0)))
        return v

    def violation_l1(self, x) -> float:
        v = 0.0
        if self.A_eq.shape[0]:
            v += float(np.sum(np.abs(self.A_eq @ x - self.b_eq)))
        if self.A_in.shape[0]:
            v += float(np.sum(np.maximum(self.A_in @ x - self.b_in, 0.0)))
        v += float(np.sum(np.maximum(self.lb - x, 0.0)))
        v += float(np.sum(np.maximum(x - self.ub, 0.0)))
        if self.eq_nonlin is not None:
            v += float(np.sum(np.abs(self.eq_nonlin.value(x))))
        if self.ineq_nonlin is not None:
            v += float(np.sum(np.maximum(self.ineq_nonlin.value(x), 0.0)))
        return v


@dataclass
class NlpSolution:
    status: str
    x: np.ndarray
    objective: float
    kkt_residual: float
    constraint_violation: float
    iterations: int
    trace: list = field(default_factory=list)


def _damped_bfgs_update(B, s, y):
    """Powell-damped BFGS keeping B positive definite."""
    sBs = float(s @ B @ s)
    sy = float(s @ y)
    if sBs <= 0.0:
        return B
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * (B @ s)
        sy = float(s @ y)
    if sy <= 1e-14:
        return B
    Bs = B @ s
    return B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy


def solve_nlp(
    nlp: NonlinearProgram,
    x0,
    max_iter: int = 100,
    kkt_tol: float = 1e-6,
    step_tol: float = 1e-9,
    feas_tol: float = 1e-9,
    max_backtracks: int = 30,
    keep_trace: bool = False,
    stall_tol: Optional[float] = None,
) -> NlpSolution:
    """SQP iteration from x0.  Returns the best feasible point found, so a
    feasible start is never made worse.

    `stall_tol`, when given, stops early once two consecutive feasible
    iterations improve the objective by less than stall_tol*(1+|f|);
    useful when the caller only needs descent, not stationarity.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = nlp.n
    if x.size != n:
        raise ValueError("x0 size mismatch")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")

    f = nlp.eval_objective(x)
    grad = nlp.eval_gradient(x)
    B = np.eye(n) * max(1.0, float(np.max(np.abs(grad), initial=0.0)))
    rho = 1.0
    keep_tol = max(10.0 * feas_tol, 1e-9)
    best = (f, x.copy()) if nlp.violation(x) <= keep_tol else None
    trace = []
    status = "max_iter"
    kkt = np.inf
    viol = nlp.violation(x)
    stalled = 0

    for it in range(max_iter):
        c_eq = nlp.eq_nonlin.value(x) if nlp.eq_nonlin is not None else np.zeros(0)
        J_eq = nlp.eq_nonlin.jacobian(x) if (nlp.eq_nonlin is not None and c_eq.size) else np.zeros((0, n))
        g_in = nlp.ineq_nonlin.value(x) if nlp.ineq_nonlin is not None else np.zeros(0)
        J_in = nlp.ineq_nonlin.jacobian(x) if (nlp.ineq_nonlin is not None and g_in.size) else np.zeros((0, n))

        if nlp.hessian is not None:
            B = np.asarray(nlp.hessian(x), dtype=float)

        A_eq = np.vstack([nlp.A_eq, J_eq])
        b_eq = np.concatenate([nlp.b_eq - nlp.A_eq @ x, -c_eq])
        A_in = np.vstack([nlp.A_in, J_in])
        b_in = np.concatenate([nlp.b_in - nlp.A_in @ x, -g_in])
        sub = QuadraticProgram(
            H=B,
            g=grad,
            A_eq=A_eq if A_eq.shape[0] else None,
            b_eq=b_eq if A_eq.shape[0] else None,
            A_in=A_in if A_in.shape[0] else None,
            b_in=b_in if A_in.shape[0] else None,
            lb=nlp.lb - x,
            ub=nlp.ub - x,
        )
        qs = solve_qp(sub, warm_start=np.zeros(n), check_psd=False)
        if qs.status == "infeasible":
            status = "infeasible"
            break
        p = qs.x
        nu = qs.eq_duals if qs.eq_duals is not None else np.zeros(0)
        mu = qs.in_duals if qs.in_duals is not None else np.zeros(0)

        # KKT residual of the original problem at x with subproblem duals
        stat = grad.copy()
        if A_eq.shape[0]:
            stat += A_eq.T @ nu
        if A_in.shape[0]:
            stat += A_in.T @ mu
        if qs.lb_duals is not None:
            stat -= qs.lb_duals
            stat += qs.ub_duals
        kkt = float(np.max(np.abs(stat), initial=0.0))
        viol = nlp.violation(x, c_eq=c_eq, g_in=g_in)
        if keep_trace:
            trace.append({"iter": it, "objective": f, "kkt": kkt, "violation": viol})
        if viol <= feas_tol and kkt <= kkt_tol:
            status = "optimal"
            break

        step_norm = float(np.max(np.abs(p), initial=0.0))
        if step_norm <= step_tol:
            status = "optimal" if viol <= feas_tol else "max_iter"
            break

        duals_inf = max(
            float(np.max(np.abs(nu), initial=0.0)), float(np.max(np.abs(mu), initial=0.0))
        )
        rho = max(rho, 2.0 * duals_inf + 1.0)
        phi0 = f + rho * nlp.violation_l1(x)
        deriv = float(grad @ p) - rho * nlp.violation_l1(x)
        alpha = 1.0
        accepted = False
        for _ in range(max_backtracks + 1):
            x_try = x + alpha * p
            f_try = nlp.eval_objective(x_try)
            phi_try = f_try + rho * nlp.violation_l1(x_try)
            if phi_try <= phi0 + 1e-4 * alpha * min(deriv, 0.0) + 1e-14 * abs(phi0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            status = "max_iter"
            break

        grad_new = nlp.eval_gradient(x_try)
        if nlp.hessian is None:
            # difference of Lagrangian gradients for the BFGS secant pair
            dL_old = grad.copy()
            dL_new = grad_new.copy()
            if J_eq.shape[0]:
                J_eq_new = nlp.eq_nonlin.jacobian(x_try)
                dL_old += J_eq.T @ nu[nlp.A_eq.shape[0]:]
                dL_new += J_eq_new.T @ nu[nlp.A_eq.shape[0]:]
            if J_in.shape[0]:
                J_in_new = nlp.ineq_nonlin.jacobian(x_try)
                dL_old += J_in.T @ mu[nlp.A_in.shape[0]:]
                dL_new += J_in_new.T @ mu[nlp.A_in.shape[0]:]
            B = _damped_bfgs_update(B, alpha * p, dL_new - dL_old)
        improvement = f - f_try
        x, f, grad = x_try, f_try, grad_new
        if nlp.violation(x) <= keep_tol and (best is None or f < best[0]):
            best = (f, x.copy())
        if stall_tol is not None:
            # only full accepted steps count: backtracked steps are progress
            full = alpha == 1.0
            stalled = stalled + 1 if (full and improvement <= stall_tol * (1.0 + abs(f))) else 0
            if stalled >= 2 and nlp.violation(x) <= feas_tol:
                status = "stalled"
                break

    viol = nlp.violation(x)
    if best is not None and (viol > keep_tol or best[0] < f):
        f, x = best
        viol = nlp.violation(x)
    return NlpSolution(
        status=status,
        x=x,
        objective=f,
        kkt_residual=kkt,
        constraint_violation=viol,
        iterations=it + 1 if max_iter else 0,
        trace=trace,
    )


def write_trace_csv(solution: NlpSolution, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iter", "objective", "kkt", "violation"])
        writer.writeheader()
        for row in solution.trace:
            writer.writerow(row)


def check_gradient(fn, jac, points, step: float = 1e-6, rtol: float = 1e-5):
    """Compare an analytic Jacobian against central differences.

    Returns (passed, worst_relative_error).
    """
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        J = np.atleast_2d(np.asarray(jac(x), dtype=float))
        J_fd = finite_difference_jacobian(fn, x, step)
        scale = max(1.0, float(np.max(np.abs(J_fd))))
        err = float(np.max(np.abs(J - J_fd))) / scale
        worst = max(worst, err)
    return worst <= rtol, worst
