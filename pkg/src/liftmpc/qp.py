"""Dense convex quadratic programming by a primal active-set method.

Solves
    min 1/2 x'Hx + g'x   s.t.  A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub

with H symmetric positive semidefinite.  Bounds are handled separately
from general rows so problems with thousands of box-constrained
variables (barycentric weights) stay cheap: every subproblem is solved
in the null space of the working set restricted to the free variables.

LPs (H = 0) and flat directions of semidefinite QPs are treated as
zero-curvature descent rays, stepping to the nearest blocking
constraint; reported objectives always use the original H.  Problems
whose optimum is unbounded are not supported and end in max_iter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_FEAS_TOL = 1e-9
_DUAL_TOL = 1e-9
_STEP_TOL = 1e-11
_RAY_CAP = 1e10


@dataclass
class QuadraticProgram:
    H: np.ndarray
    g: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    const: float = 0.0

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError(f"H shape {self.H.shape} does not match g size {n}")
        for name in ("A_eq", "A_in"):
            A = getattr(self, name)
            b = getattr(self, name.replace("A", "b"))
            if A is None:
                setattr(self, name, np.zeros((0, n)))
                setattr(self, name.replace("A", "b"), np.zeros(0))
            else:
                A = np.atleast_2d(np.asarray(A, dtype=float))
                b = np.asarray(b, dtype=float).reshape(-1)
                if A.shape != (b.size, n):
                    raise ValueError(f"{name} shape {A.shape} inconsistent with rhs {b.size}")
                setattr(self, name, A)
                setattr(self, name.replace("A", "b"), b)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bound sizes inconsistent with g")

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x + self.const)

    def violation(self, x) -> float:
        v = 0.0
        if self.A_eq.shape[0]:
            v = max(v, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if self.A_in.shape[0]:
            v = max(v, float(np.max(self.A_in @ x - self.b_in, initial=0.0)))
        v = max(v, float(np.max(self.lb - x, initial=0.0)))
        v = max(v, float(np.max(x - self.ub, initial=0.0)))
        return v


@dataclass
class QpSolution:
    status: str
    x: Optional[np.ndarray]
    objective: float
    eq_duals: Optional[np.ndarray] = None
    in_duals: Optional[np.ndarray] = None
    lb_duals: Optional[np.ndarray] = None
    ub_duals: Optional[np.ndarray] = None
    kkt_residuals: dict = field(default_factory=dict)
    iterations: int = 0
    farkas: Optional[np.ndarray] = None
    active_in: Optional[np.ndarray] = None


def _check_psd(H: np.ndarray) -> None:
    if H.size == 0:
        return
    asym = float(np.max(np.abs(H - H.T)))
    if asym > 1e-12 * max(1.0, float(np.max(np.abs(H)))):
        raise ValueError(f"H is not symmetric (asymmetry {asym:.2e})")
    scale = max(1.0, float(np.max(np.abs(H))))
    try:
        np.linalg.cholesky(H + (1e-10 * scale) * np.eye(H.shape[0]))
    except np.linalg.LinAlgError:
        floor = float(np.min(np.linalg.eigvalsh(H)))
        if floor < -1e-10 * scale:
            raise ValueError(f"H is not positive semidefinite (eigen floor {floor:.2e})")


class _ActiveSet:
    """Feasible-start primal active-set core."""

    def __init__(self, qp: QuadraticProgram, x0: np.ndarray, max_iter: int):
        self.qp = qp
        n = qp.n
        self.n = n
        self.mi = qp.A_in.shape[0]
        self.me = qp.A_eq.shape[0]
        self.max_iter = max_iter
        self.x = np.asarray(x0, dtype=float).copy()
        self.H = qp.H
        self.gscale = max(1.0, float(np.max(np.abs(qp.g), initial=0.0)))
        snap = 1e-11
        self.at_lb = self.x - qp.lb <= snap
        self.at_ub = qp.ub - self.x <= snap
        self.x[self.at_lb] = qp.lb[self.at_lb]
        self.x[self.at_ub] = qp.ub[self.at_ub]
        if self.mi:
            self.act_in = (qp.b_in - qp.A_in @ self.x) <= snap
        else:
            self.act_in = np.zeros(0, dtype=bool)
        self.grad = self.H @ self.x + qp.g
        self.iterations = 0

    def _null_basis(self, free_idx, act_rows):
        if act_rows.shape[0]:
            A = act_rows[:, free_idx]
            _, s, vt = np.linalg.svd(A, full_matrices=True)
            rank = int(np.sum(s > 1e-11 * max(1.0, s[0] if s.size else 1.0)))
            return vt[rank:].T
        return np.eye(free_idx.size)

    def _step_direction(self, free_idx, act_rows):
        """EQP step over free vars within the working-set null space.

        Returns (p_free, is_ray): a finite Newton step for the positive
        curvature part, or a zero-curvature descent ray.
        """
        Z = self._null_basis(free_idx, act_rows)
        if Z.shape[1] == 0:
            return np.zeros(free_idx.size), False
        gf = self.grad[free_idx]
        rhs = -(Z.T @ gf)
        Hff = self.H[np.ix_(free_idx, free_idx)]
        M = Z.T @ Hff @ Z
        M = 0.5 * (M + M.T)
        w, V = np.linalg.eigh(M)
        cut = 1e-12 * max(1.0, float(w[-1]) if w.size else 1.0)
        pos = w > cut
        r_proj = V.T @ rhs
        ray = r_proj.copy()
        ray[pos] = 0.0
        ray_slope = float(np.max(np.abs(ray), initial=0.0))
        if ray_slope > 1e-11 * self.gscale:
            pz = V @ ray
            nrm = float(np.max(np.abs(pz)))
            return Z @ (pz / nrm), True
        newt = np.zeros_like(r_proj)
        newt[pos] = r_proj[pos] / w[pos]
        return Z @ (V @ newt), False

    def _multipliers(self, free_idx, act_list):
        """Least-squares multipliers for equalities, active rows and bounds."""
        qp = self.qp
        rows = []
        if self.me:
            rows.append(qp.A_eq)
        if act_list.size:
            rows.append(qp.A_in[act_list])
        if rows:
            A = np.vstack(rows)
            Af = A[:, free_idx]
            sol, *_ = np.linalg.lstsq(Af.T, -self.grad[free_idx], rcond=None)
            nu = sol[: self.me]
            mu = sol[self.me :]
            resid = self.grad + A.T @ sol
        else:
            nu = np.zeros(0)
            mu = np.zeros(0)
            resid = self.grad.copy()
        both = self.at_lb & self.at_ub
        zl = np.where(self.at_lb, resid, 0.0)
        zu = np.where(self.at_ub, -resid, 0.0)
        zl[both] = np.maximum(resid[both], 0.0)
        zu[both] = np.maximum(-resid[both], 0.0)
        return nu, mu, zl, zu

    def run(self) -> QpSolution:
        qp = self.qp
        n, mi = self.n, self.mi
        while self.iterations < self.max_iter:
            self.iterations += 1
            free = ~(self.at_lb | self.at_ub)
            free_idx = np.flatnonzero(free)
            act_list = np.flatnonzero(self.act_in)
            act_rows = (
                np.vstack([qp.A_eq, qp.A_in[act_list]])
                if (self.me or act_list.size)
                else np.zeros((0, n))
            )
            if free_idx.size:
                p_f, is_ray = self._step_direction(free_idx, act_rows)
            else:
                p_f, is_ray = np.zeros(0), False

            if p_f.size == 0 or float(np.max(np.abs(p_f))) <= _STEP_TOL:
                nu, mu, zl, zu = self._multipliers(free_idx, act_list)
                drop = None
                # Bland-style: lowest constraint index among negative duals,
                # ordered general inequalities, then lower, then upper bounds.
                for j, row in enumerate(act_list):
                    if mu[j] < -_DUAL_TOL:
                        drop = ("in", int(row))
                        break
                if drop is None:
                    for i in range(n):
                        if self.at_lb[i] and not self.at_ub[i] and zl[i] < -_DUAL_TOL:
                            drop = ("lb", i)
                            break
                if drop is None:
                    for i in range(n):
                        if self.at_ub[i] and not self.at_lb[i] and zu[i] < -_DUAL_TOL:
                            drop = ("ub", i)
                            break
                if drop is None:
                    return self._finish("optimal", nu, mu, zl, zu, act_list)
                kind, idx = drop
                if kind == "in":
                    self.act_in[idx] = False
                elif kind == "lb":
                    self.at_lb[idx] = False
                else:
                    self.at_ub[idx] = False
                continue

            p = np.zeros(n)
            p[free_idx] = p_f
            alpha = _RAY_CAP if is_ray else 1.0
            block = None
            if mi:
                inact = np.flatnonzero(~self.act_in)
                if inact.size:
                    Ap = qp.A_in[inact] @ p
                    slack = qp.b_in[inact] - qp.A_in[inact] @ self.x
                    pos = Ap > 1e-13
                    if np.any(pos):
                        ratios = np.where(pos, np.maximum(slack, 0.0) / np.where(pos, Ap, 1.0), np.inf)
                        k = int(np.argmin(ratios))
                        if ratios[k] < alpha - 1e-15:
                            alpha = float(ratios[k])
                            block = ("in", int(inact[k]))
            for i in free_idx:
                pi = p[i]
                if pi < -1e-13 and np.isfinite(qp.lb[i]):
                    r = max(0.0, (qp.lb[i] - self.x[i]) / pi)
                    if r < alpha - 1e-15:
                        alpha = r
                        block = ("lb", int(i))
                elif pi > 1e-13 and np.isfinite(qp.ub[i]):
                    r = max(0.0, (qp.ub[i] - self.x[i]) / pi)
                    if r < alpha - 1e-15:
                        alpha = r
                        block = ("ub", int(i))

            if is_ray and block is None:
                # descent ray with no blocking constraint: unbounded below
                nu, mu, zl, zu = self._multipliers(free_idx, act_list)
                return self._finish("max_iter", nu, mu, zl, zu, act_list)

            if alpha > 0.0:
                self.x += alpha * p
                self.grad += alpha * (self.H[:, free_idx] @ p_f)
            if block is not None:
                kind, idx = block
                if kind == "in":
                    self.act_in[idx] = True
                elif kind == "lb":
                    self.x[idx] = qp.lb[idx]
                    self.at_lb[idx] = True
                else:
                    self.x[idx] = qp.ub[idx]
                    self.at_ub[idx] = True
        nu, mu, zl, zu = self._multipliers(
            np.flatnonzero(~(self.at_lb | self.at_ub)), np.flatnonzero(self.act_in)
        )
        return self._finish("max_iter", nu, mu, zl, zu, np.flatnonzero(self.act_in))

    def _finish(self, status, nu, mu, zl, zu, act_list) -> QpSolution:
        qp = self.qp
        in_duals = np.zeros(self.mi)
        if act_list.size:
            in_duals[act_list] = np.maximum(mu, 0.0) if status == "optimal" else mu
        stat = self.grad.copy()
        if self.me:
            stat += qp.A_eq.T @ nu
        if self.mi:
            stat += qp.A_in.T @ in_duals
        stat -= zl
        stat += zu
        comp = 0.0
        if self.mi:
            slack = qp.b_in - qp.A_in @ self.x
            comp = float(np.max(np.abs(in_duals * slack), initial=0.0))
        lslack = np.where(np.isfinite(qp.lb), self.x - qp.lb, 0.0)
        uslack = np.where(np.isfinite(qp.ub), qp.ub - self.x, 0.0)
        comp = max(comp, float(np.max(np.abs(zl * lslack), initial=0.0)))
        comp = max(comp, float(np.max(np.abs(zu * uslack), initial=0.0)))
        kkt = {
            "stationarity": float(np.max(np.abs(stat), initial=0.0)),
            "primal": qp.violation(self.x),
            "dual": float(
                -min(np.min(in_duals, initial=0.0), np.min(zl, initial=0.0), np.min(zu, initial=0.0))
            ),
            "complementarity": comp,
        }
        return QpSolution(
            status=status,
            x=self.x.copy(),
            objective=qp.objective(self.x),
            eq_duals=nu,
            in_duals=in_duals,
            lb_duals=zl,
            ub_duals=zu,
            kkt_residuals=kkt,
            iterations=self.iterations,
            active_in=self.act_in.copy(),
        )


def _phase1(qp: QuadraticProgram, x0: np.ndarray, max_iter: int):
    """Minimize total constraint violation; returns (x_feasible or None, info)."""
    n, me, mi = qp.n, qp.A_eq.shape[0], qp.A_in.shape[0]
    x0 = np.clip(x0, qp.lb, qp.ub)
    r_eq = qp.A_eq @ x0 - qp.b_eq if me else np.zeros(0)
    sig = np.where(r_eq >= 0.0, -1.0, 1.0)
    r_in = qp.A_in @ x0 - qp.b_in if mi else np.zeros(0)
    s_in0 = np.maximum(r_in, 0.0)

    n_aux = n + me + mi
    A_eq = np.hstack([qp.A_eq, np.diag(sig), np.zeros((me, mi))]) if me else None
    A_in = np.hstack([qp.A_in, np.zeros((mi, me)), -np.eye(mi)]) if mi else None
    aux = QuadraticProgram(
        H=np.zeros((n_aux, n_aux)),
        g=np.concatenate([np.zeros(n), np.ones(me + mi)]),
        A_eq=A_eq,
        b_eq=qp.b_eq if me else None,
        A_in=A_in,
        b_in=qp.b_in if mi else None,
        lb=np.concatenate([qp.lb, np.zeros(me + mi)]),
        ub=np.concatenate([qp.ub, np.full(me + mi, np.inf)]),
    )
    z0 = np.concatenate([x0, np.abs(r_eq), s_in0])
    core = _ActiveSet(aux, z0, max_iter)
    sol = core.run()
    total = float(np.sum(sol.x[n:])) if sol.x is not None else np.inf
    if sol.status != "optimal" or total > 1e-8:
        farkas = None
        if sol.eq_duals is not None:
            farkas = np.concatenate([sol.eq_duals, sol.in_duals])
        return None, {"phase1_objective": total, "farkas": farkas, "iterations": sol.iterations}
    return sol.x[:n], {"phase1_objective": total, "iterations": sol.iterations}


def solve_qp(
    qp: QuadraticProgram,
    warm_start: Optional[np.ndarray] = None,
    max_iter: Optional[int] = None,
    check_psd: bool = True,
) -> QpSolution:
    """Solve a convex QP; returns an optimal point, an infeasibility
    certificate, or max_iter.

    A feasible warm start skips phase 1 and seeds the working set from
    the warm point's active bounds and rows.
    """
    if check_psd:
        _check_psd(qp.H)
    n = qp.n
    if np.any(qp.lb > qp.ub):
        return QpSolution(status="infeasible", x=None, objective=np.inf)
    if max_iter is None:
        max_iter = 200 + 10 * (n + qp.A_in.shape[0])

    phase1_info = {}
    x0 = None
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float).reshape(-1)
        if w.size != n:
            raise ValueError("warm start size mismatch")
        if qp.violation(w) <= _FEAS_TOL:
            x0 = np.clip(w, qp.lb, qp.ub)
    if x0 is None:
        start = warm_start if warm_start is not None else np.zeros(n)
        x0, phase1_info = _phase1(qp, np.asarray(start, dtype=float), max_iter)
        if x0 is None:
            return QpSolution(
                status="infeasible",
                x=None,
                objective=np.inf,
                farkas=phase1_info.get("farkas"),
                iterations=phase1_info.get("iterations", 0),
                kkt_residuals={"phase1_objective": phase1_info.get("phase1_objective", np.inf)},
            )

    core = _ActiveSet(qp, x0, max_iter)
    sol = core.run()
    sol.iterations += phase1_info.get("iterations", 0)
    return sol
