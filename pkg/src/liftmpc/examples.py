"""The three case studies: PWA regulator, bilinear DC motor, kinematic unicycle.

Each example bundles a plant, the system the controller actually runs
on (the input-augmented one where the stage cost penalises inputs), its
stage cost on output windows, the linear/smooth pieces of the horizon
problem, a seeding controller for iteration zero, and the convergence
test used to truncate trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .systems import (
    Box,
    LiftedSystem,
    MapDomainError,
    augment,
    window_from_rollout,
)
from .transcribe import (
    OutputGrid,
    RowBuilder,
    SmoothInequality,
    SmoothObjective,
    StepPieces,
)


class ConfigError(ValueError):
    """Bad example id, override key, or parameter value."""


@dataclass
class SeedTrajectory:
    """Iteration-zero rollout produced by the example's seeding controller."""

    states: np.ndarray   # (T+1, n) plant states
    inputs: np.ndarray   # (T, m)
    outputs: np.ndarray  # (T+1, m)


def _as_outputs(system: LiftedSystem, states: np.ndarray) -> np.ndarray:
    return np.array([system.output(x) for x in states])


# ---------------------------------------------------------------------------
# PWA regulator


class PwaExample:
    """Two-mode piecewise affine double-integrator-like regulator.

    Modes split at x1 = -2; the output is x1, two outputs determine the
    state, and the input map has one affine branch per mode.  The origin
    is held by the constant input -1, so the equilibrium is steady
    rather than unforced.
    """

    example_id = "pwa"
    hybrid = True
    augmented = False
    n_modes = 2

    A_LOW = np.array([[1.0, 0.2], [0.0, 1.0]])
    A_HIGH = np.array([[1.0, 0.2], [0.5, 1.0]])
    B = np.array([0.0, 1.0])
    C_HIGH = np.array([0.0, 1.0])
    FX = np.array([[1.0, 0.0], [-5.0, 5.0]])

    def __init__(self, N: int = 3, x_S=(-5.0, 0.0), max_steps: int = 500,
                 tol_conv: float = 1e-6, seed_horizon: int = 30,
                 seed_input_weight: float = 2.0):
        if N < 1:
            raise ConfigError("prediction horizon N must be >= 1")
        self.N = int(N)
        self.x_S = np.asarray(x_S, dtype=float)
        self.max_steps = int(max_steps)
        self.tol_conv = float(tol_conv)
        self.seed_horizon = int(seed_horizon)
        self.seed_input_weight = float(seed_input_weight)
        self.consec = 2
        self.tail_len = 1

        self.plant = LiftedSystem(
            name="pwa",
            n=2,
            m=1,
            lift_depth=2,
            dynamics=self._dyn,
            output=lambda x: np.array([x[0]]),
            state_map=lambda w: self.FX @ w[0],
            input_map=self._input_map,
            state_box=Box.from_intervals([(-5.0, 0.0), (0.0, 6.0)]),
            input_box=Box.from_intervals([(-10.0, 2.0)]),
            x_eq=np.zeros(2),
            u_eq=np.array([-1.0]),
        )
        self.control_system = self.plant
        self._seed: Optional[SeedTrajectory] = None
        # both affine pieces agree on the shared facet x1 = -2
        for x2 in (0.0, 3.0, 6.0):
            x = np.array([-2.0, x2])
            lo = self.A_LOW @ x
            hi = self.A_HIGH @ x + self.C_HIGH
            assert np.allclose(lo, hi, atol=1e-12)

    def _dyn(self, x, u):
        u = np.atleast_1d(u)
        if x[0] <= -2.0:
            return self.A_LOW @ x + self.B * u[0]
        return self.A_HIGH @ x + self.B * u[0] + self.C_HIGH

    def _input_map(self, lifted):
        y0, y1, y2 = lifted[0]
        if y0 <= -2.0:
            return np.array([5.0 * y0 - 10.0 * y1 + 5.0 * y2])
        return np.array([4.5 * y0 - 10.0 * y1 + 5.0 * y2 - 1.0])

    def mode_of_output(self, y) -> int:
        return 0 if float(y) <= -2.0 else 1

    @staticmethod
    def _u_coeffs(mode: int):
        if mode == 0:
            return np.array([5.0, -10.0, 5.0]), 0.0
        return np.array([4.5, -10.0, 5.0]), -1.0

    def stage_cost(self, window) -> float:
        return float(5.0 * (window[0, 0] ** 2 + window[0, 1] ** 2))

    def deviation(self, window) -> float:
        # outputs and the state they reconstruct (x2 amplifies the gap)
        return float(max(np.max(np.abs(window)), np.max(np.abs(self.FX @ window[0]))))

    def eq_window(self) -> np.ndarray:
        return np.zeros((1, 2))

    def equilibrium_tail(self, last_window):
        return [self.eq_window()], [np.zeros(1)], True

    def initial_control_state(self, x_plant) -> np.ndarray:
        return np.asarray(x_plant, dtype=float)

    def extract_input(self, lifted, x_ctrl) -> np.ndarray:
        return self.control_system.input_map(lifted)

    def _path_rows(self, builder: RowBuilder, grid: OutputGrid, mode_seq) -> None:
        for k, mode in enumerate(mode_seq):
            if mode == 0:
                builder.add([(grid.idx(k), 1.0)], -2.0)
            else:
                builder.add([(grid.idx(k), -1.0)], 2.0)
            coeffs, off = self._u_coeffs(mode)
            triplet = [(grid.idx(k + j), coeffs[j]) for j in range(3)]
            builder.add(triplet, 2.0 - off)
            builder.add([(i, -c) for i, c in triplet], 10.0 + off)
            builder.add([(grid.idx(k), 1.0)], 0.0)
            builder.add([(grid.idx(k), -1.0)], 5.0)
            builder.add([(grid.idx(k + 1), 5.0), (grid.idx(k), -5.0)], 6.0)
            builder.add([(grid.idx(k + 1), -5.0), (grid.idx(k), 5.0)], 0.0)

    def _quad_objective(self, grid: OutputGrid, horizon: int):
        H = np.zeros((grid.n_vars, grid.n_vars))
        for k in range(horizon):
            H[grid.idx(k), grid.idx(k)] += 10.0
            H[grid.idx(k + 1), grid.idx(k + 1)] += 10.0
        return H, np.zeros(grid.n_vars), 0.0

    def step_pieces(self, x_ctrl, mode_seq=None) -> StepPieces:
        if mode_seq is None or len(mode_seq) != self.N:
            raise ValueError("PWA problems need a mode sequence of length N")
        grid = OutputGrid(m=1, n_cols=self.N + 2, depth=2)
        eq = RowBuilder(grid.n_vars)
        eq.add([(grid.idx(0), 1.0)], x_ctrl[0])
        eq.add([(grid.idx(1), 1.0)], x_ctrl[0] + 0.2 * x_ctrl[1])
        ineq = RowBuilder(grid.n_vars)
        self._path_rows(ineq, grid, mode_seq)
        A_eq, b_eq = eq.matrix()
        A_in, b_in = ineq.matrix()
        H, g, const = self._quad_objective(grid, self.N)
        return StepPieces(grid=grid, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                          H=H, g=g, const=const)

    def seed(self) -> SeedTrajectory:
        """Gentle single-shot plan to the origin with heavy input cost."""
        if self._seed is not None:
            return self._seed
        from .qp import QuadraticProgram, solve_qp

        Ns = self.seed_horizon
        grid = OutputGrid(m=1, n_cols=Ns + 2, depth=2)
        best = None
        for cross in range(Ns + 1):
            mode_seq = [0] * cross + [1] * (Ns - cross)
            eq = RowBuilder(grid.n_vars)
            eq.add([(grid.idx(0), 1.0)], self.x_S[0])
            eq.add([(grid.idx(1), 1.0)], self.x_S[0] + 0.2 * self.x_S[1])
            eq.add([(grid.idx(Ns), 1.0)], 0.0)
            eq.add([(grid.idx(Ns + 1), 1.0)], 0.0)
            ineq = RowBuilder(grid.n_vars)
            self._path_rows(ineq, grid, mode_seq)
            H = np.eye(grid.n_vars) * 2e-6
            g = np.zeros(grid.n_vars)
            const = 0.0
            for k, mode in enumerate(mode_seq):
                coeffs, off = self._u_coeffs(mode)
                row = np.zeros(grid.n_vars)
                for j in range(3):
                    row[grid.idx(k + j)] = coeffs[j]
                H += 2.0 * self.seed_input_weight * np.outer(row, row)
                g += 2.0 * self.seed_input_weight * off * row
                const += self.seed_input_weight * off ** 2
            A_eq, b_eq = eq.matrix()
            A_in, b_in = ineq.matrix()
            sol = solve_qp(QuadraticProgram(H=H, g=g, A_eq=A_eq, b_eq=b_eq,
                                            A_in=A_in, b_in=b_in),
                           check_psd=False)
            if sol.status == "optimal" and (best is None or sol.objective < best[0] - 1e-12):
                best = (sol.objective, sol.x.copy(), mode_seq)
        if best is None:
            raise ConfigError("PWA seeding problem infeasible from x_S")
        _, yv, mode_seq = best
        inputs = []
        for k, mode in enumerate(mode_seq):
            coeffs, off = self._u_coeffs(mode)
            inputs.append([coeffs @ yv[k:k + 3] + off])
        extra = self.consec + 4
        inputs.extend([[-1.0]] * extra)
        inputs = np.array(inputs)
        states = self.plant.rollout(self.x_S, inputs)
        outputs = _as_outputs(self.plant, states)
        assert np.max(np.abs(outputs[: Ns + 2, 0] - yv[: Ns + 2])) < 1e-8
        self._seed = SeedTrajectory(states=states, inputs=inputs, outputs=outputs)
        return self._seed

    def sample_rollout(self, rng, n_steps: int):
        """Random rollout with every state and input inside the constraints."""
        for _ in range(1000):
            x = np.array([rng.uniform(-5.0, 0.0), rng.uniform(0.0, 6.0)])
            xs, us = [x], []
            ok = True
            for _ in range(n_steps):
                x = xs[-1]
                drift = (self.A_LOW @ x if x[0] <= -2.0 else self.A_HIGH @ x + self.C_HIGH)
                lo = max(-10.0, -drift[1])
                hi = min(2.0, 6.0 - drift[1])
                if lo > hi or not (-5.0 <= drift[0] <= 0.0):
                    ok = False
                    break
                u = np.array([rng.uniform(lo, hi)])
                us.append(u)
                xs.append(self.plant.step(x, u))
            if ok:
                return xs[0], np.array(us)
        raise RuntimeError("failed to sample a feasible PWA rollout")


# ---------------------------------------------------------------------------
# Bilinear DC motor


@dataclass
class MotorParams:
    dt: float = 0.01
    L_a: float = 0.314
    R_a: float = 12.345
    K_y: float = 0.253
    J: float = 0.00441
    D: float = 0.00732


class DcMotorExample:
    """Bilinear DC motor tracking an angular-velocity set point.

    Output is (armature current, angle).  The input cost makes this run
    on the input-augmented system with windows one output wider.  The
    angle is unconstrained and drifts at the set point, so the
    equilibrium is a cruise ray rather than a point: convergence is
    measured on current, velocity and field current, and stored
    trajectories are extended by an exact-cruise tail.
    """

    example_id = "dc_motor"
    hybrid = False
    augmented = True

    def __init__(self, N: int = 5, params: Optional[MotorParams] = None,
                 x_S=(0.3, 0.0, 0.0), omega_ref: float = 6.0,
                 max_steps: int = 3000, tol_conv: float = 1e-6,
                 tail_len: int = 40, seed_gain: float = 0.5,
                 current_floor: float = 1e-3):
        if N < 1:
            raise ConfigError("prediction horizon N must be >= 1")
        self.N = int(N)
        self.p = params or MotorParams()
        self.x_S = np.asarray(x_S, dtype=float)
        self.omega_ref = float(omega_ref)
        self.max_steps = int(max_steps)
        self.tol_conv = float(tol_conv)
        self.tail_len = int(tail_len)
        self.seed_gain = float(seed_gain)
        self.current_floor = float(current_floor)
        self.consec = 2
        self.eps_I = 1e-6

        p = self.p
        self.aI = 1.0 - p.dt * p.R_a / p.L_a
        self.bI = p.dt / p.L_a
        self.kB = p.K_y * p.dt / p.L_a
        self.aW = 1.0 - p.dt * p.D / p.J
        self.kT = p.K_y * p.dt / p.J

        self.plant = LiftedSystem(
            name="dc_motor",
            n=3,
            m=2,
            lift_depth=2,
            dynamics=self._dyn,
            output=lambda x: x[:2].copy(),
            state_map=self._state_map,
            input_map=self._input_map,
            state_box=Box.from_intervals([(0.0, 5.0), None, (-10.0, 10.0)]),
            input_box=Box.from_intervals([(-5.0, 5.0), None]),
            x_eq=np.zeros(3),  # placeholder until the seed pins the set point
            u_eq=np.zeros(2),
        )
        self._seed: Optional[SeedTrajectory] = None
        self._compute_seed()
        # equilibrium field current from the seed; cruise current follows
        # from the steady torque balance so the zero-cost set is invariant
        self.u1_star = float(np.mean(self._seed.inputs[-10:, 0]))
        self.I_star = p.D * self.omega_ref / (p.K_y * self.u1_star)
        self.u2_star = p.R_a * self.I_star + self.u1_star * p.K_y * self.omega_ref
        self.plant = LiftedSystem(
            name="dc_motor",
            n=3,
            m=2,
            lift_depth=2,
            dynamics=self._dyn,
            output=lambda x: x[:2].copy(),
            state_map=self._state_map,
            input_map=self._input_map,
            state_box=self.plant.state_box,
            input_box=self.plant.input_box,
            x_eq=np.array([self.I_star, 0.0, self.omega_ref]),
            u_eq=np.array([self.u1_star, self.u2_star]),
        )
        self.control_system = augment(self.plant)
        self.u_S = self._seed.inputs[0].copy()

    def _dyn(self, x, u):
        I, th, w = x
        u1, u2 = u
        return np.array([
            self.aI * I - self.kB * u1 * w + self.bI * u2,
            th + self.p.dt * w,
            self.aW * w + self.kT * u1 * I,
        ])

    def _state_map(self, window):
        return np.array([
            window[0, 0],
            window[1, 0],
            (window[1, 1] - window[1, 0]) / self.p.dt,
        ])

    def _u1_parts(self, lifted):
        t0, t1, t2 = lifted[1]
        num = (t2 - (1.0 + self.aW) * t1 + self.aW * t0) / self.p.dt
        den = self.kT * lifted[0, 0]
        return num, den

    def _input_map(self, lifted):
        if lifted[0, 0] <= self.eps_I:
            raise MapDomainError(
                f"armature current {lifted[0, 0]:.3e} too small to invert the torque map"
            )
        num, den = self._u1_parts(lifted)
        u1 = num / den
        I0, I1 = lifted[0, 0], lifted[0, 1]
        t0, t1 = lifted[1, 0], lifted[1, 1]
        u2 = (self.p.L_a / self.p.dt) * (I1 - self.aI * I0) \
            + self.p.K_y * u1 * (t1 - t0) / self.p.dt
        return np.array([u1, u2])

    def stage_cost(self, window) -> float:
        I0 = window[0, 0]
        w0 = (window[1, 1] - window[1, 0]) / self.p.dt
        num, den = self._u1_parts(window)
        u1 = num / den
        return float(
            20.0 * (w0 - self.omega_ref) ** 2
            + 20.0 * (I0 - self.I_star) ** 2
            + (u1 - self.u1_star) ** 2
        )

    def deviation(self, window) -> float:
        dev = float(np.max(np.abs(window[0] - self.I_star)))
        omegas = np.diff(window[1]) / self.p.dt
        dev = max(dev, float(np.max(np.abs(omegas - self.omega_ref))))
        num, den = self._u1_parts(window)
        dev = max(dev, abs(num / den - self.u1_star))
        return dev

    def eq_window(self, theta0: float = 0.0) -> np.ndarray:
        h = self.p.dt * self.omega_ref
        return np.array([
            [self.I_star] * 3,
            [theta0, theta0 + h, theta0 + 2.0 * h],
        ])

    def equilibrium_tail(self, last_window):
        h = self.p.dt * self.omega_ref
        anchor = last_window[1, 1]
        windows = [self.eq_window(anchor + j * h) for j in range(self.tail_len)]
        succ = [np.array([self.I_star, anchor + (j + 3) * h]) for j in range(self.tail_len)]
        return windows, succ, False

    def initial_control_state(self, x_plant) -> np.ndarray:
        return np.concatenate([np.asarray(x_plant, float), self.u_S])

    def extract_input(self, lifted, x_ctrl) -> np.ndarray:
        return self.control_system.input_map(lifted)

    def step_pieces(self, x_ctrl, mode_seq=None) -> StepPieces:
        p = self.p
        N = self.N
        grid = OutputGrid(m=2, n_cols=N + 3, depth=3)
        iI = lambda k: grid.idx(k, 0)
        iT = lambda k: grid.idx(k, 1)
        I0, th0, w0, u1c, u2c = x_ctrl

        eq = RowBuilder(grid.n_vars)
        eq.add([(iI(0), 1.0)], I0)
        eq.add([(iT(0), 1.0)], th0)
        eq.add([(iT(1), 1.0), (iT(0), -1.0)], p.dt * w0)
        # current input reconstructs from the leading outputs
        eq.add(
            [(iT(2), 1.0 / p.dt), (iT(1), -(1.0 + self.aW) / p.dt),
             (iT(0), self.aW / p.dt), (iI(0), -u1c * self.kT)],
            0.0,
        )
        eq.add(
            [(iI(1), p.L_a / p.dt), (iI(0), -self.aI * p.L_a / p.dt),
             (iT(1), p.K_y * u1c / p.dt), (iT(0), -p.K_y * u1c / p.dt)],
            u2c,
        )

        ineq = RowBuilder(grid.n_vars)
        for k in range(N):
            ineq.add([(iI(k), -1.0)], -self.current_floor)
            ineq.add([(iI(k), 1.0)], 5.0)
            ineq.add([(iT(k + 1), 1.0 / p.dt), (iT(k), -1.0 / p.dt)], 10.0)
            ineq.add([(iT(k + 1), -1.0 / p.dt), (iT(k), 1.0 / p.dt)], 10.0)
            # |u1| <= 5 as linear rows: +-num <= 5 * kT * I (current is positive)
            num = [(iT(k + 2), 1.0 / p.dt), (iT(k + 1), -(1.0 + self.aW) / p.dt),
                   (iT(k), self.aW / p.dt)]
            ineq.add(num + [(iI(k), -5.0 * self.kT)], 0.0)
            ineq.add([(i, -c) for i, c in num] + [(iI(k), -5.0 * self.kT)], 0.0)

        H = np.zeros((grid.n_vars, grid.n_vars))
        g = np.zeros(grid.n_vars)
        const = 0.0
        for k in range(N):
            row = np.zeros(grid.n_vars)
            row[iT(k + 1)] = 1.0 / p.dt
            row[iT(k)] = -1.0 / p.dt
            H += 40.0 * np.outer(row, row)
            g += -40.0 * self.omega_ref * row
            const += 20.0 * self.omega_ref ** 2
            H[iI(k), iI(k)] += 40.0
            g[iI(k)] += -40.0 * self.I_star
            const += 20.0 * self.I_star ** 2

        num_rows = []
        den_idx = []
        for k in range(N):
            row = np.zeros(grid.n_vars)
            row[iT(k + 2)] = 1.0 / p.dt
            row[iT(k + 1)] = -(1.0 + self.aW) / p.dt
            row[iT(k)] = self.aW / p.dt
            num_rows.append(row)
            den_idx.append(iI(k))
        num_rows = np.array(num_rows)
        den_idx = np.array(den_idx)
        kT, u1s = self.kT, self.u1_star

        def residuals(yv):
            nums = num_rows @ yv
            dens = kT * yv[den_idx]
            return nums / dens - u1s

        def jac(yv):
            nums = num_rows @ yv
            dens = kT * yv[den_idx]
            Jm = num_rows / dens[:, None]
            for j in range(len(den_idx)):
                Jm[j, den_idx[j]] -= nums[j] * kT / dens[j] ** 2
            return Jm

        def smooth_value(yv):
            r = residuals(yv)
            return float(r @ r)

        def smooth_grad(yv):
            r = residuals(yv)
            return 2.0 * jac(yv).T @ r

        def smooth_curv(yv):
            Jm = jac(yv)
            return 2.0 * Jm.T @ Jm

        A_eq, b_eq = eq.matrix()
        A_in, b_in = ineq.matrix()
        return StepPieces(
            grid=grid, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
            H=H, g=g, const=const,
            smooth_objective=SmoothObjective(smooth_value, smooth_grad, smooth_curv),
        )

    def _seed_policy(self, x):
        I_ref = float(np.clip(
            self.p.D * self.omega_ref / self.p.K_y
            + self.seed_gain * (self.omega_ref - x[2]),
            0.05, 4.5,
        ))
        u2 = self.p.R_a * I_ref + self.p.K_y * x[2]
        return np.array([1.0, u2])

    def _compute_seed(self):
        """Fixed field current with a proportional cascade on the voltage."""
        x = self.x_S.copy()
        states, inputs = [x.copy()], []
        settle = 0
        for _ in range(self.max_steps):
            u = self._seed_policy(x)
            inputs.append(u)
            x = self.plant.step(x, u)
            states.append(x.copy())
            err = max(abs(x[2] - self.omega_ref),
                      abs(x[0] - self.p.D * self.omega_ref / self.p.K_y))
            settle = settle + 1 if err <= 0.25 * self.tol_conv else 0
            if settle >= self.consec + 4:
                break
        else:
            raise ConfigError("motor seeding controller did not settle")
        states = np.array(states)
        self._seed = SeedTrajectory(states=states, inputs=np.array(inputs),
                                    outputs=states[:, :2].copy())

    def seed(self) -> SeedTrajectory:
        return self._seed

    def sample_rollout(self, rng, n_steps: int):
        for _ in range(2000):
            x = np.array([rng.uniform(0.05, 5.0), rng.uniform(-2.0, 2.0),
                          rng.uniform(-10.0, 10.0)])
            xs, us = [x], []
            ok = True
            for _ in range(n_steps):
                u = np.array([rng.uniform(-5.0, 5.0), rng.uniform(-30.0, 30.0)])
                nxt = self.plant.step(xs[-1], u)
                if not (0.05 <= nxt[0] <= 5.0 and -10.0 <= nxt[2] <= 10.0):
                    ok = False
                    break
                us.append(u)
                xs.append(nxt)
            if ok:
                return xs[0], np.array(us)
        raise RuntimeError("failed to sample a feasible motor rollout")


# ---------------------------------------------------------------------------
# Kinematic unicycle


class UnicycleExample:
    """Unicycle steered to a target position with speed in the cost.

    Output is the position; heading reconstructs from the displacement
    direction (undefined at zero displacement) and speed from its norm.
    The heading box [-pi/2, pi/2] is equivalent to a nonnegative x
    displacement, which keeps the horizon problem's constraints linear
    apart from the convex quadratic speed cap.
    """

    example_id = "unicycle"
    hybrid = False
    augmented = True

    def __init__(self, N: int = 5, dt: float = 0.1, target=(5.0, 10.0),
                 x_S=(0.0, 0.0, math.pi / 2.0), max_steps: int = 500,
                 tol_conv: float = 1e-4, v_max: float = 5.0,
                 seed_speed: float = 1.0, turn_radius: float = 1.0):
        if N < 1:
            raise ConfigError("prediction horizon N must be >= 1")
        self.N = int(N)
        self.dt = float(dt)
        self.target = np.asarray(target, dtype=float)
        self.x_S = np.asarray(x_S, dtype=float)
        self.max_steps = int(max_steps)
        self.tol_conv = float(tol_conv)
        self.v_max = float(v_max)
        self.seed_speed = float(seed_speed)
        self.turn_radius = float(turn_radius)
        self.consec = 2
        self.tail_len = 1
        self.eps_disp = 1e-8
        self.v_min = 1e-3

        self.plant = LiftedSystem(
            name="unicycle",
            n=3,
            m=2,
            lift_depth=2,
            dynamics=self._dyn,
            output=lambda x: x[:2].copy(),
            state_map=self._state_map,
            input_map=self._input_map,
            state_box=Box.from_intervals([(0.0, None), (None, 10.0),
                                          (-math.pi / 2.0, math.pi / 2.0)]),
            input_box=Box.from_intervals([(0.0, 5.0), None]),
            x_eq=np.array([self.target[0], self.target[1], 0.0]),
            u_eq=np.zeros(2),
            state_halfspaces=(np.array([[1.0, -1.0, 0.0]]), np.array([2.0])),
        )
        self.control_system = augment(self.plant)
        self._seed: Optional[SeedTrajectory] = None
        self.u_S = np.array([self.seed_speed, 0.0])

    def _dyn(self, x, u):
        X, Y, th = x
        v, w = u
        return np.array([
            X + self.dt * v * math.cos(th),
            Y + self.dt * v * math.sin(th),
            th + self.dt * w,
        ])

    def _heading(self, a, b):
        d = b - a
        if float(np.hypot(d[0], d[1])) < self.eps_disp:
            raise MapDomainError("zero displacement: heading is undefined")
        return math.atan2(d[1], d[0])

    def _state_map(self, window):
        th = self._heading(window[:, 0], window[:, 1])
        return np.array([window[0, 0], window[1, 0], th])

    def _input_map(self, lifted):
        d = lifted[:, 1] - lifted[:, 0]
        v = float(np.hypot(d[0], d[1])) / self.dt
        th0 = self._heading(lifted[:, 0], lifted[:, 1])
        th1 = self._heading(lifted[:, 1], lifted[:, 2])
        return np.array([v, (th1 - th0) / self.dt])

    def stage_cost(self, window) -> float:
        d = window[:, 1] - window[:, 0]
        return float(
            20.0 * np.sum((window[:, 0] - self.target) ** 2)
            + (d @ d) / self.dt ** 2
        )

    def deviation(self, window) -> float:
        return float(np.max(np.abs(window - self.target[:, None])))

    def eq_window(self) -> np.ndarray:
        return np.tile(self.target.reshape(2, 1), (1, 3))

    def equilibrium_tail(self, last_window):
        return [self.eq_window()], [self.target.copy()], True

    def window_feasible(self, window, succ_output, slack: float = 1e-9) -> bool:
        """Output-space feasibility for stored points.

        Reconstruction is undefined wherever the vehicle is stopped, but
        every constraint is checkable on outputs alone: the position set is
        linear, the heading box is the sign of the x displacement, and the
        speed bound is the displacement norm.
        """
        cols = np.hstack([window, np.asarray(succ_output, float).reshape(2, 1)])
        for j in range(cols.shape[1] - 1):  # the successor is checked as its own window
            x, y = cols[0, j], cols[1, j]
            if x < -slack or y > 10.0 + slack or x - y > 2.0 + slack:
                return False
        for j in range(cols.shape[1] - 1):
            d = cols[:, j + 1] - cols[:, j]
            if d[0] < -slack:
                return False
            if np.hypot(d[0], d[1]) / self.dt > self.v_max + slack:
                return False
        return True

    def initial_control_state(self, x_plant) -> np.ndarray:
        return np.concatenate([np.asarray(x_plant, float), self.u_S])

    def extract_input(self, lifted, x_ctrl) -> np.ndarray:
        """Next input from the planned outputs, total at zero displacement.

        The strict reconstruction is undefined when the plan stops; here a
        vanished displacement inherits the heading the plant will actually
        have (current heading plus the already-committed turn), which makes
        stop-and-stay plans executable with zero turn rate.
        """
        c = lifted
        d1 = c[:, 2] - c[:, 1]
        d2 = c[:, 3] - c[:, 2]
        phi = x_ctrl[2] + self.dt * x_ctrl[4]
        h1 = math.atan2(d1[1], d1[0]) if np.hypot(*d1) >= self.eps_disp else phi
        h2 = math.atan2(d2[1], d2[0]) if np.hypot(*d2) >= self.eps_disp else h1
        v1 = float(np.hypot(*d1)) / self.dt
        return np.array([v1, (h2 - h1) / self.dt])

    def step_pieces(self, x_ctrl, mode_seq=None) -> StepPieces:
        N, dt = self.N, self.dt
        grid = OutputGrid(m=2, n_cols=N + 3, depth=3)
        iX = lambda k: grid.idx(k, 0)
        iY = lambda k: grid.idx(k, 1)
        X0, Y0, th0, v0, w0 = x_ctrl

        eq = RowBuilder(grid.n_vars)
        eq.add([(iX(0), 1.0)], X0)
        eq.add([(iY(0), 1.0)], Y0)
        eq.add([(iX(1), 1.0)], X0 + dt * v0 * math.cos(th0))
        eq.add([(iY(1), 1.0)], Y0 + dt * v0 * math.sin(th0))
        phi = th0 + dt * w0
        # second displacement lies on the ray with heading phi
        eq.add([(iX(2), math.sin(phi)), (iX(1), -math.sin(phi)),
                (iY(2), -math.cos(phi)), (iY(1), math.cos(phi))], 0.0)
        ineq = RowBuilder(grid.n_vars)
        ineq.add([(iX(2), -math.cos(phi)), (iX(1), math.cos(phi)),
                  (iY(2), -math.sin(phi)), (iY(1), math.sin(phi))], 0.0)
        for k in range(N):
            ineq.add([(iX(k), -1.0)], 0.0)
            ineq.add([(iY(k), 1.0)], 10.0)
            ineq.add([(iX(k), 1.0), (iY(k), -1.0)], 2.0)
            ineq.add([(iX(k + 1), -1.0), (iX(k), 1.0)], 0.0)

        H = np.zeros((grid.n_vars, grid.n_vars))
        g = np.zeros(grid.n_vars)
        const = 0.0
        for k in range(N):
            for comp, tval in ((0, self.target[0]), (1, self.target[1])):
                i = grid.idx(k, comp)
                H[i, i] += 40.0
                g[i] += -40.0 * tval
                const += 20.0 * tval ** 2
                j = grid.idx(k + 1, comp)
                H[i, i] += 2.0 / dt ** 2
                H[j, j] += 2.0 / dt ** 2
                H[i, j] += -2.0 / dt ** 2
                H[j, i] += -2.0 / dt ** 2

        cap = (self.v_max * dt) ** 2

        def g_val(yv):
            pts = yv.reshape(grid.n_cols, 2)
            d = pts[1 : N + 1] - pts[:N]
            return np.sum(d * d, axis=1) - cap

        def g_jac(yv):
            pts = yv.reshape(grid.n_cols, 2)
            Jm = np.zeros((N, grid.n_vars))
            for k in range(N):
                d = pts[k + 1] - pts[k]
                Jm[k, iX(k + 1)] = 2.0 * d[0]
                Jm[k, iY(k + 1)] = 2.0 * d[1]
                Jm[k, iX(k)] = -2.0 * d[0]
                Jm[k, iY(k)] = -2.0 * d[1]
            return Jm

        A_eq, b_eq = eq.matrix()
        A_in, b_in = ineq.matrix()
        return StepPieces(
            grid=grid, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
            H=H, g=g, const=const,
            smooth_ineq=SmoothInequality(g_val, g_jac),
        )

    def seed(self) -> SeedTrajectory:
        """L-shaped route: up the y axis, quarter turn, along y = 10."""
        if self._seed is not None:
            return self._seed
        dt, r, v = self.dt, self.turn_radius, self.seed_speed
        x = self.x_S.copy()
        states, inputs = [x.copy()], []
        phase = "up"
        for _ in range(self.max_steps):
            X, Y, th = x
            dist = float(np.hypot(*(self.target - x[:2])))
            if dist <= 0.3 * self.tol_conv:
                break
            if phase == "up" and Y >= 10.0 - r - 0.15:
                phase = "turn"
            if phase == "turn" and th <= 1e-9:
                phase = "cruise"
            if phase == "up":
                u = np.array([v, 0.0])
            elif phase == "turn":
                w = max(-v / r, (0.0 - th) / dt)
                u = np.array([v, w])
            else:
                tgt_th = math.atan2(self.target[1] - Y, self.target[0] - X)
                tgt_th = float(np.clip(tgt_th, -math.pi / 2, math.pi / 2))
                w = float(np.clip((tgt_th - th) / dt, -v / r, v / r))
                speed = float(np.clip(0.6 * dist / dt, 0.0, v))
                u = np.array([speed, w])
            inputs.append(u)
            x = self.plant.step(x, u)
            states.append(x.copy())
        else:
            raise ConfigError("unicycle seeding controller did not reach the target")
        # hold position so the convergence window fills up
        for _ in range(self.consec + 4):
            inputs.append(np.zeros(2))
            states.append(states[-1].copy())
        states = np.array(states)
        for s in states:
            if not self.plant.state_feasible(s, slack=1e-9):
                raise ConfigError(f"unicycle seed left the state constraints at {s}")
        self._seed = SeedTrajectory(states=states, inputs=np.array(inputs),
                                    outputs=states[:, :2].copy())
        return self._seed

    def sample_rollout(self, rng, n_steps: int):
        for _ in range(2000):
            X = rng.uniform(0.0, 6.0)
            Y = rng.uniform(max(X - 2.0, -3.0) + 0.05, 10.0)
            th = rng.uniform(-math.pi / 2, math.pi / 2)
            x = np.array([X, Y, th])
            xs, us = [x], []
            ok = True
            for _ in range(n_steps):
                u = np.array([rng.uniform(0.05, 5.0), rng.uniform(-3.0, 3.0)])
                nxt = self.plant.step(xs[-1], u)
                if not self.plant.state_feasible(nxt):
                    ok = False
                    break
                us.append(u)
                xs.append(nxt)
            if ok:
                return xs[0], np.array(us)
        raise RuntimeError("failed to sample a feasible unicycle rollout")


# ---------------------------------------------------------------------------
# registry and config handling

EXAMPLES = {
    "pwa": PwaExample,
    "dc_motor": DcMotorExample,
    "unicycle": UnicycleExample,
}

_COMMON_KEYS = {"N", "x_S", "max_steps", "tol_conv", "j_max"}
_EXTRA_KEYS = {
    "pwa": {"seed_horizon", "seed_input_weight"},
    "dc_motor": {"params", "omega_ref", "tail_len", "seed_gain", "current_floor"},
    "unicycle": {"dt", "target", "v_max", "seed_speed", "turn_radius"},
}


def register_example(example_id: str, factory) -> None:
    EXAMPLES[example_id] = factory


def build(example_id: str, overrides: Optional[dict] = None):
    """Construct a validated example instance; raises ConfigError on bad input."""
    if example_id not in EXAMPLES:
        raise ConfigError(f"unknown example {example_id!r}")
    overrides = dict(overrides or {})
    overrides.pop("j_max", None)  # consumed by the campaign runner
    allowed = _COMMON_KEYS | _EXTRA_KEYS.get(example_id, set())
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(f"unknown override keys {sorted(unknown)} for {example_id!r}")
    if example_id == "dc_motor" and "params" in overrides:
        try:
            overrides["params"] = MotorParams(**overrides["params"])
        except TypeError as exc:
            raise ConfigError(f"bad motor params: {exc}") from None
    try:
        return EXAMPLES[example_id](**overrides)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid overrides for {example_id!r}: {exc}") from None
