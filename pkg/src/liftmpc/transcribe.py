"""Output-grid form of the receding-horizon problem.

Because state and input are functions of consecutive outputs, the
horizon problem is posed over a grid of future outputs plus barycentric
weights, instead of over inputs with a dynamics rollout.  The two forms
are related by a bijection, and the grid form turns dynamics into
bookkeeping: examples only contribute linear rows (initial coupling,
path constraints), a quadratic objective block, and optional smooth
terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class OutputGrid:
    """Flattened grid of output columns y_0 .. y_{n_cols-1}.

    Variable layout is column major: component c of output k sits at
    ``k * m + c``.  Windows of width `depth` slide along the grid; the
    terminal window starts at column N = n_cols - depth.
    """

    m: int
    n_cols: int
    depth: int

    @property
    def n_vars(self) -> int:
        return self.m * self.n_cols

    @property
    def N(self) -> int:
        return self.n_cols - self.depth

    def idx(self, col: int, comp: int = 0) -> int:
        return col * self.m + comp

    def col_slice(self, col: int) -> slice:
        return slice(col * self.m, (col + 1) * self.m)

    def window(self, yv: np.ndarray, k: int) -> np.ndarray:
        """Window of `depth` consecutive outputs starting at column k."""
        return yv.reshape(self.n_cols, self.m)[k : k + self.depth].T

    def terminal_indices(self) -> np.ndarray:
        """Flat variable indices of the terminal window, column major."""
        N = self.N
        return np.concatenate([np.arange(self.m) + self.idx(N + j) for j in range(self.depth)])


@dataclass
class SmoothObjective:
    """Extra smooth objective term with gradient and a PSD curvature model."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    curvature: Callable[[np.ndarray], np.ndarray]


@dataclass
class SmoothInequality:
    """Smooth constraint block g(yv) <= 0 with analytic Jacobian."""

    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


@dataclass
class StepPieces:
    """Everything an example contributes to one horizon problem."""

    grid: OutputGrid
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    H: np.ndarray
    g: np.ndarray
    const: float = 0.0
    smooth_objective: Optional[SmoothObjective] = None
    smooth_ineq: Optional[SmoothInequality] = None


class RowBuilder:
    """Accumulates sparse-ish rows over the flat grid variables."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.rows: list[np.ndarray] = []
        self.rhs: list[float] = []

    def add(self, idx_coeffs, rhs: float) -> None:
        row = np.zeros(self.n_vars)
        for i, c in idx_coeffs:
            row[i] += c
        self.rows.append(row)
        self.rhs.append(float(rhs))

    def matrix(self):
        if not self.rows:
            return np.zeros((0, self.n_vars)), np.zeros(0)
        return np.array(self.rows), np.array(self.rhs)
