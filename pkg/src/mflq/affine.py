"""Adjoint offset equations and the affine part of the optimal control.

With noise-affine inhomogeneities (each of the form f0(s) + f1(s) W(s)) the
backward adjoint equation closes inside the same family: its solution is
adjoint_const(s) + adjoint_noise(s) W(s), where the two coefficient paths
solve linear backward ODEs driven by the Riccati solution.  A separate mean
adjoint handles the expectation channel.  The control offset that these
induce splits the same way: a mean part and a coefficient multiplying the
running Brownian value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from typing import Optional

from . import linalg
from .errors import FiniteEscapeError
from .problem import ProblemData, TimeGrid, nodes_and_midpoints
from .riccati import (
    BLOWUP_NORM,
    DEFAULT_REG_TOL,
    GreSolution,
    MidpointData,
    dense_midpoints,
    hermite_midpoints,
)


@dataclass(frozen=True)
class CorrectionSet:
    """Affine control offsets plus their pointwise attainability verdict.

    corr_noise multiplies the running Brownian value; corr_mean is the
    deterministic offset of the mean control channel.  Attainability asks
    that the vectors being pseudo-inverted lie in the range of the
    corresponding input weight at every node.
    """

    corr_noise: np.ndarray
    corr_mean: np.ndarray
    feasible: bool
    worst_dev_node: int
    worst_dev_residual: float
    worst_mean_node: int
    worst_mean_residual: float
    tol: float


@dataclass(frozen=True)
class AffineSolution:
    grid: TimeGrid
    adjoint_const: np.ndarray
    adjoint_noise: np.ndarray
    adjoint_mean: np.ndarray
    corrections: CorrectionSet

    @property
    def feasible(self) -> bool:
        return self.corrections.feasible


def _check_finite(name, v, node, time):
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm > BLOWUP_NORM:
        raise FiniteEscapeError(name, node, time, norm)


def _backward_rk4(grid: TimeGrid, rhs_node, rhs_mid, terminal, name):
    """Integrate dy/ds = f(s, y) backward with fixed-step RK4.

    rhs_node(k, y) and rhs_mid(k, y) evaluate f with coefficients frozen at
    node k / midpoint k.  Returns y at every node, terminal included.
    """
    K = grid.n_steps
    h = grid.h
    nodes = grid.nodes
    out = np.empty((K + 1,) + np.shape(terminal))
    out[K] = terminal
    for k in range(K, 0, -1):
        y = out[k]
        f1 = rhs_node(k, y)
        f2 = rhs_mid(k - 1, y - 0.5 * h * f1)
        f3 = rhs_mid(k - 1, y - 0.5 * h * f2)
        f4 = rhs_node(k - 1, y - h * f3)
        out[k - 1] = y - (h / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
        _check_finite(name, out[k - 1], k - 1, nodes[k - 1])
    return out


def _coeff_samples(p: ProblemData, grid: TimeGrid, names):
    node, mid = {}, {}
    for name in names:
        path = getattr(p, name)
        node[name], mid[name] = nodes_and_midpoints(path, grid)
    return node, mid


def _noise_samples(p: ProblemData, grid: TimeGrid, names):
    node, mid = {}, {}
    for name in names:
        na = getattr(p, name)
        c_n, c_m = nodes_and_midpoints(na.const_part, grid)
        w_n, w_m = nodes_and_midpoints(na.noise_part, grid)
        node[name] = (c_n, w_n)
        mid[name] = (c_m, w_m)
    return node, mid


def solve_adjoint(
    p: ProblemData, sol: GreSolution, mids: Optional[MidpointData] = None
):
    """Solve the pathwise adjoint offset ODE pair backward.

    Returns (adjoint_const, adjoint_noise), each of shape (K+1, n).  The
    noise coefficient's equation is autonomous in the pair; the constant
    part is driven by it, so both integrate together as one stacked state.
    """
    grid = sol.grid
    cn, cm = _coeff_samples(p, grid, ("A", "B", "C", "D"))
    nn, nm = _noise_samples(p, grid, ("b", "sigma", "q", "rho"))

    if mids is None:
        mids = dense_midpoints(p, sol)
    P_n, P_m = sol.P, mids.P
    Th_n, Th_m = sol.gain_dev, mids.gain_dev

    def make_rhs(coeff, noise, P_arr, Th_arr):
        def rhs(k, y):
            eta0, eta1 = y
            A, B, C, D = coeff["A"][k], coeff["B"][k], coeff["C"][k], coeff["D"][k]
            P, Th = P_arr[k], Th_arr[k]
            b0, b1 = noise["b"][0][k], noise["b"][1][k]
            s0, s1 = noise["sigma"][0][k], noise["sigma"][1][k]
            q0, q1 = noise["q"][0][k], noise["q"][1][k]
            r0, r1 = noise["rho"][0][k], noise["rho"][1][k]
            F = A + B @ Th
            H = C + D @ Th
            d1 = -(F.T @ eta1 + H.T @ (P @ s1) + Th.T @ r1 + P @ b1 + q1)
            d0 = -(
                F.T @ eta0 + H.T @ eta1 + H.T @ (P @ s0)
                + Th.T @ r0 + P @ b0 + q0
            )
            return np.stack([d0, d1])
        return rhs

    rhs_node = make_rhs(cn, nn, P_n, Th_n)
    rhs_mid = make_rhs(cm, nm, P_m, Th_m)
    terminal = np.stack([p.g0, p.g1])
    out = _backward_rk4(grid, rhs_node, rhs_mid, terminal, "adjoint offset")
    return out[:, 0, :], out[:, 1, :]


def _adjoint_noise_midpoints(
    p: ProblemData, sol: GreSolution, adjoint_noise: np.ndarray
) -> np.ndarray:
    """Hermite midpoints of the noise adjoint from its own nodal derivative."""
    grid = sol.grid
    K = grid.n_steps
    cn, _ = _coeff_samples(p, grid, ("A", "B", "C", "D"))
    nn, _ = _noise_samples(p, grid, ("b", "sigma", "q", "rho"))
    deriv = np.empty_like(adjoint_noise)
    for k in range(K + 1):
        F = cn["A"][k] + cn["B"][k] @ sol.gain_dev[k]
        H = cn["C"][k] + cn["D"][k] @ sol.gain_dev[k]
        deriv[k] = -(
            F.T @ adjoint_noise[k]
            + H.T @ (sol.P[k] @ nn["sigma"][1][k])
            + sol.gain_dev[k].T @ nn["rho"][1][k]
            + sol.P[k] @ nn["b"][1][k]
            + nn["q"][1][k]
        )
    return hermite_midpoints(adjoint_noise, deriv, grid.h)


def solve_adjoint_mean(
    p: ProblemData,
    sol: GreSolution,
    adjoint_noise: np.ndarray,
    mids: Optional[MidpointData] = None,
) -> np.ndarray:
    """Solve the mean-channel adjoint ODE backward; returns (K+1, n).

    The drift couples to the already-solved noise coefficient of the
    pathwise adjoint (its expectation against the running Brownian value is
    what survives in the mean dynamics).
    """
    grid = sol.grid
    cn, cm = _coeff_samples(
        p, grid,
        ("A", "A_bar", "B", "B_bar", "C", "C_bar", "D", "D_bar",
         "q_bar", "rho_bar"),
    )
    nn, nm = _noise_samples(p, grid, ("b", "sigma", "q", "rho"))

    if mids is None:
        mids = dense_midpoints(p, sol)
    P_n, P_m = sol.P, mids.P
    Pm_n, Pm_m = sol.P_mean, mids.P_mean
    Ga_n, Ga_m = sol.gain_mean, mids.gain_mean
    e1_n = adjoint_noise
    e1_m = _adjoint_noise_midpoints(p, sol, adjoint_noise)

    def make_rhs(coeff, noise, P_arr, Pm_arr, Ga_arr, e1_arr):
        def rhs(k, eta_bar):
            A = coeff["A"][k] + coeff["A_bar"][k]
            B = coeff["B"][k] + coeff["B_bar"][k]
            C = coeff["C"][k] + coeff["C_bar"][k]
            D = coeff["D"][k] + coeff["D_bar"][k]
            P, Pm, Ga, e1 = P_arr[k], Pm_arr[k], Ga_arr[k], e1_arr[k]
            b0 = noise["b"][0][k]
            s0 = noise["sigma"][0][k]
            q0 = noise["q"][0][k]
            r0 = noise["rho"][0][k]
            qb = coeff["q_bar"][k]
            rb = coeff["rho_bar"][k]
            carrier = P @ s0 + e1
            return -(
                (A + B @ Ga).T @ eta_bar
                + Ga.T @ (D.T @ carrier + r0 + rb)
                + C.T @ carrier
                + q0 + qb
                + Pm @ b0
            )
        return rhs

    rhs_node = make_rhs(cn, nn, P_n, Pm_n, Ga_n, e1_n)
    rhs_mid = make_rhs(cm, nm, P_m, Pm_m, Ga_m, e1_m)
    terminal = p.g0 + p.g_bar
    return _backward_rk4(grid, rhs_node, rhs_mid, terminal, "mean adjoint offset")


def compute_corrections(
    p: ProblemData,
    sol: GreSolution,
    adjoint_const: np.ndarray,
    adjoint_noise: np.ndarray,
    adjoint_mean: np.ndarray,
    tol: float = DEFAULT_REG_TOL,
) -> CorrectionSet:
    """Affine control offsets from the adjoint paths, with attainability.

    Nodewise pseudo-inverse solves; each right-hand-side vector is also
    range-checked against its input weight, and the worst residual per
    channel is recorded.  The adjoint_const argument participates only
    through the solvability contract (the offsets depend on the noise and
    mean adjoints); it is accepted so the full adjoint triple travels
    together.
    """
    del adjoint_const
    grid = sol.grid
    K = grid.n_steps
    m = p.m
    B_n, _ = nodes_and_midpoints(p.B, grid)
    Bb_n, _ = nodes_and_midpoints(p.B_bar, grid)
    D_n, _ = nodes_and_midpoints(p.D, grid)
    Db_n, _ = nodes_and_midpoints(p.D_bar, grid)
    s1_n, _ = nodes_and_midpoints(p.sigma.noise_part, grid)
    s0_n, _ = nodes_and_midpoints(p.sigma.const_part, grid)
    r1_n, _ = nodes_and_midpoints(p.rho.noise_part, grid)
    r0_n, _ = nodes_and_midpoints(p.rho.const_part, grid)
    rb_n, _ = nodes_and_midpoints(p.rho_bar, grid)

    corr_noise = np.empty((K + 1, m))
    corr_mean = np.empty((K + 1, m))
    worst_dev = (-np.inf, 0)
    worst_mean = (-np.inf, 0)
    for k in range(K + 1):
        W = sol.input_weight[k]
        target = (
            B_n[k].T @ adjoint_noise[k]
            + D_n[k].T @ (sol.P[k] @ s1_n[k])
            + r1_n[k]
        )
        corr_noise[k] = -(linalg.pinv(W).pinv @ target)
        r = linalg.range_residual(target[:, None], W)
        if r > worst_dev[0]:
            worst_dev = (r, k)

        Wm = sol.input_weight_mean[k]
        Dm = D_n[k] + Db_n[k]
        carrier = sol.P[k] @ s0_n[k] + adjoint_noise[k]
        target_m = (
            (B_n[k] + Bb_n[k]).T @ adjoint_mean[k]
            + Dm.T @ carrier
            + r0_n[k] + rb_n[k]
        )
        corr_mean[k] = -(linalg.pinv(Wm).pinv @ target_m)
        rm = linalg.range_residual(target_m[:, None], Wm)
        if rm > worst_mean[0]:
            worst_mean = (rm, k)

    return CorrectionSet(
        corr_noise=corr_noise,
        corr_mean=corr_mean,
        feasible=(worst_dev[0] <= tol and worst_mean[0] <= tol),
        worst_dev_node=worst_dev[1],
        worst_dev_residual=worst_dev[0],
        worst_mean_node=worst_mean[1],
        worst_mean_residual=worst_mean[0],
        tol=tol,
    )


def solve_affine(
    p: ProblemData, sol: GreSolution, tol: float = DEFAULT_REG_TOL
) -> AffineSolution:
    """Full affine stage: adjoint triple plus control offsets."""
    mids = dense_midpoints(p, sol)
    adjoint_const, adjoint_noise = solve_adjoint(p, sol, mids=mids)
    adjoint_mean = solve_adjoint_mean(p, sol, adjoint_noise, mids=mids)
    corrections = compute_corrections(
        p, sol, adjoint_const, adjoint_noise, adjoint_mean, tol=tol
    )
    return AffineSolution(
        grid=sol.grid,
        adjoint_const=adjoint_const,
        adjoint_noise=adjoint_noise,
        adjoint_mean=adjoint_mean,
        corrections=corrections,
    )
