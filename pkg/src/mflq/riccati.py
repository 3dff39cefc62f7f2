"""Backward integration of the coupled Riccati pair and regularity analysis.

The deviation channel matrix P weighs fluctuations of the state around its
mean; the mean channel matrix weighs the mean itself and is coupled to P
through the diffusion terms.  Both equations share one algebraic shape, so a
single right-hand-side helper serves the two channels: the mean channel
simply receives the summed (coefficient + mean-coefficient) matrices and P
as the inner diffusion weight.  A consequence worth keeping: when every
mean-coupling coefficient vanishes the two channels perform identical float
operations, so their outputs agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import linalg
from .errors import FiniteEscapeError
from .problem import MatrixPath, ProblemData, TimeGrid, nodes_and_midpoints
from .quadrature import trapezoid

# Frobenius-norm threshold beyond which the backward sweep is declared to
# have escaped in finite time.
BLOWUP_NORM = 1e12

# A retained singular value within this factor of the pinv cutoff marks the
# node as numerically ambiguous for the rank decision.
NEAR_CUTOFF_FACTOR = 10.0

DEFAULT_REG_TOL = 1e-8

_COEFF_NAMES = (
    "A", "A_bar", "B", "B_bar", "C", "C_bar", "D", "D_bar",
    "Q", "Q_bar", "S", "S_bar", "R", "R_bar",
)


@dataclass(frozen=True)
class ConditionVerdict:
    """Outcome of one regularity condition scanned over all grid nodes."""

    name: str
    passed: bool
    worst_node: int
    worst_value: float
    tolerance: float


@dataclass(frozen=True)
class RegularityReport:
    regular: bool
    conditions: tuple
    n_steps: int
    tol: float
    dev_rank: np.ndarray
    mean_rank: np.ndarray
    near_cutoff_dev: tuple
    near_cutoff_mean: tuple

    def condition(self, name: str) -> ConditionVerdict:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class GreSolution:
    """Nodewise Riccati data on a uniform grid.

    P / P_mean: the two Riccati matrices, (K+1, n, n).
    input_weight / input_weight_mean: effective control curvature of each
        channel, (K+1, m, m).
    cross_term / cross_term_mean: control-state cross blocks whose ranges
        must sit inside the corresponding input weight's range, (K+1, m, n).
    gain_dev / gain_mean: feedback gains, minus pseudo-inverse of the input
        weight applied to the cross term, (K+1, m, n).
    """

    grid: TimeGrid
    P: np.ndarray
    P_mean: np.ndarray
    input_weight: np.ndarray
    input_weight_mean: np.ndarray
    cross_term: np.ndarray
    cross_term_mean: np.ndarray
    gain_dev: np.ndarray
    gain_mean: np.ndarray
    dev_rank: np.ndarray
    mean_rank: np.ndarray
    dev_smallest_retained: np.ndarray
    mean_smallest_retained: np.ndarray
    dev_cutoff: np.ndarray
    mean_cutoff: np.ndarray
    report: Optional[RegularityReport]


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _channel_rhs(M, P_inner, A, B, C, D, Q, S, R, rtol):
    """Time derivative of one Riccati channel at one instant.

    Solves  dM/ds = cross^T W^+ cross - (M A + A^T M + C^T P_inner C + Q)
    with W = R + D^T P_inner D and cross = B^T M + D^T P_inner C + S.
    """
    PC = P_inner @ C
    PD = P_inner @ D
    W = R + D.T @ PD
    cross = B.T @ M + PD.T @ C + S
    quad = cross.T @ (linalg.pinv(W, rtol=rtol).pinv @ cross)
    lin = M @ A + A.T @ M + C.T @ PC + Q
    return _sym(quad - lin)


def _rhs_pair(P, P_mean, at, rtol=linalg.DEFAULT_RTOL):
    """Right-hand sides of both channels given coefficients at one time."""
    (A, Ab, B, Bb, C, Cb, D, Db, Q, Qb, S, Sb, R, Rb) = at
    dP = _channel_rhs(P, P, A, B, C, D, Q, S, R, rtol)
    dPm = _channel_rhs(
        P_mean, P, A + Ab, B + Bb, C + Cb, D + Db, Q + Qb, S + Sb, R + Rb, rtol
    )
    return dP, dPm


def gre_rhs(P, P_mean, s: float, p: ProblemData):
    """Coupled Riccati right-hand sides (dP/ds, dP_mean/ds) at time s."""
    P = np.asarray(P, dtype=float)
    P_mean = np.asarray(P_mean, dtype=float)
    at = tuple(getattr(p, name).at(s) for name in _COEFF_NAMES)
    return _rhs_pair(P, P_mean, at)


def _channel_gain(P_inner, M, B, C, D, S, R):
    """Input weight, cross term, gain and rank data of one channel.

    M is the channel's own Riccati matrix; P_inner is the deviation matrix,
    which both channels carry inside their quadratic terms.
    """
    PD = P_inner @ D
    weight = _sym(R + D.T @ PD)
    cross = B.T @ M + PD.T @ C + S
    res = linalg.pinv(weight)
    return weight, cross, -(res.pinv @ cross), res


def _check_finite(name, M, node, time):
    norm = float(np.linalg.norm(M))
    if not np.isfinite(norm) or norm > BLOWUP_NORM:
        raise FiniteEscapeError(name, node, time, norm)


def integrate_gre(p: ProblemData, n_steps: Optional[int] = None) -> GreSolution:
    """Integrate both Riccati channels backward from the terminal weights.

    Classical fixed-step fourth-order Runge-Kutta on a uniform grid, with
    the matrices re-symmetrized after every step.  Gains and feasibility
    data are evaluated at every node afterwards, and a regularity report at
    the default tolerance is attached.
    """
    grid = p.horizon if n_steps is None else p.horizon.with_steps(n_steps)
    K = grid.n_steps
    h = grid.h
    nodes = grid.nodes
    n, m = p.n, p.m

    coeff_nodes = {}
    coeff_mids = {}
    for name in _COEFF_NAMES:
        cn, cm = nodes_and_midpoints(getattr(p, name), grid)
        coeff_nodes[name] = cn
        coeff_mids[name] = cm

    def at_node(k):
        return tuple(coeff_nodes[name][k] for name in _COEFF_NAMES)

    def at_mid(k):
        return tuple(coeff_mids[name][k] for name in _COEFF_NAMES)

    P = np.empty((K + 1, n, n))
    Pm = np.empty((K + 1, n, n))
    P[K] = _sym(p.G)
    Pm[K] = _sym(p.G + p.G_bar)

    for k in range(K, 0, -1):
        y1, z1 = P[k], Pm[k]
        f1 = _rhs_pair(y1, z1, at_node(k))
        y2 = y1 - 0.5 * h * f1[0]
        z2 = z1 - 0.5 * h * f1[1]
        f2 = _rhs_pair(y2, z2, at_mid(k - 1))
        y3 = y1 - 0.5 * h * f2[0]
        z3 = z1 - 0.5 * h * f2[1]
        f3 = _rhs_pair(y3, z3, at_mid(k - 1))
        y4 = y1 - h * f3[0]
        z4 = z1 - h * f3[1]
        f4 = _rhs_pair(y4, z4, at_node(k - 1))
        P[k - 1] = _sym(y1 - (h / 6.0) * (f1[0] + 2 * f2[0] + 2 * f3[0] + f4[0]))
        Pm[k - 1] = _sym(z1 - (h / 6.0) * (f1[1] + 2 * f2[1] + 2 * f3[1] + f4[1]))
        _check_finite("deviation Riccati matrix", P[k - 1], k - 1, nodes[k - 1])
        _check_finite("mean Riccati matrix", Pm[k - 1], k - 1, nodes[k - 1])

    weight = np.empty((K + 1, m, m))
    weight_mean = np.empty((K + 1, m, m))
    cross = np.empty((K + 1, m, n))
    cross_mean = np.empty((K + 1, m, n))
    gain_dev = np.empty((K + 1, m, n))
    gain_mean = np.empty((K + 1, m, n))
    dev_rank = np.empty(K + 1, dtype=int)
    mean_rank = np.empty(K + 1, dtype=int)
    dev_smin = np.empty(K + 1)
    mean_smin = np.empty(K + 1)
    dev_cut = np.empty(K + 1)
    mean_cut = np.empty(K + 1)

    for k in range(K + 1):
        (A, Ab, B, Bb, C, Cb, D, Db, Q, Qb, S, Sb, R, Rb) = at_node(k)
        weight[k], cross[k], gain_dev[k], res = _channel_gain(
            P[k], P[k], B, C, D, S, R
        )
        dev_rank[k] = res.rank
        dev_smin[k] = res.smallest_retained
        dev_cut[k] = res.cutoff

        weight_mean[k], cross_mean[k], gain_mean[k], res_m = _channel_gain(
            P[k], Pm[k], B + Bb, C + Cb, D + Db, S + Sb, R + Rb
        )
        mean_rank[k] = res_m.rank
        mean_smin[k] = res_m.smallest_retained
        mean_cut[k] = res_m.cutoff

    sol = GreSolution(
        grid=grid,
        P=P,
        P_mean=Pm,
        input_weight=weight,
        input_weight_mean=weight_mean,
        cross_term=cross,
        cross_term_mean=cross_mean,
        gain_dev=gain_dev,
        gain_mean=gain_mean,
        dev_rank=dev_rank,
        mean_rank=mean_rank,
        dev_smallest_retained=dev_smin,
        mean_smallest_retained=mean_smin,
        dev_cutoff=dev_cut,
        mean_cutoff=mean_cut,
        report=None,
    )
    return replace(sol, report=assess_regularity(sol, p))


@dataclass(frozen=True)
class MidpointData:
    """Interval-midpoint samples of the Riccati data, one per grid step.

    Plain two-point averages of the nodal matrices are only second order,
    which would quietly cap the accuracy of any downstream integrator fed
    with them.  These samples come from cubic Hermite dense output (nodal
    values corrected by nodal derivatives), matching the order of the
    Riccati integration itself, and the gains are recomputed from the
    corrected matrices rather than interpolated.
    """

    P: np.ndarray
    P_mean: np.ndarray
    gain_dev: np.ndarray
    gain_mean: np.ndarray


def hermite_midpoints(values: np.ndarray, deriv: np.ndarray, h: float) -> np.ndarray:
    """Midpoint of each interval from nodal values and nodal derivatives."""
    return 0.5 * (values[:-1] + values[1:]) + 0.125 * h * (deriv[:-1] - deriv[1:])


def dense_midpoints(p: ProblemData, sol: GreSolution) -> MidpointData:
    """Fourth-order midpoint samples of P, P_mean and the gains."""
    grid = sol.grid
    K = grid.n_steps
    h = grid.h
    n, m = p.n, p.m

    coeff_nodes = {}
    coeff_mids = {}
    for name in _COEFF_NAMES:
        cn, cm = nodes_and_midpoints(getattr(p, name), grid)
        coeff_nodes[name] = cn
        coeff_mids[name] = cm

    dP = np.empty_like(sol.P)
    dPm = np.empty_like(sol.P_mean)
    for k in range(K + 1):
        at = tuple(coeff_nodes[name][k] for name in _COEFF_NAMES)
        dP[k], dPm[k] = _rhs_pair(sol.P[k], sol.P_mean[k], at)

    P_mid = hermite_midpoints(sol.P, dP, h)
    Pm_mid = hermite_midpoints(sol.P_mean, dPm, h)

    gd = np.empty((K, m, n))
    gm = np.empty((K, m, n))
    for k in range(K):
        (A, Ab, B, Bb, C, Cb, D, Db, Q, Qb, S, Sb, R, Rb) = tuple(
            coeff_mids[name][k] for name in _COEFF_NAMES
        )
        _, _, gd[k], _ = _channel_gain(P_mid[k], P_mid[k], B, C, D, S, R)
        _, _, gm[k], _ = _channel_gain(
            P_mid[k], Pm_mid[k], B + Bb, C + Cb, D + Db, S + Sb, R + Rb
        )
    return MidpointData(P=P_mid, P_mean=Pm_mid, gain_dev=gd, gain_mean=gm)


def _psd_verdict(name, stack, tol):
    worst_node = 0
    worst = np.inf
    for k, M in enumerate(stack):
        _, lam = linalg.is_psd(M, tol=tol)
        if lam < worst:
            worst = lam
            worst_node = k
    return ConditionVerdict(name, worst >= -tol, worst_node, worst, tol)


def _range_verdict(name, targets, weights, tol):
    worst_node = 0
    worst = -np.inf
    for k in range(targets.shape[0]):
        r = linalg.range_residual(targets[k], weights[k])
        if r > worst:
            worst = r
            worst_node = k
    return ConditionVerdict(name, worst <= tol, worst_node, worst, tol)


def _l2_verdict(name, gains, h, tol):
    sq = np.sum(gains * gains, axis=(1, 2))
    finite = bool(np.all(np.isfinite(sq)))
    integral = trapezoid(sq, h) if finite else np.inf
    worst_node = int(np.argmax(sq)) if finite else int(np.argmax(~np.isfinite(sq)))
    return ConditionVerdict(
        name, finite and np.isfinite(integral), worst_node, float(integral), tol
    )


def _near_cutoff_nodes(smin, cutoff):
    flagged = []
    for k in range(smin.shape[0]):
        if smin[k] > 0.0 and smin[k] < NEAR_CUTOFF_FACTOR * cutoff[k]:
            flagged.append(k)
    return tuple(flagged)


def assess_regularity(
    sol: GreSolution, p: ProblemData, tol: float = DEFAULT_REG_TOL
) -> RegularityReport:
    """Scan every node for the six closed-loop solvability conditions.

    Positive semidefiniteness and range containment are checked on both
    input weights; square integrability of the gains is certified by finite
    nodewise gains together with a finite trapezoid integral of their
    squared Frobenius norms (a surrogate that is the best a fixed grid can
    assert, hence the report also records the grid resolution).
    """
    h = sol.grid.h
    conditions = (
        _psd_verdict("psd_dev", sol.input_weight, tol),
        _psd_verdict("psd_mean", sol.input_weight_mean, tol),
        _range_verdict("range_dev", sol.cross_term, sol.input_weight, tol),
        _range_verdict("range_mean", sol.cross_term_mean, sol.input_weight_mean, tol),
        _l2_verdict("l2_gain_dev", sol.gain_dev, h, tol),
        _l2_verdict("l2_gain_mean", sol.gain_mean, h, tol),
    )
    return RegularityReport(
        regular=all(c.passed for c in conditions),
        conditions=conditions,
        n_steps=sol.grid.n_steps,
        tol=tol,
        dev_rank=sol.dev_rank,
        mean_rank=sol.mean_rank,
        near_cutoff_dev=_near_cutoff_nodes(sol.dev_smallest_retained, sol.dev_cutoff),
        near_cutoff_mean=_near_cutoff_nodes(
            sol.mean_smallest_retained, sol.mean_cutoff
        ),
    )


def gains(sol: GreSolution):
    """Feedback gains as sampled paths plus their nodewise defect norms.

    The defects ||W gain + cross|| vanish (up to roundoff) exactly when the
    range conditions hold, so they double as a feasibility diagnostic.
    """
    K = sol.grid.n_steps
    res_dev = np.empty(K + 1)
    res_mean = np.empty(K + 1)
    for k in range(K + 1):
        res_dev[k] = np.linalg.norm(
            sol.input_weight[k] @ sol.gain_dev[k] + sol.cross_term[k]
        )
        res_mean[k] = np.linalg.norm(
            sol.input_weight_mean[k] @ sol.gain_mean[k] + sol.cross_term_mean[k]
        )
    theta = MatrixPath.sampled(sol.grid, sol.gain_dev)
    gamma = MatrixPath.sampled(sol.grid, sol.gain_mean)
    return theta, gamma, res_dev, res_mean
