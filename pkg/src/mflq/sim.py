"""Euler-Maruyama simulation with exact mean closure.

The state mean and mean control that the dynamics and cost see are not
estimated from the sample: they solve the deterministic mean ODE exactly
(up to RK4), so a finite path ensemble simulates the true mean-field
dynamics rather than an interacting particle system.  Paths are advanced in
fixed-size chunks, each chunk drawing from its own counter-based generator
keyed by (seed, chunk index); results are therefore reproducible bit for
bit for a given seed, path count, and step count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .problem import (
    ControlSpec,
    InitialLaw,
    ProblemData,
    TimeGrid,
    nodes_and_midpoints,
    sample_path,
)
from .quadrature import trapezoid, trapezoid_weights

# Paths per generator chunk.  Part of the reproducibility contract: the
# draw for path i depends only on (seed, i // CHUNK) and i's offset.
CHUNK = 16384


@dataclass(frozen=True)
class SimulationReport:
    """Cost estimate and path statistics from one simulation run."""

    cost_mean: float
    cost_stderr: float
    n_paths: int
    n_steps: int
    seed: int
    times: np.ndarray
    mean_path: np.ndarray
    mean_control: np.ndarray
    sample_mean_path: np.ndarray
    mean_gap: float
    terminal_mean: np.ndarray
    terminal_second_moment: np.ndarray
    per_path_costs: Optional[np.ndarray] = None


def sample_stderr(values: np.ndarray) -> float:
    """Standard error of the sample mean, exactly zero for constant samples.

    A constant vector has zero sample variance by definition; computing it
    through np.std can leave ~1e-18 dust whenever n * value is not exactly
    representable, which would break the promise that deterministic
    problems report stderr 0.
    """
    if values.size < 2 or np.all(values == values[0]):
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def mean_ode(
    p: ProblemData,
    spec: ControlSpec,
    m0,
    n_steps: Optional[int] = None,
):
    """Exact state-mean and control-mean trajectories under a control law.

    Solves dEX/ds = (A + A_bar + (B + B_bar)(feedback + mean_feedback)) EX
    + (B + B_bar) offset_mean + drift_const forward by RK4 and returns
    (EX, EU) sampled at the nodes, shapes (K+1, n) and (K+1, m).
    """
    grid = p.horizon if n_steps is None else p.horizon.with_steps(n_steps)
    K, h = grid.n_steps, grid.h
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    if m0.shape != (p.n,):
        raise ValidationError(f"initial mean: expected shape ({p.n},), got {m0.shape}")

    def samples(path):
        return nodes_and_midpoints(path, grid)

    A_n, A_m = samples(p.A)
    Ab_n, Ab_m = samples(p.A_bar)
    B_n, B_m = samples(p.B)
    Bb_n, Bb_m = samples(p.B_bar)
    b0_n, b0_m = samples(p.b.const_part)
    fb_n, fb_m = samples(spec.feedback)
    mf_n, mf_m = samples(spec.mean_feedback)
    v0_n, v0_m = samples(spec.offset.const_part)

    def make_rhs(A, Ab, B, Bb, b0, fb, mf, v0):
        def rhs(k, x):
            gain = fb[k] + mf[k]
            return (A[k] + Ab[k]) @ x + (B[k] + Bb[k]) @ (gain @ x + v0[k]) + b0[k]
        return rhs

    rhs_node = make_rhs(A_n, Ab_n, B_n, Bb_n, b0_n, fb_n, mf_n, v0_n)
    rhs_mid = make_rhs(A_m, Ab_m, B_m, Bb_m, b0_m, fb_m, mf_m, v0_m)

    EX = np.empty((K + 1, p.n))
    EX[0] = m0
    for k in range(K):
        x = EX[k]
        f1 = rhs_node(k, x)
        f2 = rhs_mid(k, x + 0.5 * h * f1)
        f3 = rhs_mid(k, x + 0.5 * h * f2)
        f4 = rhs_node(k + 1, x + h * f3)
        EX[k + 1] = x + (h / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)

    EU = np.einsum("kij,kj->ki", fb_n + mf_n, EX) + v0_n
    return EX, EU


class _CostTables:
    """Node samples of every cost coefficient on the working grid."""

    def __init__(self, p: ProblemData, grid: TimeGrid):
        times = grid.nodes
        self.Q = sample_path(p.Q, times)
        self.S = sample_path(p.S, times)
        self.R = sample_path(p.R, times)
        self.q0 = sample_path(p.q.const_part, times)
        self.q1 = sample_path(p.q.noise_part, times)
        self.r0 = sample_path(p.rho.const_part, times)
        self.r1 = sample_path(p.rho.noise_part, times)
        self.Qb = sample_path(p.Q_bar, times)
        self.Sb = sample_path(p.S_bar, times)
        self.Rb = sample_path(p.R_bar, times)
        self.qb = sample_path(p.q_bar, times)
        self.rb = sample_path(p.rho_bar, times)

    def node_cost(self, k: int, X, U, W):
        """Per-path running integrand at node k; X (B, n), U (B, m), W (B,)."""
        out = np.einsum("bi,ij,bj->b", X, self.Q[k], X)
        out += 2.0 * np.einsum("bi,ij,bj->b", U, self.S[k], X)
        out += np.einsum("bi,ij,bj->b", U, self.R[k], U)
        out += 2.0 * (X @ self.q0[k] + (X @ self.q1[k]) * W)
        out += 2.0 * (U @ self.r0[k] + (U @ self.r1[k]) * W)
        return out

    def deterministic_cost(self, p: ProblemData, grid: TimeGrid, EX, EU) -> float:
        """Mean-channel running + terminal cost, exact given (EX, EU)."""
        running = (
            np.einsum("ki,kij,kj->k", EX, self.Qb, EX)
            + 2.0 * np.einsum("ki,kij,kj->k", EU, self.Sb, EX)
            + np.einsum("ki,kij,kj->k", EU, self.Rb, EU)
            + 2.0 * np.sum(EX * self.qb, axis=1)
            + 2.0 * np.sum(EU * self.rb, axis=1)
        )
        terminal = EX[-1] @ (p.G_bar @ EX[-1]) + 2.0 * (p.g_bar @ EX[-1])
        return float(trapezoid(running, grid.h) + terminal)


def _terminal_cost(p: ProblemData, X, W):
    return np.einsum("bi,ij,bj->b", X, p.G, X) + 2.0 * (
        X @ p.g0 + (X @ p.g1) * W
    )


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(chunk_index)])
    return np.random.Generator(np.random.Philox(key=key))


def _simulate_chunks(
    p: ProblemData,
    spec: ControlSpec,
    law: InitialLaw,
    n_paths: int,
    grid: TimeGrid,
    seed: int,
    EX: np.ndarray,
    EU: np.ndarray,
    extras: Sequence[Callable] = (),
):
    """Core Euler-Maruyama sweep over path chunks.

    Returns (costs, extra_accumulators, sum_state_per_node, terminal sums).
    ``extras`` are per-node integrands f(k, X, U, W) -> (B,), accumulated
    with the same trapezoid weights as the running cost.
    """
    K, h = grid.n_steps, grid.h
    t0 = grid.t0
    times = grid.nodes
    n = p.n

    A_n = sample_path(p.A, times)
    Ab_n = sample_path(p.A_bar, times)
    B_n = sample_path(p.B, times)
    Bb_n = sample_path(p.B_bar, times)
    C_n = sample_path(p.C, times)
    Cb_n = sample_path(p.C_bar, times)
    D_n = sample_path(p.D, times)
    Db_n = sample_path(p.D_bar, times)
    b0_n = sample_path(p.b.const_part, times)
    b1_n = sample_path(p.b.noise_part, times)
    s0_n = sample_path(p.sigma.const_part, times)
    s1_n = sample_path(p.sigma.noise_part, times)
    fb_n = sample_path(spec.feedback, times)
    mf_n = sample_path(spec.mean_feedback, times)
    v0_n = sample_path(spec.offset.const_part, times)
    v1_n = sample_path(spec.offset.noise_part, times)
    frozen = spec.offset.frozen_at_start

    tables = _CostTables(p, grid)
    w = trapezoid_weights(K + 1, h)
    sqrt_h = np.sqrt(h)
    sqrt_t0 = np.sqrt(t0) if t0 > 0.0 else 0.0

    # Mean-channel contributions to drift, diffusion, and control at nodes.
    mean_u = np.einsum("kij,kj->ki", mf_n, EX) + v0_n
    mean_drift = np.einsum("kij,kj->ki", Ab_n, EX) + np.einsum(
        "kij,kj->ki", Bb_n, EU
    ) + b0_n
    mean_diff = np.einsum("kij,kj->ki", Cb_n, EX) + np.einsum(
        "kij,kj->ki", Db_n, EU
    ) + s0_n

    costs = []
    extra_acc = [[] for _ in extras]
    sum_X = np.zeros((K + 1, n))
    sum_term = np.zeros(n)
    sum_term_outer = np.zeros((n, n))

    n_chunks = (n_paths + CHUNK - 1) // CHUNK
    for c in range(n_chunks):
        bsz = min(CHUNK, n_paths - c * CHUNK)
        rng = _chunk_rng(seed, c)
        gauss = rng.standard_normal((bsz, law.indep_load.shape[1]))
        z0 = rng.standard_normal(bsz)
        dW = sqrt_h * rng.standard_normal((bsz, K))

        W0 = sqrt_t0 * z0
        W = W0.copy()
        X = law.mean + W0[:, None] * law.brownian_load + gauss @ law.indep_load.T

        running = np.zeros(bsz)
        running_extra = [np.zeros(bsz) for _ in extras]

        for k in range(K + 1):
            anchor = W0 if frozen else W
            U = X @ fb_n[k].T + mean_u[k] + v1_n[k] * anchor[:, None]
            running += w[k] * tables.node_cost(k, X, U, W)
            for e_idx, fn in enumerate(extras):
                running_extra[e_idx] += w[k] * fn(k, X, U, W)
            sum_X[k] += X.sum(axis=0)
            if k < K:
                drift = X @ A_n[k].T + U @ B_n[k].T + mean_drift[k] + b1_n[k] * W[:, None]
                diff = X @ C_n[k].T + U @ D_n[k].T + mean_diff[k] + s1_n[k] * W[:, None]
                X = X + h * drift + dW[:, k : k + 1] * diff
                W = W + dW[:, k]

        running += _terminal_cost(p, X, W)
        costs.append(running)
        for e_idx in range(len(extras)):
            extra_acc[e_idx].append(running_extra[e_idx])
        sum_term += X.sum(axis=0)
        sum_term_outer += X.T @ X

    costs = np.concatenate(costs)
    extra_out = [np.concatenate(acc) for acc in extra_acc]
    return costs, extra_out, sum_X, sum_term, sum_term_outer


def simulate(
    p: ProblemData,
    spec: ControlSpec,
    law: InitialLaw,
    n_paths: int,
    n_steps: int,
    seed: int,
    extras: Sequence[Callable] = (),
    keep_costs: bool = False,
):
    """Simulate the controlled dynamics and estimate the expected cost.

    Returns a SimulationReport; with ``extras`` given, returns the report
    plus one per-path accumulated array per extra integrand.  The standard
    error is the sample standard deviation of per-path costs divided by
    sqrt(n_paths); deterministic problems report exactly zero.  With
    ``keep_costs`` the report carries the per-path cost vector, for
    estimators that need path-level joint statistics.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be positive")
    if law.dim != p.n:
        raise ValidationError(
            f"initial law dimension {law.dim} does not match state dimension {p.n}"
        )
    grid = p.horizon.with_steps(n_steps)
    EX, EU = mean_ode(p, spec, law.mean, n_steps)
    tables = _CostTables(p, grid)
    det_cost = tables.deterministic_cost(p, grid, EX, EU)

    costs, extra_out, sum_X, sum_term, sum_term_outer = _simulate_chunks(
        p, spec, law, n_paths, grid, seed, EX, EU, extras
    )
    costs = costs + det_cost

    cost_mean = float(np.mean(costs))
    cost_stderr = sample_stderr(costs)

    sample_mean = sum_X / n_paths
    mean_gap = float(np.max(np.abs(sample_mean - EX)))
    report = SimulationReport(
        cost_mean=cost_mean,
        cost_stderr=cost_stderr,
        n_paths=n_paths,
        n_steps=n_steps,
        seed=seed,
        times=grid.nodes,
        mean_path=EX,
        mean_control=EU,
        sample_mean_path=sample_mean,
        mean_gap=mean_gap,
        terminal_mean=sum_term / n_paths,
        terminal_second_moment=sum_term_outer / n_paths,
        per_path_costs=costs if keep_costs else None,
    )
    if extras:
        return report, extra_out
    return report


def estimate_cost(
    times: np.ndarray,
    X: np.ndarray,
    U: np.ndarray,
    p: ProblemData,
    W: Optional[np.ndarray] = None,
    mean_path: Optional[np.ndarray] = None,
    mean_control: Optional[np.ndarray] = None,
):
    """Cost estimate from recorded path ensembles.

    X has shape (paths, K+1, n), U (paths, K+1, m), W (paths, K+1) or None
    for problems without noise-affine cost terms.  The mean channel uses the
    exact means when provided and the sample means otherwise.  Returns
    (mean, stderr).
    """
    times = np.asarray(times, dtype=float)
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if X.ndim != 3 or U.ndim != 3 or X.shape[:2] != U.shape[:2]:
        raise ValidationError("X and U must be (paths, nodes, dim) with equal fronts")
    n_paths, n_nodes = X.shape[:2]
    if times.shape != (n_nodes,):
        raise ValidationError("times length does not match the path arrays")
    if W is None:
        W = np.zeros((n_paths, n_nodes))
    h = float(times[1] - times[0])
    grid = TimeGrid(float(times[0]), float(times[-1]), n_nodes - 1)

    EX = X.mean(axis=0) if mean_path is None else np.asarray(mean_path, dtype=float)
    EU = U.mean(axis=0) if mean_control is None else np.asarray(
        mean_control, dtype=float
    )

    tables = _CostTables(p, grid)
    det_cost = tables.deterministic_cost(p, grid, EX, EU)
    w = trapezoid_weights(n_nodes, h)
    per_path = np.zeros(n_paths)
    for k in range(n_nodes):
        per_path += w[k] * tables.node_cost(k, X[:, k], U[:, k], W[:, k])
    per_path += _terminal_cost(p, X[:, -1], W[:, -1])
    per_path += det_cost

    mean = float(np.mean(per_path))
    return mean, sample_stderr(per_path)
