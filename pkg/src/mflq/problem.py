"""Containers for mean-field linear-quadratic control problems.

A problem couples a linear SDE whose drift and diffusion see both the state
and its expectation with a quadratic cost that weighs the state, the control,
and their means separately.  Everything here is plain data: uniform time
grids, (possibly time-varying) coefficient matrices, noise-affine
inhomogeneities, the initial distribution, and feedback-plus-offset control
specifications.  The solver modules consume these containers and never
mutate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ValidationError

# Relative tolerance for declaring a stored matrix symmetric.
SYMMETRY_RTOL = 1e-12

# Slack (relative to the horizon span) when range-checking evaluation times,
# so that times produced by accumulating steps in floating point still count
# as inside the horizon.
_TIME_SLACK = 1e-9


def _as_float_array(value, name: str = "value") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite entries")
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of n_steps + 1 nodes on the closed interval [t0, tT]."""

    t0: float
    tT: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.tT)):
            raise ValidationError("TimeGrid: endpoints must be finite")
        if not self.tT > self.t0:
            raise ValidationError(
                f"TimeGrid: need tT > t0, got [{self.t0}, {self.tT}]"
            )
        if self.n_steps < 1:
            raise ValidationError("TimeGrid: n_steps must be at least 1")

    @property
    def h(self) -> float:
        return (self.tT - self.t0) / self.n_steps

    @property
    def span(self) -> float:
        return self.tT - self.t0

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.tT, self.n_steps + 1)

    def with_steps(self, n_steps: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.tT, n_steps)

    def locate(self, s: float) -> float:
        """Map a time to grid coordinates (node index plus fraction).

        Times within a small relative slack of the endpoints are clamped;
        anything further outside raises a ValueError.
        """
        slack = _TIME_SLACK * max(self.span, 1.0)
        if s < self.t0 - slack or s > self.tT + slack:
            raise ValueError(
                f"time {s!r} lies outside the horizon [{self.t0}, {self.tT}]"
            )
        x = (s - self.t0) / self.h
        return min(max(x, 0.0), float(self.n_steps))


@dataclass(frozen=True)
class MatrixPath:
    """A constant or sampled time-dependent array on a uniform grid.

    Sampled paths hold one array per grid node and evaluate between nodes by
    linear interpolation; evaluation at a node returns that node's sample
    exactly.  Constant paths evaluate to the same array everywhere and carry
    no grid of their own.
    """

    values: np.ndarray
    grid: Optional[TimeGrid] = None

    @classmethod
    def constant(cls, value) -> "MatrixPath":
        return cls(values=_as_float_array(value, "MatrixPath"), grid=None)

    @classmethod
    def sampled(cls, grid: TimeGrid, values) -> "MatrixPath":
        arr = _as_float_array(values, "MatrixPath")
        if arr.shape[0] != grid.n_steps + 1:
            raise ValidationError(
                f"MatrixPath: expected {grid.n_steps + 1} samples, "
                f"got {arr.shape[0]}"
            )
        return cls(values=arr, grid=grid)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        self.values.setflags(write=False)

    @property
    def is_constant(self) -> bool:
        return self.grid is None

    @property
    def shape(self) -> tuple:
        if self.is_constant:
            return self.values.shape
        return self.values.shape[1:]

    def at(self, s: float) -> np.ndarray:
        if self.is_constant:
            return self.values
        x = self.grid.locate(s)
        k = int(round(x))
        if abs(x - k) < 1e-9:
            return self.values[k]
        i = int(math.floor(x))
        w = x - i
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def add_constant(self, bump) -> "MatrixPath":
        """Return the path shifted by a constant array of the same shape."""
        bump = np.asarray(bump, dtype=float)
        if self.is_constant:
            return MatrixPath.constant(self.values + bump)
        return MatrixPath.sampled(self.grid, self.values + bump)


def eval_path(path: MatrixPath, s: float) -> np.ndarray:
    """Evaluate a path at time s.

    Sampled paths raise ValueError outside their grid's horizon; constant
    paths accept any finite time.
    """
    return path.at(s)


def sample_path(path: MatrixPath, times: np.ndarray) -> np.ndarray:
    """Evaluate a path at an array of times, stacked along a new first axis."""
    times = np.asarray(times, dtype=float)
    if path.is_constant:
        return np.broadcast_to(
            path.values, times.shape + path.values.shape
        ).copy()
    out = np.empty(times.shape + path.shape)
    for idx, s in np.ndenumerate(times):
        out[idx] = path.at(s)
    return out


@dataclass(frozen=True)
class NoiseAffinePath:
    """A path of the form f0(s) + f1(s) * W(s) for scalar Brownian W.

    ``frozen_at_start`` pins the Brownian factor to its value at the initial
    time instead of the running value; simulation honours the flag, while
    the mean of the path is the constant part either way.
    """

    const_part: MatrixPath
    noise_part: MatrixPath
    frozen_at_start: bool = False

    @classmethod
    def zero(cls, shape) -> "NoiseAffinePath":
        z = np.zeros(shape)
        return cls(MatrixPath.constant(z), MatrixPath.constant(z))

    @classmethod
    def of(cls, const, noise, frozen_at_start: bool = False) -> "NoiseAffinePath":
        return cls(
            MatrixPath.constant(const),
            MatrixPath.constant(noise),
            frozen_at_start,
        )

    @property
    def shape(self) -> tuple:
        return self.const_part.shape

    def mean_at(self, s: float) -> np.ndarray:
        return self.const_part.at(s)


@dataclass(frozen=True)
class InitialLaw:
    """Initial state distribution: mean + brownian_load * W(t0) + indep_load @ G.

    W(t0) is the driving Brownian motion at the initial time (variance t0)
    and G is a standard normal vector independent of it, so the covariance
    is t0 * outer(brownian_load) + indep_load @ indep_load.T.
    """

    mean: np.ndarray
    brownian_load: np.ndarray
    indep_load: np.ndarray

    @classmethod
    def deterministic(cls, x) -> "InitialLaw":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.shape[0]
        return cls(x, np.zeros(n), np.zeros((n, n)))

    def __post_init__(self):
        object.__setattr__(
            self, "mean", _as_float_array(self.mean, "InitialLaw.mean")
        )
        object.__setattr__(
            self,
            "brownian_load",
            _as_float_array(self.brownian_load, "InitialLaw.brownian_load"),
        )
        object.__setattr__(
            self,
            "indep_load",
            _as_float_array(self.indep_load, "InitialLaw.indep_load"),
        )
        n = self.mean.shape[0]
        if self.mean.ndim != 1:
            raise ValidationError("InitialLaw.mean: expected a vector")
        if self.brownian_load.shape != (n,):
            raise ValidationError(
                f"InitialLaw.brownian_load: expected shape ({n},), "
                f"got {self.brownian_load.shape}"
            )
        if self.indep_load.ndim != 2 or self.indep_load.shape[0] != n:
            raise ValidationError(
                f"InitialLaw.indep_load: expected {n} rows, "
                f"got shape {self.indep_load.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def covariance(self, t0: float) -> np.ndarray:
        c = self.brownian_load
        return t0 * np.outer(c, c) + self.indep_load @ self.indep_load.T

    def second_moment(self, t0: float) -> np.ndarray:
        return self.covariance(t0) + np.outer(self.mean, self.mean)


@dataclass(frozen=True)
class ControlSpec:
    """Feedback-plus-offset control law.

    The realised control at time s along a path with state X and exact state
    mean EX is  feedback(s) X + mean_feedback(s) EX + offset(s), where the
    offset is noise-affine.
    """

    feedback: MatrixPath
    mean_feedback: MatrixPath
    offset: NoiseAffinePath

    @classmethod
    def zero(cls, n: int, m: int) -> "ControlSpec":
        zmn = np.zeros((m, n))
        return cls(
            MatrixPath.constant(zmn),
            MatrixPath.constant(zmn),
            NoiseAffinePath.zero((m,)),
        )

    def mean_control(self, s: float, mean_state: np.ndarray) -> np.ndarray:
        gain = self.feedback.at(s) + self.mean_feedback.at(s)
        return gain @ mean_state + self.offset.mean_at(s)


# Field → (kind, shape-maker, symmetric?) table used by validation and the
# generic constructor.  Kinds: "path" (MatrixPath), "noise" (NoiseAffinePath),
# "matrix" (plain terminal array), "vector" (plain terminal vector).
def _coeff_table(n: int, m: int):
    return {
        "A": ("path", (n, n), False),
        "A_bar": ("path", (n, n), False),
        "B": ("path", (n, m), False),
        "B_bar": ("path", (n, m), False),
        "C": ("path", (n, n), False),
        "C_bar": ("path", (n, n), False),
        "D": ("path", (n, m), False),
        "D_bar": ("path", (n, m), False),
        "Q": ("path", (n, n), True),
        "Q_bar": ("path", (n, n), True),
        "S": ("path", (m, n), False),
        "S_bar": ("path", (m, n), False),
        "R": ("path", (m, m), True),
        "R_bar": ("path", (m, m), True),
        "G": ("matrix", (n, n), True),
        "G_bar": ("matrix", (n, n), True),
        "b": ("noise", (n,), False),
        "sigma": ("noise", (n,), False),
        "q": ("noise", (n,), False),
        "rho": ("noise", (m,), False),
        "q_bar": ("path", (n,), False),
        "rho_bar": ("path", (m,), False),
        "g0": ("vector", (n,), False),
        "g1": ("vector", (n,), False),
        "g_bar": ("vector", (n,), False),
    }


@dataclass(frozen=True)
class ProblemData:
    """Full coefficient set of a mean-field LQ problem on a fixed horizon.

    Naming convention: the un-barred matrices weigh the state/control
    themselves, the ``_bar`` companions weigh their expectations.  b, sigma
    are the drift/diffusion inhomogeneities; q, rho (and their bars) the
    linear cost terms; (g0, g1) the noise-affine terminal linear weight and
    g_bar its mean counterpart.
    """

    n: int
    m: int
    horizon: TimeGrid
    A: MatrixPath
    A_bar: MatrixPath
    B: MatrixPath
    B_bar: MatrixPath
    C: MatrixPath
    C_bar: MatrixPath
    D: MatrixPath
    D_bar: MatrixPath
    Q: MatrixPath
    Q_bar: MatrixPath
    S: MatrixPath
    S_bar: MatrixPath
    R: MatrixPath
    R_bar: MatrixPath
    G: np.ndarray
    G_bar: np.ndarray
    b: NoiseAffinePath
    sigma: NoiseAffinePath
    q: NoiseAffinePath
    rho: NoiseAffinePath
    q_bar: MatrixPath
    rho_bar: MatrixPath
    g0: np.ndarray
    g1: np.ndarray
    g_bar: np.ndarray

    def __post_init__(self):
        for name in ("G", "G_bar", "g0", "g1", "g_bar"):
            arr = _as_float_array(getattr(self, name), name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def is_homogeneous(self) -> bool:
        zero_paths = (self.q_bar, self.rho_bar)
        zero_noise = (self.b, self.sigma, self.q, self.rho)
        if any(np.any(p.values != 0.0) for p in zero_paths):
            return False
        for na in zero_noise:
            if np.any(na.const_part.values != 0.0):
                return False
            if np.any(na.noise_part.values != 0.0):
                return False
        return not (
            np.any(self.g0 != 0.0)
            or np.any(self.g1 != 0.0)
            or np.any(self.g_bar != 0.0)
        )

    @property
    def has_mean_terms(self) -> bool:
        """True if any mean-coupling coefficient is nonzero."""
        bars = (
            self.A_bar, self.B_bar, self.C_bar, self.D_bar,
            self.Q_bar, self.S_bar, self.R_bar,
        )
        if any(np.any(p.values != 0.0) for p in bars):
            return True
        return bool(np.any(self.G_bar != 0.0))


def _normalize_path(value, shape, horizon: TimeGrid) -> MatrixPath:
    if isinstance(value, MatrixPath):
        return value
    if value is None:
        return MatrixPath.constant(np.zeros(shape))
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if any(d != 1 for d in shape):
            raise ValidationError(
                f"scalar given where an array of shape {shape} is required"
            )
        arr = arr.reshape(shape)
    if arr.shape == shape:
        return MatrixPath.constant(arr)
    if arr.shape[1:] == shape:
        grid = horizon.with_steps(arr.shape[0] - 1)
        return MatrixPath.sampled(grid, arr)
    raise ValidationError(
        f"cannot interpret array of shape {arr.shape} as a path of shape {shape}"
    )


def _normalize_noise(value, shape, horizon: TimeGrid) -> NoiseAffinePath:
    if isinstance(value, NoiseAffinePath):
        return value
    if value is None:
        return NoiseAffinePath.zero(shape)
    if isinstance(value, tuple) and len(value) in (2, 3):
        const = _normalize_path(value[0], shape, horizon)
        noise = _normalize_path(value[1], shape, horizon)
        frozen = bool(value[2]) if len(value) == 3 else False
        return NoiseAffinePath(const, noise, frozen)
    # A bare array is taken as a deterministic (constant-part only) path.
    const = _normalize_path(value, shape, horizon)
    return NoiseAffinePath(const, MatrixPath.constant(np.zeros(shape)))


def make_problem(n: int, m: int, horizon: TimeGrid, **coeffs) -> ProblemData:
    """Assemble a ProblemData, filling every unspecified coefficient with zero.

    Scalars are accepted for 1x1 blocks, bare arrays become constant paths,
    (K+1, ...)-shaped arrays become sampled paths on the horizon, and
    (const, noise) tuples become noise-affine paths.  ``g`` may be given as
    a pair (g0, g1) or the fields g0/g1 set individually.
    """
    table = _coeff_table(n, m)
    if "g" in coeffs:
        g = coeffs.pop("g")
        if isinstance(g, tuple):
            coeffs.setdefault("g0", g[0])
            coeffs.setdefault("g1", g[1])
        else:
            coeffs.setdefault("g0", g)
    unknown = set(coeffs) - set(table)
    if unknown:
        raise ValidationError(f"unknown coefficients: {sorted(unknown)}")
    built = {}
    for name, (kind, shape, _sym) in table.items():
        value = coeffs.get(name)
        if kind == "path":
            built[name] = _normalize_path(value, shape, horizon)
        elif kind == "noise":
            built[name] = _normalize_noise(value, shape, horizon)
        else:
            if value is None:
                built[name] = np.zeros(shape)
            else:
                arr = np.asarray(value, dtype=float)
                if arr.ndim == 0:
                    arr = arr.reshape(shape) if all(d == 1 for d in shape) else arr
                built[name] = arr
    return ProblemData(n=n, m=m, horizon=horizon, **built)


def _check_symmetry(name: str, values: np.ndarray, violations: list):
    stack = values if values.ndim == 3 else values[None]
    for k, mat in enumerate(stack):
        gap = np.linalg.norm(mat - mat.T)
        if gap > SYMMETRY_RTOL * (1.0 + np.linalg.norm(mat)):
            where = f" at node {k}" if values.ndim == 3 else ""
            violations.append(
                f"{name}: not symmetric{where} (|M - M^T| = {gap:.3e})"
            )
            break


def _check_path(name: str, path: MatrixPath, shape, horizon: TimeGrid,
                symmetric: bool, violations: list):
    if path.shape != shape:
        violations.append(
            f"{name}: expected shape {shape}, got {path.shape}"
        )
        return
    if not np.all(np.isfinite(path.values)):
        violations.append(f"{name}: contains non-finite entries")
        return
    if not path.is_constant:
        g = path.grid
        tol = 1e-12 * max(1.0, abs(horizon.tT))
        if abs(g.t0 - horizon.t0) > tol or abs(g.tT - horizon.tT) > tol:
            violations.append(
                f"{name}: sample grid [{g.t0}, {g.tT}] does not span the "
                f"horizon [{horizon.t0}, {horizon.tT}]"
            )
    if symmetric:
        _check_symmetry(name, path.values, violations)


def validate(p: ProblemData) -> list:
    """Return a list of human-readable violations; empty means valid."""
    violations = []
    if p.n < 1 or p.m < 1:
        violations.append("dimensions n and m must be positive")
        return violations
    table = _coeff_table(p.n, p.m)
    for name, (kind, shape, symmetric) in table.items():
        value = getattr(p, name)
        if kind == "path":
            _check_path(name, value, shape, p.horizon, symmetric, violations)
        elif kind == "noise":
            _check_path(f"{name}.const", value.const_part, shape, p.horizon,
                        False, violations)
            _check_path(f"{name}.noise", value.noise_part, shape, p.horizon,
                        False, violations)
        else:
            arr = value
            if arr.shape != shape:
                violations.append(
                    f"{name}: expected shape {shape}, got {arr.shape}"
                )
                continue
            if not np.all(np.isfinite(arr)):
                violations.append(f"{name}: contains non-finite entries")
                continue
            if symmetric:
                _check_symmetry(name, arr, violations)
    return violations


def strip_inhomogeneous(p: ProblemData) -> ProblemData:
    """Zero every inhomogeneity and linear cost term, keeping the dynamics.

    Idempotent; used to reduce a problem to its purely quadratic core.
    """
    n, m = p.n, p.m
    return replace(
        p,
        b=NoiseAffinePath.zero((n,)),
        sigma=NoiseAffinePath.zero((n,)),
        q=NoiseAffinePath.zero((n,)),
        rho=NoiseAffinePath.zero((m,)),
        q_bar=MatrixPath.constant(np.zeros(n)),
        rho_bar=MatrixPath.constant(np.zeros(m)),
        g0=np.zeros(n),
        g1=np.zeros(n),
        g_bar=np.zeros(n),
    )


def nodes_and_midpoints(path: MatrixPath, grid: TimeGrid):
    """Sample a path at every node and at every interval midpoint.

    Returns (node_values, mid_values) with shapes (K+1, ...) and (K, ...).
    Fixed-step Runge-Kutta sweeps consume these so coefficient lookup inside
    the stage loop is pure indexing.
    """
    times = grid.nodes
    node_vals = sample_path(path, times)
    mids = 0.5 * (times[:-1] + times[1:])
    if path.is_constant or (
        path.grid.n_steps == grid.n_steps
        and abs(path.grid.t0 - grid.t0) < 1e-12
        and abs(path.grid.tT - grid.tT) < 1e-12
    ):
        # Linear interpolation at midpoints of the same grid is the average.
        mid_vals = 0.5 * (node_vals[:-1] + node_vals[1:])
    else:
        mid_vals = sample_path(path, mids)
    return node_vals, mid_vals
