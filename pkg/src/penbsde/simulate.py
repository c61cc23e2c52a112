"""Forward simulation: time grids, Brownian batches, Euler schemes, Girsanov weights.

All randomness flows through counter-based Philox streams keyed by a single
seed and a named substream, so results are bit-identical regardless of how
many worker threads consume them.
"""

from __future__ import annotations

import csv
import gzip as gzip_mod
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, PreconditionError
from .model import ModelSpec, PathBatch

Array = np.ndarray

# named substreams hanging off the experiment seed
STREAMS = {"simulation": 0, "policy-eval": 1, "facelift-eval": 2}

_LOG_WEIGHT_MAX = 700.0  # exp overflow threshold for float64


@dataclass(frozen=True)
class TimeGrid:
    """Deterministic partition 0 = t_0 < t_1 < ... < t_m = T."""

    times: Array

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 2:
            raise PreconditionError("time grid needs at least two points")
        if t[0] != 0.0:
            raise PreconditionError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise PreconditionError("time grid must be strictly increasing")

    @classmethod
    def uniform(cls, T: float, m: int) -> "TimeGrid":
        if T <= 0 or m < 1:
            raise PreconditionError("need T > 0 and m >= 1")
        return cls(np.linspace(0.0, T, m + 1))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def m(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> Array:
        return np.diff(self.times)


@dataclass(frozen=True)
class BrownianBatch:
    """Gaussian increments, shape (N, m, n)."""

    increments: Array
    seed: int
    grid: TimeGrid

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]


@dataclass(frozen=True)
class StatePathBatch:
    """Sampled state paths, shape (N, m+1, d)."""

    states: Array
    grid: TimeGrid
    kind: str  # "uncontrolled" | "controlled"

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    def history(self, step: int) -> PathBatch:
        """Path batch truncated at grid index ``step`` (inclusive)."""
        return PathBatch(self.states[:, : step + 1, :], self.grid.times[: step + 1])

    def full(self) -> PathBatch:
        return PathBatch(self.states, self.grid.times)


def substream(seed: int, stream: str) -> np.random.Generator:
    """Philox generator for a named substream of the experiment seed."""
    if stream not in STREAMS:
        raise PreconditionError(f"unknown stream {stream!r}; known: {sorted(STREAMS)}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(STREAMS[stream],))
    return np.random.Generator(np.random.Philox(ss))


def gen_brownian(
    grid: TimeGrid, N: int, n: int, seed: int, stream: str = "simulation"
) -> BrownianBatch:
    """Draw N x m x n Gaussian increments, deterministically in (grid, N, seed).

    Generation is a single vectorized pass over a counter-based Philox
    stream, so the output never depends on worker count downstream.
    """
    if N < 1:
        raise PreconditionError("N must be >= 1")
    rng = substream(seed, stream)
    raw = rng.standard_normal((N, grid.m, n))
    incr = raw * np.sqrt(grid.dt)[None, :, None]
    return BrownianBatch(increments=incr, seed=seed, grid=grid)


def _check_finite(x: Array, step: int, what: str):
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))
        path = int(bad[0][0])
        raise NumericalError(
            f"non-finite {what} at step {step}, path {path}; "
            "check coefficients for blow-up"
        )


def euler_uncontrolled(model: ModelSpec, grid: TimeGrid, bw: BrownianBatch, x0) -> StatePathBatch:
    """Euler-Maruyama scheme for dX = eta dt + sigma dW, left-endpoint coefficients."""
    N = bw.n_paths
    d = model.dims.d
    x0 = np.broadcast_to(np.asarray(x0, dtype=float).reshape(1, d), (N, d))
    states = np.empty((N, grid.m + 1, d))
    states[:, 0, :] = x0
    dt = grid.dt
    for s in range(grid.m):
        hist = PathBatch(states[:, : s + 1, :], grid.times[: s + 1])
        t = float(grid.times[s])
        eta = model.eta(t, hist)
        sig = model.sigma(t, hist)
        states[:, s + 1, :] = (
            states[:, s, :]
            + eta * dt[s]
            + np.einsum("pij,pj->pi", sig, bw.increments[:, s, :])
        )
        _check_finite(states[:, s + 1, :], s + 1, "state")
    return StatePathBatch(states=states, grid=grid, kind="uncontrolled")


def _policy_controls(policy, s: int, hist: PathBatch):
    """Evaluate a policy's maps, returning (a, b) as (N, k) and (N, l)."""
    N = hist.n_paths
    a = np.asarray(policy.a_map(s, hist), dtype=float)
    b = np.asarray(policy.b_map(s, hist), dtype=float)
    if a.ndim == 1:
        a = np.broadcast_to(a[None, :], (N, a.size)).copy()
    if b.ndim == 1:
        b = np.broadcast_to(b[None, :], (N, b.size)).copy()
    if np.any(b < -1e-12) or np.any(b > policy.j + 1e-12):
        raise PreconditionError(
            f"policy density outside [0, {policy.j}] at step {s}: "
            f"range [{b.min():.4g}, {b.max():.4g}]"
        )
    return a, np.clip(b, 0.0, policy.j)


def rollout_controlled(model: ModelSpec, grid: TimeGrid, bw: BrownianBatch, policy, x0):
    """Simulate controlled dynamics; returns (paths, a_hist, b_hist).

    Controls are evaluated on the history up to t_s before the step-s
    increment is applied (predictability).
    """
    N = bw.n_paths
    d, k, l = model.dims.d, model.dims.k, model.dims.l
    x0 = np.broadcast_to(np.asarray(x0, dtype=float).reshape(1, d), (N, d))
    states = np.empty((N, grid.m + 1, d))
    states[:, 0, :] = x0
    a_hist = np.empty((N, grid.m, k))
    b_hist = np.empty((N, grid.m, l))
    dt = grid.dt
    for s in range(grid.m):
        hist = PathBatch(states[:, : s + 1, :], grid.times[: s + 1])
        t = float(grid.times[s])
        a, b = _policy_controls(policy, s, hist)
        a_hist[:, s, :] = a
        b_hist[:, s, :] = b
        eta = model.eta(t, hist)
        sig = model.sigma(t, hist)
        mt = model.mu_tilde(t, hist, a)
        nt = model.nu_tilde(t, hist, a)
        # X += eta dt + sigma (mu_tilde dt + nu_tilde b dt + dW)
        noise_dir = (
            mt * dt[s]
            + np.einsum("pji,pi->pj", nt, b) * dt[s]
            + bw.increments[:, s, :]
        )
        states[:, s + 1, :] = states[:, s, :] + eta * dt[s] + np.einsum(
            "pij,pj->pi", sig, noise_dir
        )
        _check_finite(states[:, s + 1, :], s + 1, "state")
    return StatePathBatch(states=states, grid=grid, kind="controlled"), a_hist, b_hist


def euler_controlled(
    model: ModelSpec, grid: TimeGrid, bw: BrownianBatch, policy, x0
) -> StatePathBatch:
    """Euler scheme for the controlled SDE under an absolutely continuous policy."""
    paths, _, _ = rollout_controlled(model, grid, bw, policy, x0)
    return paths


def girsanov_weights(
    model: ModelSpec, grid: TimeGrid, paths: StatePathBatch, bw: BrownianBatch, policy
) -> Array:
    """Likelihood weights dP^{a,b}/dP along uncontrolled paths.

    Discretized stochastic exponential of the drift shift
    theta_s = mu_tilde(t_s, X, a_s) + nu_tilde(t_s, X, a_s) b_s, with controls
    read on the uncontrolled path (weak formulation).
    """
    if paths.kind != "uncontrolled":
        raise PreconditionError("girsanov_weights requires uncontrolled paths")
    N = paths.n_paths
    log_w = np.zeros(N)
    dt = grid.dt
    for s in range(grid.m):
        hist = paths.history(s)
        t = float(grid.times[s])
        a, b = _policy_controls(policy, s, hist)
        theta = model.mu_tilde(t, hist, a) + np.einsum(
            "pji,pi->pj", model.nu_tilde(t, hist, a), b
        )
        log_w += np.einsum("pj,pj->p", theta, bw.increments[:, s, :])
        log_w -= 0.5 * np.einsum("pj,pj->p", theta, theta) * dt[s]
    if np.max(np.abs(log_w)) > _LOG_WEIGHT_MAX:
        raise NumericalError(
            "Girsanov log-weight overflow; reduce bound_mu/bound_nu or refine the grid"
        )
    return np.exp(log_w)


def dump_paths(paths: StatePathBatch, filename: str, gzip: bool = False) -> None:
    """Write paths as CSV with columns path_id, step, time, state_0..state_{d-1}."""
    d = paths.states.shape[2]
    opener = (lambda f: gzip_mod.open(f, "wt", newline="")) if gzip else (
        lambda f: open(f, "w", newline="")
    )
    with opener(filename) as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "step", "time"] + [f"state_{i}" for i in range(d)])
        for p in range(paths.n_paths):
            for s in range(paths.states.shape[1]):
                writer.writerow(
                    [p, s, repr(float(paths.grid.times[s]))]
                    + [repr(float(v)) for v in paths.states[p, s]]
                )
