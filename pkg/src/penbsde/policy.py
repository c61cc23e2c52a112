"""Feedback policies and strong/weak Monte Carlo policy evaluation.

The extracted feedback policy plugs the regression-represented Z of a
solved penalized BSDE into the driver argmax: a is the maximizing grid
point and b sits at a vertex of [0, j]^l.  Evaluation is either strong
(simulate the controlled dynamics) or weak (Girsanov-weighted functional
on uncontrolled paths); the two agree in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bsde import BsdeSolution, _secant_step, eval_z_at
from .errors import PreconditionError
from .hamiltonian import eval_pj_batch
from .model import ModelSpec, PathBatch
from .simulate import (
    StatePathBatch,
    TimeGrid,
    euler_uncontrolled,
    gen_brownian,
    girsanov_weights,
    rollout_controlled,
)

Array = np.ndarray


@dataclass(frozen=True)
class Policy:
    """Feedback maps (step, path history) -> controls.

    ``a_map`` returns values in the control grid, shape (N, k) or (k,);
    ``b_map`` returns push densities in [0, j]^l, shape (N, l) or (l,).
    """

    a_map: Callable[[int, PathBatch], Array]
    b_map: Callable[[int, PathBatch], Array]
    j: float
    kind: str  # "bsde-feedback" | "constant" | "user"


@dataclass(frozen=True)
class PolicyValue:
    estimate: float
    stderr: float
    mode: str  # "strong" | "weak"


def constant_policy(model: ModelSpec, a_index: int = 0, b=0.0, j: Optional[float] = None) -> Policy:
    """Policy holding a fixed grid point and a fixed push density."""
    a = model.control_grid.points[a_index]
    b = np.broadcast_to(np.atleast_1d(np.asarray(b, dtype=float)), (model.dims.l,)).copy()
    jj = float(j) if j is not None else max(float(b.max()), 1.0)
    if np.any(b < 0) or np.any(b > jj):
        raise PreconditionError("constant density must lie in [0, j]^l")
    return Policy(a_map=lambda s, hist: a, b_map=lambda s, hist: b, j=jj, kind="constant")


def extract_feedback(model: ModelSpec, solution: BsdeSolution) -> Policy:
    """Approximately optimal feedback controls from a penalized BSDE solution.

    Solutions computed in secant mode carry their per-step continuation
    fits; the controls then maximize the same shifted-continuation
    objective the solver used.  Tangent-mode solutions fall back to the
    driver argmax at the regressed Z.
    """
    if solution.driver != "penalized" or solution.j is None:
        raise PreconditionError("feedback extraction needs a penalized solution")
    j = float(solution.j)
    secant = solution.kernel_fits is not None
    grid = solution.grid

    cache = {"key": None, "value": None}

    def controls(s: int, hist: PathBatch):
        key = (s, id(hist))  # a_map and b_map are called with the same history object
        if cache["key"] == key:
            return cache["value"]
        t = float(grid.times[s])
        if secant and s == 0 and solution.step0_controls is not None:
            ai, b0 = solution.step0_controls
            value = (
                np.broadcast_to(model.control_grid.points[ai], (hist.n_paths, model.dims.k)),
                np.broadcast_to(b0, (hist.n_paths, model.dims.l)),
            )
        elif secant and solution.kernel_fits[s] is not None:
            _, idx, b = _secant_step(
                model, t, hist, solution.kernel_fits[s],
                float(grid.dt[s]), solution.push_candidates,
            )
            value = (model.control_grid.points[idx], b)
        else:
            z = eval_z_at(solution, s, hist)
            z = np.atleast_2d(z)
            _, idx, b = eval_pj_batch(model, t, hist, z, j)
            value = (model.control_grid.points[idx], b)
        cache["key"], cache["value"] = key, value
        return cache["value"]

    return Policy(
        a_map=lambda s, hist: controls(s, hist)[0],
        b_map=lambda s, hist: controls(s, hist)[1],
        j=j,
        kind="bsde-feedback",
    )


def _objective_on_paths(
    model: ModelSpec, grid: TimeGrid, paths: StatePathBatch, a_hist: Array, b_hist: Array
) -> Array:
    """Pathwise objective: sum f dt + sum g.b dt + terminal, left endpoints."""
    N = paths.n_paths
    total = np.zeros(N)
    dt = grid.dt
    for s in range(grid.m):
        hist = paths.history(s)
        t = float(grid.times[s])
        a = a_hist[:, s, :]
        total += model.f(t, hist, a) * dt[s]
        total += np.einsum("pi,pi->p", model.g(t, hist, a), b_hist[:, s, :]) * dt[s]
    total += model.h(paths.full())
    return total


def evaluate_policy_strong(
    model: ModelSpec, grid: TimeGrid, policy: Policy, N: int, seed: int, x0=0.0
) -> PolicyValue:
    """Monte Carlo value of the policy along controlled paths."""
    bw = gen_brownian(grid, N, model.dims.n, seed, stream="policy-eval")
    paths, a_hist, b_hist = rollout_controlled(model, grid, bw, policy, x0)
    vals = _objective_on_paths(model, grid, paths, a_hist, b_hist)
    stderr = float(np.std(vals, ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return PolicyValue(estimate=float(np.mean(vals)), stderr=stderr, mode="strong")


def evaluate_policy_weak(
    model: ModelSpec, grid: TimeGrid, policy: Policy, N: int, seed: int, x0=0.0
) -> PolicyValue:
    """Girsanov-weighted value of the policy on uncontrolled paths.

    Controls are read on the uncontrolled path; the likelihood weight is the
    discretized stochastic exponential of the induced drift shift.
    """
    bw = gen_brownian(grid, N, model.dims.n, seed, stream="policy-eval")
    paths = euler_uncontrolled(model, grid, bw, x0)
    a_hist = np.empty((N, grid.m, model.dims.k))
    b_hist = np.empty((N, grid.m, model.dims.l))
    for s in range(grid.m):
        hist = paths.history(s)
        a = np.asarray(policy.a_map(s, hist), dtype=float)
        b = np.asarray(policy.b_map(s, hist), dtype=float)
        a_hist[:, s, :] = a if a.ndim == 2 else a[None, :]
        b_hist[:, s, :] = b if b.ndim == 2 else b[None, :]
    weights = girsanov_weights(model, grid, paths, bw, policy)
    vals = weights * _objective_on_paths(model, grid, paths, a_hist, b_hist)
    stderr = float(np.std(vals, ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return PolicyValue(estimate=float(np.mean(vals)), stderr=stderr, mode="weak")
