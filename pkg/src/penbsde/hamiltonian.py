"""Driver maps: the Hamiltonians p, q and the penalized driver p^j.

The penalized driver is computed by vertex reduction: for fixed a the inner
objective is affine in the push density b on the box [0, j]^l, so its sup is
attained componentwise at b_i = j when g_i + (z nu_tilde)_i > 0 and at
b_i = 0 otherwise (ties at exactly zero resolve to 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import PreconditionError
from .model import ModelSpec, PathBatch

Array = np.ndarray


@dataclass(frozen=True)
class DriverEval:
    """Value and maximizing controls of a driver evaluation."""

    value: float
    argmax_a: Array
    argmax_b: Optional[Array] = None


def _as_batch(path) -> PathBatch:
    if isinstance(path, PathBatch):
        return path
    states = np.asarray(path, dtype=float)
    if states.ndim == 2:  # single path (s+1, d)
        raise PreconditionError("wrap raw arrays in PathBatch (needs time stamps)")
    raise PreconditionError("path must be a PathBatch")


def eval_p_batch(model: ModelSpec, t: float, hist: PathBatch, z: Array):
    """Batched p: returns (values (N,), argmax grid indices (N,))."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    best = np.full(hist.n_paths, -np.inf)
    best_idx = np.zeros(hist.n_paths, dtype=int)
    for idx in range(model.control_grid.size):
        a = model.control_grid.points[idx]
        val = model.f(t, hist, a) + np.einsum("pj,pj->p", z, model.mu_tilde(t, hist, a))
        better = val > best  # strict: ties keep the lowest grid index
        best = np.where(better, val, best)
        best_idx = np.where(better, idx, best_idx)
    return best, best_idx


def eval_q_batch(model: ModelSpec, t: float, hist: PathBatch, z: Array) -> Array:
    """Batched q: returns (N, l)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    best = np.full((hist.n_paths, model.dims.l), -np.inf)
    for idx in range(model.control_grid.size):
        a = model.control_grid.points[idx]
        val = model.g(t, hist, a) + np.einsum("pj,pji->pi", z, model.nu_tilde(t, hist, a))
        best = np.maximum(best, val)
    return best


def eval_pj_batch(model: ModelSpec, t: float, hist: PathBatch, z: Array, j: float):
    """Batched p^j: returns (values (N,), argmax indices (N,), argmax b (N, l))."""
    if j < 0:
        raise PreconditionError("penalty level j must be >= 0")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    N, l = hist.n_paths, model.dims.l
    best = np.full(N, -np.inf)
    best_idx = np.zeros(N, dtype=int)
    best_b = np.zeros((N, l))
    for idx in range(model.control_grid.size):
        a = model.control_grid.points[idx]
        base = model.f(t, hist, a) + np.einsum("pj,pj->p", z, model.mu_tilde(t, hist, a))
        slope = model.g(t, hist, a) + np.einsum(
            "pj,pji->pi", z, model.nu_tilde(t, hist, a)
        )
        val = base + j * np.sum(np.maximum(slope, 0.0), axis=1)
        better = val > best
        best = np.where(better, val, best)
        best_idx = np.where(better, idx, best_idx)
        b = np.where(slope > 0.0, j, 0.0)
        best_b = np.where(better[:, None], b, best_b)
    return best, best_idx, best_b


def _single(hist_or_path) -> PathBatch:
    hist = _as_batch(hist_or_path)
    if hist.n_paths != 1:
        raise PreconditionError("single-point evaluation needs a one-path batch")
    return hist


def eval_p(model: ModelSpec, t: float, path: PathBatch, z: Array) -> DriverEval:
    """p(t, x, z) = sup_a { f + z mu_tilde } over the control grid."""
    hist = _single(path)
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise PreconditionError("z must be finite")
    values, idx = eval_p_batch(model, t, hist, z[None, :])
    return DriverEval(value=float(values[0]), argmax_a=model.control_grid.points[idx[0]])


def eval_q(model: ModelSpec, t: float, path: PathBatch, z: Array) -> Array:
    """q_i(t, x, z) = sup_a { g_i + (z nu_tilde)_i }, returned as an l-vector."""
    hist = _single(path)
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise PreconditionError("z must be finite")
    return eval_q_batch(model, t, hist, z[None, :])[0]


def eval_pj(model: ModelSpec, t: float, path: PathBatch, z: Array, j: float) -> DriverEval:
    """Penalized driver p^j via vertex reduction, with maximizing (a, b)."""
    hist = _single(path)
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise PreconditionError("z must be finite")
    values, idx, b = eval_pj_batch(model, t, hist, z[None, :], j)
    return DriverEval(
        value=float(values[0]),
        argmax_a=model.control_grid.points[idx[0]],
        argmax_b=b[0],
    )


@dataclass
class MonotoneReport:
    ok: bool
    violations: list  # (sample index, j_low, j_high, value_low, value_high)
    values: Array  # (num_samples, num_j)


def pj_monotone_report(model: ModelSpec, samples, j_schedule) -> MonotoneReport:
    """Check p^j <= p^{j'} pointwise for j <= j' on the given samples.

    ``samples`` is an iterable of (t, path, z) triples with one-path batches.
    """
    js = list(j_schedule)
    if any(b <= a for a, b in zip(js, js[1:])):
        raise PreconditionError("j schedule must be strictly increasing")
    samples = list(samples)
    values = np.empty((len(samples), len(js)))
    for i, (t, path, z) in enumerate(samples):
        for c, j in enumerate(js):
            values[i, c] = eval_pj(model, t, path, z, j).value
    violations = []
    for i in range(len(samples)):
        for c in range(len(js) - 1):
            if values[i, c] > values[i, c + 1] + 1e-12:
                violations.append((i, js[c], js[c + 1], values[i, c], values[i, c + 1]))
    return MonotoneReport(ok=not violations, violations=violations, values=values)
