"""Terminal face-lift and the terminal-jump diagnostic.

The face-lift replaces the terminal reward h by the value of the best
instantaneous terminal push:

    lifted_h(x) = sup over push sizes l in R_+^l of
                  h(x + nu(T, x) l at the terminal point) + g(T, x) . l

so lifted_h >= h pointwise (l = 0 is always a candidate).  The search is
truncated to the box [0, l_max]^l, coarse grid first, then coordinate-wise
golden-section refinement; a supremum still growing at the box boundary
signals a model whose value is degenerate and raises an error.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bsde import BsdeSolution, RegressionBasis, TerminalSpec, solve_bsde
from .errors import NumericalError, PreconditionError
from .model import ModelSpec, PathBatch
from .simulate import TimeGrid, euler_uncontrolled, gen_brownian

Array = np.ndarray

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0
_MAX_COARSE_CANDIDATES = 100_000


@dataclass(frozen=True)
class FaceliftConfig:
    """Search box and resolution for the terminal-push maximization."""

    l_max: float = 8.0
    coarse_points: int = 33
    refine_iters: int = 30
    control_rule: str = "first"  # "first" grid point of A, or "best" over the grid

    def __post_init__(self):
        if self.l_max <= 0:
            raise PreconditionError("l_max must be > 0")
        if self.coarse_points < 2:
            raise PreconditionError("coarse_points must be >= 2")


def _push_objective(model: ModelSpec, paths: PathBatch, config: FaceliftConfig):
    """Return a callable lvec (N, l) -> objective values (N,)."""
    T = float(paths.times[-1])
    terminal = paths.terminal()
    sig = model.sigma(T, paths)

    if config.control_rule == "first":
        a_indices = [0]
    elif config.control_rule == "best":
        a_indices = list(range(model.control_grid.size))
    else:
        raise PreconditionError(f"unknown control_rule {config.control_rule!r}")

    per_a = []
    for idx in a_indices:
        a = model.control_grid.points[idx]
        nu = np.einsum("pij,pjl->pil", sig, model.nu_tilde(T, paths, a))  # (N, d, l)
        gv = model.g(T, paths, a)  # (N, l)
        per_a.append((nu, gv))

    pushed = paths.states.copy()  # scratch buffer; only the terminal slice varies
    pushed_batch = PathBatch(pushed, paths.times)

    def objective(lvec: Array) -> Array:
        lvec = np.atleast_2d(np.asarray(lvec, dtype=float))
        if lvec.shape[0] == 1:
            lvec = np.broadcast_to(lvec, (terminal.shape[0], lvec.shape[1]))
        best = np.full(terminal.shape[0], -np.inf)
        for nu, gv in per_a:
            pushed[:, -1, :] = terminal + np.einsum("pil,pl->pi", nu, lvec)
            val = model.h(pushed_batch) + np.einsum("pl,pl->p", gv, lvec)
            best = np.maximum(best, val)
        return best

    return objective


def facelift_terminal(
    model: ModelSpec, paths: PathBatch, config: Optional[FaceliftConfig] = None
) -> Array:
    """Face-lifted terminal reward for a batch of full paths, shape (N,)."""
    if config is None:
        config = FaceliftConfig()
    l_dim = model.dims.l
    if config.coarse_points**l_dim > _MAX_COARSE_CANDIDATES:
        raise PreconditionError(
            f"coarse grid of {config.coarse_points}^{l_dim} candidates is too large"
        )
    objective = _push_objective(model, paths, config)
    N = paths.n_paths

    axis = np.linspace(0.0, config.l_max, config.coarse_points)
    spacing = axis[1] - axis[0]
    best_val = np.full(N, -np.inf)
    best_l = np.zeros((N, l_dim))
    for combo in itertools.product(axis, repeat=l_dim):
        lvec = np.array(combo)
        val = objective(lvec[None, :])
        better = val > best_val
        best_val = np.where(better, val, best_val)
        best_l = np.where(better[:, None], lvec[None, :], best_l)

    # coordinate-wise golden-section refinement around the coarse argmax
    for comp in range(l_dim):
        lo = np.maximum(best_l[:, comp] - spacing, 0.0)
        hi = np.minimum(best_l[:, comp] + spacing, config.l_max)
        for _ in range(config.refine_iters):
            c = hi - _INVPHI * (hi - lo)
            d = lo + _INVPHI * (hi - lo)
            lc = best_l.copy()
            lc[:, comp] = c
            ld = best_l.copy()
            ld[:, comp] = d
            fc = objective(lc)
            fd = objective(ld)
            go_right = fc < fd
            lo = np.where(go_right, c, lo)
            hi = np.where(go_right, hi, d)
        mid = 0.5 * (lo + hi)
        cand = best_l.copy()
        cand[:, comp] = mid
        cand_val = objective(cand)
        better = cand_val > best_val
        best_val = np.where(better, cand_val, best_val)
        best_l[:, comp] = np.where(better, mid, best_l[:, comp])

    # unbounded-supremum detection: argmax on the boundary with the objective
    # still increasing means the model violates value finiteness
    eps = 1e-3 * config.l_max
    for comp in range(l_dim):
        at_edge = best_l[:, comp] >= config.l_max - eps
        if not np.any(at_edge):
            continue
        edge = best_l.copy()
        edge[:, comp] = config.l_max
        inside = best_l.copy()
        inside[:, comp] = config.l_max - eps
        growing = at_edge & (objective(edge) > objective(inside) + 1e-12)
        if np.any(growing):
            raise NumericalError(
                f"possibly unbounded face-lift in push component {comp}; "
                "the terminal reward keeps improving at the l_max boundary"
            )
    return best_val


def facelift_h(model: ModelSpec, path: PathBatch, config: Optional[FaceliftConfig] = None) -> float:
    """Face-lifted terminal reward of a single path."""
    if path.n_paths != 1:
        raise PreconditionError("facelift_h takes a one-path batch")
    return float(facelift_terminal(model, path, config)[0])


def facelift_terminal_spec(model: ModelSpec, config: Optional[FaceliftConfig] = None) -> TerminalSpec:
    """Terminal callable usable as solve_bsde's terminal condition."""
    return lambda paths: facelift_terminal(model, paths, config)


@dataclass
class FaceliftDiagnostic:
    m: int
    j: float
    y0_h: float
    stderr_h: float
    y0_lift: float
    stderr_lift: float
    gap_h: float
    gap_lift: float


def terminal_jump_diagnostic(
    model: ModelSpec,
    grid: TimeGrid,
    N: int,
    seed: int,
    j_large: float,
    basis: Optional[RegressionBasis] = None,
    config: Optional[FaceliftConfig] = None,
    x0=0.0,
    bandwidth: float = 0.3,
) -> FaceliftDiagnostic:
    """Solve the penalized BSDE with terminal h and with its face-lift on
    coupled seeds, and report the pre-terminal gaps.

    gap_h / gap_lift are the differences between the value one step before T
    and the average terminal reward; a vanishing gap_lift as the grid is
    refined is the discrete signature of a removed terminal jump.
    """
    bw = gen_brownian(grid, N, model.dims.n, seed)
    paths = euler_uncontrolled(model, grid, bw, x0)
    sol_h = solve_bsde(
        model, grid, paths, bw, driver="penalized", j=j_large, terminal="h",
        basis=basis, bandwidth=bandwidth,
    )
    lifted = facelift_terminal_spec(model, config)
    sol_lift = solve_bsde(
        model, grid, paths, bw, driver="penalized", j=j_large, terminal=lifted,
        basis=basis, bandwidth=bandwidth,
    )
    m = grid.m
    h_vals = np.asarray(model.h(paths.full()), dtype=float)
    lift_vals = np.asarray(lifted(paths.full()), dtype=float)
    return FaceliftDiagnostic(
        m=m,
        j=float(j_large),
        y0_h=sol_h.y0,
        stderr_h=sol_h.y0_stderr,
        y0_lift=sol_lift.y0,
        stderr_lift=sol_lift.y0_stderr,
        gap_h=float(np.mean(sol_h.y[:, m - 1]) - np.mean(h_vals)),
        gap_lift=float(np.mean(sol_lift.y[:, m - 1]) - np.mean(lift_vals)),
    )
