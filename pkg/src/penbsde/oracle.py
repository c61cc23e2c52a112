"""Desk-scale ground truth: finite-difference HJB with gradient constraint,
exhaustive dynamic programming on tiny trees, and a linear-drift closed form.

The FD solver handles 1-D Markovian instances only.  Without a penalty
level it alternates an explicit unconstrained HJB step with a projection
sweep enforcing the push constraint (value dominates any instantaneous
push); with a penalty level j it adds j times the positive part of the
constraint to the Hamiltonian, mirroring the penalized driver.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError, PreconditionError
from .model import ModelSpec, PathBatch

Array = np.ndarray


@dataclass(frozen=True)
class Grid1D:
    """Uniform space-time lattice for the 1-D FD solver."""

    x_min: float
    x_max: float
    nx: int
    nt: int

    def __post_init__(self):
        if self.x_min >= self.x_max:
            raise PreconditionError("need x_min < x_max")
        if self.nx < 3 or self.nt < 1:
            raise PreconditionError("need nx >= 3 and nt >= 1")

    @property
    def x(self) -> Array:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)


def _markov_eval(model: ModelSpec, t: float, x: Array):
    """Evaluate coefficients on a batch of single-point paths at state x."""
    batch = PathBatch(x[:, None, None], np.array([t]))
    return batch


def _require_1d_markov(model: ModelSpec):
    if not model.markovian:
        raise PreconditionError("oracle requires a Markovian model")
    if model.dims.d != 1 or model.dims.n != 1 or model.dims.l != 1:
        raise PreconditionError("oracle handles d = n = l = 1 only")


@dataclass
class HjbSolution:
    x: Array
    u0: Array  # value at t = 0 on the space grid
    snapshots_t: Array
    snapshots_u: Array  # (num_snapshots, nx)
    j: Optional[float]

    def value_at(self, x0: float) -> float:
        if not (self.x[0] <= x0 <= self.x[-1]):
            raise PreconditionError(f"x0={x0} outside the FD domain")
        return float(np.interp(x0, self.x, self.u0))

    def write_csv(self, filename: str) -> None:
        with open(filename, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "u"])
            for ti, t in enumerate(self.snapshots_t):
                for xi, xv in enumerate(self.x):
                    writer.writerow(
                        [repr(float(t)), repr(float(xv)), repr(float(self.snapshots_u[ti, xi]))]
                    )


def _projection_sweep(u: Array, slope_bound: Array, dx: float, push_right: bool) -> Array:
    """Enforce u(x) >= u(x + push) + reward-per-push via a directional sweep.

    ``slope_bound`` is max over the control grid of g / |nu| per space node
    (reward per unit of state displacement).
    """
    out = u.copy()
    if push_right:
        for i in range(out.size - 2, -1, -1):
            cand = out[i + 1] + slope_bound[i] * dx
            if cand > out[i]:
                out[i] = cand
    else:
        for i in range(1, out.size):
            cand = out[i - 1] + slope_bound[i] * dx
            if cand > out[i]:
                out[i] = cand
    return out


def solve_hjb_fd(
    model: ModelSpec,
    T: float,
    grid1d: Grid1D,
    j: Optional[float] = None,
    x0: Optional[float] = None,
) -> HjbSolution:
    """Backward explicit FD scheme for the 1-D gradient-constrained HJB."""
    _require_1d_markov(model)
    x = grid1d.x
    dx = grid1d.dx
    dt = T / grid1d.nt
    nx = grid1d.nx
    na = model.control_grid.size

    # precompute t-independence is not assumed; coefficients re-evaluated per step
    def coeff_tables(t: float):
        batch = _markov_eval(model, t, x)
        sig = model.sigma(t, batch)[:, 0, 0]
        eta = model.eta(t, batch)[:, 0]
        drift = np.empty((na, nx))
        fvals = np.empty((na, nx))
        gvals = np.empty((na, nx))
        nuvals = np.empty((na, nx))
        for ia in range(na):
            a = model.control_grid.points[ia]
            drift[ia] = eta + sig * model.mu_tilde(t, batch, a)[:, 0]
            fvals[ia] = model.f(t, batch, a)
            gvals[ia] = model.g(t, batch, a)[:, 0]
            nuvals[ia] = sig * model.nu_tilde(t, batch, a)[:, 0, 0]
        return sig, drift, fvals, gvals, nuvals

    sig0, drift0, _, _, nu0 = coeff_tables(0.0)
    ratio = float(np.max(sig0**2)) * dt / dx**2
    if ratio > 0.5 + 1e-12:
        raise NumericalError(
            f"explicit-scheme stability ratio sigma^2 dt/dx^2 = {ratio:.3f} > 0.5; "
            "increase nt or coarsen nx"
        )
    adv = float(np.max(np.abs(drift0))) + (j or 0.0) * float(np.max(np.abs(nu0)))
    if ratio + adv * dt / dx > 1.0 + 1e-12:
        raise NumericalError(
            "monotonicity (CFL) violated including drift/penalty advection; increase nt"
        )

    if np.all(nu0 >= 0):
        push_right = True
    elif np.all(nu0 <= 0):
        push_right = False
    else:
        raise PreconditionError("FD oracle needs a sign-constant push direction nu")

    # terminal condition
    batch_T = _markov_eval(model, T, x)
    u = np.asarray(model.h(batch_T), dtype=float)

    def constraint_tables(gvals, nuvals):
        # reward per unit of displacement, maximized over the control grid
        with np.errstate(divide="ignore", invalid="ignore"):
            per_unit = np.where(np.abs(nuvals) > 1e-14, gvals / np.abs(nuvals), -np.inf)
        return per_unit.max(axis=0)

    if j is None:
        _, _, _, gT, nuT = coeff_tables(T)
        u = _projection_sweep(u, constraint_tables(gT, nuT), dx, push_right)

    store_every = max(1, grid1d.nt // 200)
    snaps_t = [T]
    snaps_u = [u.copy()]

    for k in range(grid1d.nt - 1, -1, -1):
        t = k * dt
        sig, drift, fvals, gvals, nuvals = coeff_tables(t)

        d2u = np.zeros(nx)
        d2u[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx**2  # u_xx = 0 at edges
        du_fwd = np.empty(nx)
        du_fwd[:-1] = (u[1:] - u[:-1]) / dx
        du_fwd[-1] = du_fwd[-2]
        du_bwd = np.empty(nx)
        du_bwd[1:] = (u[1:] - u[:-1]) / dx
        du_bwd[0] = du_bwd[1]

        ham = np.full(nx, -np.inf)
        for ia in range(na):
            du = np.where(drift[ia] >= 0, du_fwd, du_bwd)  # upwind
            ham = np.maximum(ham, fvals[ia] + drift[ia] * du)
        u_new = u + dt * (0.5 * sig**2 * d2u + ham)

        if j is not None:
            pen = np.full(nx, -np.inf)
            for ia in range(na):
                du = np.where(nuvals[ia] >= 0, du_fwd, du_bwd)
                pen = np.maximum(pen, gvals[ia] + nuvals[ia] * du)
            u_new = u_new + dt * j * np.maximum(pen, 0.0)
        else:
            u_new = _projection_sweep(
                u_new, constraint_tables(gvals, nuvals), dx, push_right
            )

        if not np.all(np.isfinite(u_new)):
            raise NumericalError(f"non-finite FD solution at time step {k}")
        u = u_new
        if k % store_every == 0:
            snaps_t.append(t)
            snaps_u.append(u.copy())

    return HjbSolution(
        x=x,
        u0=u,
        snapshots_t=np.array(snaps_t[::-1]),
        snapshots_u=np.array(snaps_u[::-1]),
        j=j,
    )


def default_grid1d(
    model: ModelSpec,
    T: float,
    x0: float,
    nx: int = 401,
    width_std: float = 5.0,
    j: Optional[float] = None,
) -> Grid1D:
    """Domain of +-width_std uncontrolled standard deviations around x0, with
    nt chosen to satisfy the explicit stability and CFL bounds."""
    _require_1d_markov(model)
    probe = PathBatch(np.array([[[x0]]]), np.array([0.0]))
    sig = float(np.abs(model.sigma(0.0, probe)[0, 0, 0]))
    eta = float(np.abs(model.eta(0.0, probe)[0, 0]))
    half = width_std * max(sig, 1e-6) * np.sqrt(T) + (eta + sig * model.bound_mu) * T
    x_min, x_max = x0 - half, x0 + half
    dx = (x_max - x_min) / (nx - 1)
    adv = sig * model.bound_mu + eta + (j or 0.0) * sig * model.bound_nu
    dt_max = 0.9 / (sig**2 / dx**2 + adv / dx + 1e-12)
    dt_max = min(dt_max, 0.45 * dx**2 / max(sig**2, 1e-12))
    nt = max(int(np.ceil(T / dt_max)), 1)
    return Grid1D(x_min=x_min, x_max=x_max, nx=nx, nt=nt)


def brute_force_dp(
    model: ModelSpec,
    T: float,
    m: int,
    x0: float,
    b_grid: Sequence[float],
    max_nodes: int = 10_000_000,
) -> float:
    """Exact optimum of the tiny discretized problem by exhaustive backward
    induction over the full scenario/control tree with binomial noise.

    ``b_grid`` lists the admissible push densities per singular component;
    the noise takes +-sqrt(dt) with probability one half each.
    """
    _require_1d_markov(model)
    if m < 1:
        raise PreconditionError("need m >= 1")
    na = model.control_grid.size
    l = model.dims.l
    b_candidates = np.array(list(itertools.product(b_grid, repeat=l)), dtype=float)
    nb = b_candidates.shape[0]
    branching = na * nb * 2
    if branching**m > max_nodes:
        raise PreconditionError(
            f"scenario/control tree has {branching ** m} leaves > {max_nodes}"
        )
    dt = T / m
    times = np.linspace(0.0, T, m + 1)
    sqdt = np.sqrt(dt)

    states = np.full((1, 1, 1), float(x0))
    rewards = []  # per level: (N_s, na, nb)
    for s in range(m):
        N_s = states.shape[0]
        hist = PathBatch(states, times[: s + 1])
        t = float(times[s])
        sig = model.sigma(t, hist)[:, 0, 0]
        eta = model.eta(t, hist)[:, 0]
        step_reward = np.empty((N_s, na, nb))
        children = np.empty((N_s, na, nb, 2, s + 2, 1))
        for ia in range(na):
            a = model.control_grid.points[ia]
            mt = model.mu_tilde(t, hist, a)[:, 0]
            nt_ = model.nu_tilde(t, hist, a)[:, 0, :]  # (N_s, l)
            fv = model.f(t, hist, a)
            gv = model.g(t, hist, a)  # (N_s, l)
            for ib in range(nb):
                b = b_candidates[ib]
                step_reward[:, ia, ib] = fv * dt + gv @ b * dt
                base = states[:, -1, 0] + eta * dt + sig * (mt * dt + nt_ @ b * dt)
                for iz, dw in enumerate((sqdt, -sqdt)):
                    children[:, ia, ib, iz, : s + 1, 0] = states[:, :, 0]
                    children[:, ia, ib, iz, s + 1, 0] = base + sig * dw
        rewards.append(step_reward)
        states = children.reshape(N_s * branching, s + 2, 1)

    value = np.asarray(model.h(PathBatch(states, times)), dtype=float)
    for s in range(m - 1, -1, -1):
        N_s = rewards[s].shape[0]
        value = value.reshape(N_s, na, nb, 2).mean(axis=3)
        value = (rewards[s] + value).max(axis=(1, 2))
    return float(value[0])


def coarse_lattice_value(
    model: ModelSpec,
    T: float,
    m: int,
    b_grid: Sequence[float],
    N: int = 100_000,
    seed: int = 7,
    x0: float = 0.0,
):
    """Regression-BSDE value on the same coarse lattice brute_force_dp uses.

    Draws binomial +-sqrt(dt) noise, restricts the penalized driver's push
    candidates to ``b_grid`` with j = max(b_grid), and solves backward.
    The result is directly comparable to ``brute_force_dp(model, T, m, x0,
    b_grid)``; the only differences are Monte Carlo noise and regression
    error on the lattice states.
    """
    from .bsde import RegressionBasis, solve_bsde
    from .simulate import BrownianBatch, TimeGrid, euler_uncontrolled

    _require_1d_markov(model)
    levels = sorted({float(b) for b in b_grid})
    if not levels or levels[0] < 0:
        raise PreconditionError("b_grid must be nonnegative and nonempty")
    j = levels[-1]
    if j <= 0:
        raise PreconditionError("b_grid needs a positive level")
    grid = TimeGrid.uniform(T, m)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    signs = rng.integers(0, 2, size=(N, m, model.dims.n)) * 2.0 - 1.0
    bw = BrownianBatch(increments=signs * np.sqrt(grid.dt)[None, :, None], seed=seed, grid=grid)
    paths = euler_uncontrolled(model, grid, bw, x0)
    # degree-1 basis: the lattice has too few distinct states for higher degrees
    basis = RegressionBasis.polynomial(model.dims.d, degree=1)
    sol = solve_bsde(
        model, grid, paths, bw,
        driver="penalized", j=j, basis=basis,
        push_grid=[b for b in levels if b > 0],
    )
    return sol.y0, sol.y0_stderr


def closed_form_linear(theta, T: float, terminal: str = "terminal_state") -> float:
    """Reference value for the linear driver p = theta . z with Brownian state
    and terminal reward summing the terminal state components."""
    if terminal != "terminal_state":
        raise PreconditionError(f"unsupported terminal tag {terminal!r}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return float(np.sum(theta) * T)
