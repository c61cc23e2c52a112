"""Problem data: dimensions, control grids, coefficient functionals, builtins.

Coefficient conventions
-----------------------
All coefficient functionals are vectorized over a batch of N paths and
receive a :class:`PathBatch` holding the discretized history up to the
query time (inclusive).  Shapes:

    sigma(t, x)       -> (N, d, n)
    eta(t, x)         -> (N, d)
    mu_tilde(t, x, a) -> (N, n)
    nu_tilde(t, x, a) -> (N, n, l)
    f(t, x, a)        -> (N,)
    g(t, x, a)        -> (N, l)
    h(x)              -> (N,)      (x is the full path here)

The regular control ``a`` is either a single point of shape (k,) shared by
all paths, or a per-path array of shape (N, k); builtins support both by
broadcasting.  The effective coefficients of the controlled dynamics are
mu = eta + sigma mu_tilde and nu = sigma nu_tilde.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import PreconditionError, UnknownModelError

Array = np.ndarray


class PathBatch:
    """A batch of discretized paths together with their time stamps.

    ``states`` has shape (N, s+1, d) and ``times`` shape (s+1,).  Lookups at
    a time t use the piecewise-constant convention: the state at the last
    grid time <= t.
    """

    __slots__ = ("states", "times")

    def __init__(self, states: Array, times: Array):
        states = np.asarray(states, dtype=float)
        times = np.asarray(times, dtype=float)
        if states.ndim != 3:
            raise PreconditionError(f"states must be (N, s+1, d), got {states.shape}")
        if times.shape != (states.shape[1],):
            raise PreconditionError("times must align with the state axis")
        self.states = states
        self.times = times

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def index_of(self, t: float) -> int:
        """Index of the last grid time <= t."""
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        if idx < 0:
            raise PreconditionError(f"time {t} precedes the path start {self.times[0]}")
        return idx

    def at(self, t: float) -> Array:
        """States at time t, shape (N, d)."""
        return self.states[:, self.index_of(t), :]

    def upto(self, t: float) -> "PathBatch":
        """Truncated history up to time t (inclusive)."""
        idx = self.index_of(t)
        return PathBatch(self.states[:, : idx + 1, :], self.times[: idx + 1])

    def terminal(self) -> Array:
        return self.states[:, -1, :]


@dataclass(frozen=True)
class Dimensions:
    """State, noise and control dimensions (d, n, k, l)."""

    d: int
    n: int
    k: int
    l: int

    def __post_init__(self):
        for name in ("d", "n", "k", "l"):
            if getattr(self, name) < 1:
                raise PreconditionError(f"dimension {name} must be >= 1")


@dataclass(frozen=True)
class ControlGrid:
    """Finite grid discretizing the compact regular-control set."""

    points: Array  # (num_points, k)
    lower: Array  # (k,) declared component bounds
    upper: Array

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if pts.shape[0] == 0:
            raise PreconditionError("control grid must be nonempty")
        if np.any(pts < self.lower - 1e-12) or np.any(pts > self.upper + 1e-12):
            raise PreconditionError("control grid points outside declared bounds")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @classmethod
    def singleton(cls, point: Sequence[float]) -> "ControlGrid":
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(points=p[None, :], lower=p, upper=p)

    @classmethod
    def uniform_1d(cls, lo: float, hi: float, num: int) -> "ControlGrid":
        pts = np.linspace(lo, hi, num)[:, None]
        return cls(points=pts, lower=np.array([lo]), upper=np.array([hi]))


Coefficient = Callable[..., Array]


@dataclass(frozen=True)
class ModelSpec:
    """All problem coefficients, rewards and the control discretization."""

    dims: Dimensions
    control_grid: ControlGrid
    sigma: Coefficient
    eta: Coefficient
    mu_tilde: Coefficient
    nu_tilde: Coefficient
    f: Coefficient
    g: Coefficient
    h: Callable[[PathBatch], Array]
    bound_mu: float
    bound_nu: float
    markovian: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        return "\n".join(lines)


def _random_history(rng: np.random.Generator, d: int, batch: int = 4):
    m = int(rng.integers(3, 9))
    times = np.sort(rng.uniform(0.0, 1.0, size=m - 1))
    times = np.concatenate([[0.0], times, [1.0]])
    states = rng.standard_normal((batch, times.size, d))
    return PathBatch(states, times)


def validate_model(model: ModelSpec, trials: int = 100, seed: int = 0) -> ValidationReport:
    """Sample-based checks of the structural model assumptions.

    Checks finiteness, the declared bounds on mu_tilde/nu_tilde over the
    control grid, and non-anticipativity of every path functional via
    randomized perturbations strictly after the query time.  Continuity
    assumptions are not machine-checkable and are not checked.  Never
    aborts mid-scan; all failures are collected into the report.
    """
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    d, n, k, l = model.dims.d, model.dims.n, model.dims.k, model.dims.l

    finite_fail = None
    bound_mu_fail = None
    bound_nu_fail = None
    nonant_fail = {}

    named = [
        ("sigma", lambda t, x, a: model.sigma(t, x), (None, d, n)),
        ("eta", lambda t, x, a: model.eta(t, x), (None, d)),
        ("mu_tilde", model.mu_tilde, (None, n)),
        ("nu_tilde", model.nu_tilde, (None, n, l)),
        ("f", model.f, (None,)),
        ("g", model.g, (None, l)),
    ]

    for trial in range(trials):
        hist = _random_history(rng, d)
        a = model.control_grid.points[int(rng.integers(model.control_grid.size))]
        # query strictly before the final time so there is room to perturb
        t_idx = int(rng.integers(0, hist.times.size - 1))
        t = float(hist.times[t_idx])

        for name, fn, shape in named:
            try:
                val = np.asarray(fn(t, hist, a), dtype=float)
            except Exception as exc:  # collected, not raised
                finite_fail = finite_fail or f"{name} raised {exc!r} at trial {trial}"
                continue
            if not np.all(np.isfinite(val)):
                finite_fail = finite_fail or f"{name} non-finite at trial {trial}, t={t:.4f}"
            # perturb strictly after t and re-evaluate
            perturbed = hist.states.copy()
            perturbed[:, t_idx + 1 :, :] += rng.standard_normal(
                perturbed[:, t_idx + 1 :, :].shape
            )
            val2 = np.asarray(fn(t, PathBatch(perturbed, hist.times), a), dtype=float)
            if not np.allclose(val, val2, rtol=0.0, atol=1e-12, equal_nan=True):
                nonant_fail.setdefault(
                    name, f"trial {trial}, t={t:.4f}: {val.ravel()[:3]} != {val2.ravel()[:3]}"
                )

        mt = np.asarray(model.mu_tilde(t, hist, a), dtype=float)
        if np.any(np.abs(mt) > model.bound_mu + 1e-12):
            bound_mu_fail = bound_mu_fail or (
                f"|mu_tilde|={np.max(np.abs(mt)):.4g} > bound_mu={model.bound_mu} "
                f"at trial {trial}, a={a}"
            )
        nt = np.asarray(model.nu_tilde(t, hist, a), dtype=float)
        if np.any(np.abs(nt) > model.bound_nu + 1e-12):
            bound_nu_fail = bound_nu_fail or (
                f"|nu_tilde|={np.max(np.abs(nt)):.4g} > bound_nu={model.bound_nu} "
                f"at trial {trial}, a={a}"
            )

        # terminal functional: finiteness only (it may read the whole path)
        hval = np.asarray(model.h(hist), dtype=float)
        if not np.all(np.isfinite(hval)):
            finite_fail = finite_fail or f"h non-finite at trial {trial}"

    checks = [
        CheckResult("finiteness", finite_fail is None, finite_fail or ""),
        CheckResult("bound_mu", bound_mu_fail is None, bound_mu_fail or ""),
        CheckResult("bound_nu", bound_nu_fail is None, bound_nu_fail or ""),
    ]
    for name, _, _ in named:
        fail = nonant_fail.get(name)
        checks.append(CheckResult(f"non_anticipativity[{name}]", fail is None, fail or ""))
    return ValidationReport(checks)


# ---------------------------------------------------------------------------
# builtin benchmark models
# ---------------------------------------------------------------------------


def _const(shape_fn):
    def wrapper(t, x, *a):
        return shape_fn(x.n_paths, x)

    return wrapper


def _linear_bsde(theta: float = 0.5) -> ModelSpec:
    # Singleton regular control with mu_tilde = theta; the singular reward is
    # so negative that the penalty branch never activates, reducing the
    # penalized BSDE to a linear one with closed-form value theta * T.
    dims = Dimensions(d=1, n=1, k=1, l=1)
    grid = ControlGrid.singleton([theta])
    return ModelSpec(
        dims=dims,
        control_grid=grid,
        sigma=lambda t, x: np.ones((x.n_paths, 1, 1)),
        eta=lambda t, x: np.zeros((x.n_paths, 1)),
        mu_tilde=lambda t, x, a: np.broadcast_to(
            np.reshape(a, (-1, 1))[..., 0:1], (x.n_paths, 1)
        ).copy(),
        nu_tilde=lambda t, x, a: np.ones((x.n_paths, 1, 1)),
        f=lambda t, x, a: np.zeros(x.n_paths),
        g=lambda t, x, a: np.full((x.n_paths, 1), -1e6),
        h=lambda x: x.terminal()[:, 0],
        bound_mu=abs(theta),
        bound_nu=1.0,
        markovian=True,
        name="linear_bsde",
        params={"theta": theta},
    )


def _lq1d(
    control_cost: float = 1.0,
    state_cost: float = 0.1,
    push_cost: float = 1.0,
    a_max: float = 1.0,
    n_a: int = 21,
) -> ModelSpec:
    dims = Dimensions(d=1, n=1, k=1, l=1)
    grid = ControlGrid.uniform_1d(-a_max, a_max, n_a)

    def f(t, x, a):
        a0 = np.reshape(np.asarray(a, dtype=float), (-1, 1))[..., 0]
        xt = x.at(t)[:, 0]
        return -control_cost * np.broadcast_to(a0**2, xt.shape) - state_cost * xt**2

    return ModelSpec(
        dims=dims,
        control_grid=grid,
        sigma=lambda t, x: np.ones((x.n_paths, 1, 1)),
        eta=lambda t, x: np.zeros((x.n_paths, 1)),
        mu_tilde=lambda t, x, a: np.broadcast_to(
            np.reshape(a, (-1, 1))[..., 0:1], (x.n_paths, 1)
        ).copy(),
        nu_tilde=lambda t, x, a: np.ones((x.n_paths, 1, 1)),
        f=f,
        g=lambda t, x, a: np.full((x.n_paths, 1), -push_cost),
        h=lambda x: -x.terminal()[:, 0] ** 2,
        bound_mu=a_max,
        bound_nu=1.0,
        markovian=True,
        name="lq1d",
        params={
            "control_cost": control_cost,
            "state_cost": state_cost,
            "push_cost": push_cost,
            "a_max": a_max,
            "n_a": n_a,
        },
    )


def _fuel1d(kappa: float = 0.5, target: float = 0.0) -> ModelSpec:
    # Pure singular control: no regular action, unit upward push at marginal
    # cost kappa, quadratic terminal penalty around the target.
    dims = Dimensions(d=1, n=1, k=1, l=1)
    grid = ControlGrid.singleton([0.0])
    return ModelSpec(
        dims=dims,
        control_grid=grid,
        sigma=lambda t, x: np.ones((x.n_paths, 1, 1)),
        eta=lambda t, x: np.zeros((x.n_paths, 1)),
        mu_tilde=lambda t, x, a: np.zeros((x.n_paths, 1)),
        nu_tilde=lambda t, x, a: np.ones((x.n_paths, 1, 1)),
        f=lambda t, x, a: np.zeros(x.n_paths),
        g=lambda t, x, a: np.full((x.n_paths, 1), -kappa),
        h=lambda x: -((x.terminal()[:, 0] - target) ** 2),
        bound_mu=0.0,
        bound_nu=1.0,
        markovian=True,
        name="fuel1d",
        params={"kappa": kappa, "target": target},
    )


def _facelift_demo(kappa: float = 0.5, target: float = 1.0) -> ModelSpec:
    # Same as fuel1d but with the target shifted above the start point, so
    # the gradient constraint binds at most reachable terminal states and the
    # face-lifted terminal reward lies strictly above h there.
    m = _fuel1d(kappa=kappa, target=target)
    return ModelSpec(
        dims=m.dims,
        control_grid=m.control_grid,
        sigma=m.sigma,
        eta=m.eta,
        mu_tilde=m.mu_tilde,
        nu_tilde=m.nu_tilde,
        f=m.f,
        g=m.g,
        h=m.h,
        bound_mu=m.bound_mu,
        bound_nu=m.bound_nu,
        markovian=True,
        name="facelift_demo",
        params={"kappa": kappa, "target": target},
    )


_BUILTINS = {
    "linear_bsde": _linear_bsde,
    "lq1d": _lq1d,
    "fuel1d": _fuel1d,
    "facelift_demo": _facelift_demo,
}


def builtin_model(name: str, **params) -> ModelSpec:
    """Return one of the shipped benchmark models by name."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownModelError(
            f"unknown model {name!r}; available: {', '.join(sorted(_BUILTINS))}"
        ) from None
    return factory(**params)


def builtin_names() -> list:
    return sorted(_BUILTINS)
