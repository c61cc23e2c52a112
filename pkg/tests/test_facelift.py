import dataclasses

import numpy as np
import pytest

import penbsde as pb
from penbsde.errors import NumericalError, PreconditionError
from penbsde.facelift import facelift_terminal_spec


def _terminal_batch(model, xs):
    xs = np.asarray(xs, dtype=float)
    states = np.zeros((xs.size, 2, 1))
    states[:, 1, 0] = xs
    return pb.PathBatch(states, np.array([0.0, 1.0]))


def test_facelift_dominates_h_pointwise():
    model = pb.builtin_model("facelift_demo")
    batch = _terminal_batch(model, np.linspace(-3.0, 3.0, 41))
    lifted = pb.facelift_terminal(model, batch)
    h = model.h(batch)
    assert np.all(lifted >= h - 1e-12)
    # below the target the push is profitable, so the lift is strict there
    assert lifted[0] > h[0] + 1e-6


def test_facelift_exact_when_nu_is_zero():
    base = pb.builtin_model("facelift_demo")
    model = dataclasses.replace(
        base, nu_tilde=lambda t, x, a: np.zeros((x.n_paths, 1, 1)), name="nopush"
    )
    batch = _terminal_batch(model, np.linspace(-2.0, 2.0, 17))
    lifted = pb.facelift_terminal(model, batch)
    assert np.allclose(lifted, model.h(batch), atol=1e-12)


def test_facelift_exact_when_g_is_zero():
    # free pushes: lifted_h(x) = sup_{l >= 0} h(x + l) = h(max(x, target))
    base = pb.builtin_model("facelift_demo", kappa=0.5, target=1.0)
    model = dataclasses.replace(
        base, g=lambda t, x, a: np.zeros((x.n_paths, 1)), name="freepush"
    )
    xs = np.linspace(-2.0, 2.0, 17)
    lifted = pb.facelift_terminal(model, _terminal_batch(model, xs))
    expected = -np.maximum(xs - 1.0, 0.0) ** 2
    assert np.allclose(lifted, expected, atol=1e-10)


def test_facelift_known_value_quadratic_case():
    # h(x) = -(x - K)^2 with push cost kappa: the optimal terminal push from
    # x < K - kappa/2 stops at K - kappa/2, giving
    # lifted_h(x) = -kappa (K - kappa/4 - x) there
    kappa, K = 0.5, 1.0
    model = pb.builtin_model("facelift_demo", kappa=kappa, target=K)
    x = -1.0
    lifted = pb.facelift_h(model, _terminal_batch(model, [x]))
    expected = -kappa * (K - kappa / 4.0 - x)
    assert lifted == pytest.approx(expected, abs=1e-8)
    # above the kink the lift coincides with h
    x_hi = K
    assert pb.facelift_h(model, _terminal_batch(model, [x_hi])) == pytest.approx(
        model.h(_terminal_batch(model, [x_hi]))[0], abs=1e-10
    )


def test_facelift_idempotent():
    model = pb.builtin_model("facelift_demo")
    batch = _terminal_batch(model, np.linspace(-2.0, 2.0, 9))
    once = pb.facelift_terminal(model, batch)
    lifted_model = dataclasses.replace(
        model, h=lambda p: pb.facelift_terminal(model, p), name="lifted"
    )
    twice = pb.facelift_terminal(lifted_model, batch)
    assert np.allclose(twice, once, atol=1e-6)


def test_unbounded_facelift_detected():
    base = pb.builtin_model("facelift_demo")
    grow = dataclasses.replace(
        base,
        h=lambda p: p.terminal()[:, 0],
        g=lambda t, x, a: np.zeros((x.n_paths, 1)),
        name="unbounded",
    )
    with pytest.raises(NumericalError, match="unbounded"):
        pb.facelift_terminal(grow, _terminal_batch(grow, [0.0]))


def test_facelift_config_validation():
    with pytest.raises(PreconditionError):
        pb.FaceliftConfig(l_max=-1.0)
    with pytest.raises(PreconditionError):
        pb.FaceliftConfig(coarse_points=1)


def test_facelift_h_requires_single_path():
    model = pb.builtin_model("facelift_demo")
    with pytest.raises(PreconditionError):
        pb.facelift_h(model, _terminal_batch(model, [0.0, 1.0]))


def test_terminal_jump_diagnostic_small():
    model = pb.builtin_model("facelift_demo")
    grid = pb.TimeGrid.uniform(1.0, 10)
    diag = pb.terminal_jump_diagnostic(model, grid, 4000, 0, j_large=20.0)
    assert diag.m == 10
    # the lifted terminal removes (almost all of) the pre-terminal jump
    assert abs(diag.gap_lift) < 0.1 * abs(diag.gap_h)
    # both runs estimate the same value up to the terminal refinement error
    assert diag.y0_lift >= diag.y0_h - 1e-9


def test_facelift_terminal_spec_plugs_into_solver():
    model = pb.builtin_model("facelift_demo")
    grid = pb.TimeGrid.uniform(1.0, 10)
    bw = pb.gen_brownian(grid, 2000, 1, seed=0)
    paths = pb.euler_uncontrolled(model, grid, bw, 0.0)
    spec = facelift_terminal_spec(model)
    sol = pb.solve_bsde(model, grid, paths, bw, driver="penalized", j=20.0, terminal=spec)
    assert np.isfinite(sol.y0)
