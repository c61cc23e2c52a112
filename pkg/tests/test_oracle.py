import numpy as np
import pytest

import penbsde as pb
from penbsde.errors import PreconditionError


def test_closed_form_linear():
    assert pb.closed_form_linear(0.5, 1.0) == 0.5
    assert pb.closed_form_linear([0.25, 0.25], 2.0) == 1.0
    with pytest.raises(PreconditionError):
        pb.closed_form_linear(0.5, 1.0, terminal="other")


def test_hjb_fd_uncontrolled_heat_equation():
    # with the push constraint disabled by an enormous cost the value is the
    # plain heat-kernel expectation E[-(x0 + W_T)^2] = -(x0^2 + T)
    model = pb.builtin_model("fuel1d", kappa=1e6)
    grid1d = pb.default_grid1d(model, 1.0, 0.0, nx=301)
    sol = pb.solve_hjb_fd(model, 1.0, grid1d)
    for x0 in (-0.5, 0.0, 0.5):
        assert sol.value_at(x0) == pytest.approx(-(x0**2) - 1.0, abs=5e-3)


def test_hjb_fd_constrained_fuel_reference_value():
    model = pb.builtin_model("fuel1d")
    grid1d = pb.default_grid1d(model, 1.0, 0.0)
    sol = pb.solve_hjb_fd(model, 1.0, grid1d)
    # frozen reference for the constrained problem at (0, 0); the gradient
    # constraint u_x <= kappa binds below the target
    assert sol.value_at(0.0) == pytest.approx(-0.6703, abs=2e-3)
    # constrained value improves on doing nothing (-1) and is below 0
    assert -1.0 < sol.value_at(0.0) < 0.0


def test_hjb_fd_penalized_increases_towards_constrained():
    model = pb.builtin_model("fuel1d")
    vals = []
    for j in (1.0, 4.0, 16.0):
        grid1d = pb.default_grid1d(model, 1.0, 0.0, j=j)
        vals.append(pb.solve_hjb_fd(model, 1.0, grid1d, j=j).value_at(0.0))
    assert vals[0] < vals[1] < vals[2]
    grid1d = pb.default_grid1d(model, 1.0, 0.0)
    constrained = pb.solve_hjb_fd(model, 1.0, grid1d).value_at(0.0)
    assert vals[2] <= constrained + 5e-3


def test_hjb_fd_rejects_non_markovian_and_multidim():
    import dataclasses
    model = pb.builtin_model("fuel1d")
    bad = dataclasses.replace(model, markovian=False)
    with pytest.raises(PreconditionError):
        pb.solve_hjb_fd(bad, 1.0, pb.Grid1D(-3, 3, 101, 2000))


def test_brute_force_dp_one_step_hand_value():
    # m = 1, no push: value = E[h(x0 + dW)] with dW = +-1, h = -(x)^2 -> -1
    model = pb.builtin_model("fuel1d")
    assert pb.brute_force_dp(model, 1.0, 1, 0.0, [0.0]) == pytest.approx(-1.0)
    # allowing a strong push from x0 = -2: pushing b=2 for dt=1 reaches 0,
    # costing kappa * 2 = 1; value = -E[dW^2] - 1 = -2, better than -5
    assert pb.brute_force_dp(model, 1.0, 1, -2.0, [0.0, 2.0]) == pytest.approx(-2.0)


def test_brute_force_dp_invariant_under_control_relabeling():
    model = pb.builtin_model("fuel1d")
    v1 = pb.brute_force_dp(model, 1.0, 3, 0.0, [0.0, 4.0, 8.0])
    v2 = pb.brute_force_dp(model, 1.0, 3, 0.0, [8.0, 0.0, 4.0])
    assert v1 == v2


def test_brute_force_dp_frozen_coarse_instance():
    model = pb.builtin_model("fuel1d")
    val = pb.brute_force_dp(model, 1.0, 4, 0.0, [0.0, 4.0, 8.0])
    assert val == pytest.approx(-0.8125, abs=1e-12)


def test_brute_force_dp_tree_budget_guard():
    model = pb.builtin_model("lq1d")  # 21 grid points blow the budget quickly
    with pytest.raises(PreconditionError):
        pb.brute_force_dp(model, 1.0, 5, 0.0, [0.0, 1.0, 2.0], max_nodes=10_000)


def test_coarse_lattice_solver_matches_dp():
    model = pb.builtin_model("fuel1d")
    dp = pb.brute_force_dp(model, 1.0, 4, 0.0, [0.0, 4.0, 8.0])
    with np.errstate(all="ignore"):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            y0, se = pb.coarse_lattice_value(model, 1.0, 4, [0.0, 4.0, 8.0], N=20_000)
    assert abs(y0 - dp) <= 0.05


def test_hjb_csv_dump(tmp_path):
    model = pb.builtin_model("fuel1d")
    grid1d = pb.Grid1D(-3.0, 3.0, 61, 4000)
    sol = pb.solve_hjb_fd(model, 1.0, grid1d)
    out = tmp_path / "hjb.csv"
    sol.write_csv(str(out))
    import csv
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "u"]
    assert len(rows) > 61
