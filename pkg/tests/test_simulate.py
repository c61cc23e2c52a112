import csv
import gzip

import numpy as np
import pytest

import penbsde as pb
from penbsde.errors import PreconditionError
from penbsde.simulate import dump_paths, girsanov_weights, rollout_controlled


@pytest.fixture
def grid():
    return pb.TimeGrid.uniform(1.0, 10)


def test_time_grid_properties(grid):
    assert grid.T == 1.0
    assert grid.m == 10
    assert np.allclose(grid.dt, 0.1)
    with pytest.raises(PreconditionError):
        pb.TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(PreconditionError):
        pb.TimeGrid.uniform(-1.0, 10)


def test_brownian_determinism_and_streams(grid):
    a = pb.gen_brownian(grid, 100, 2, seed=5)
    b = pb.gen_brownian(grid, 100, 2, seed=5)
    assert np.array_equal(a.increments, b.increments)
    c = pb.gen_brownian(grid, 100, 2, seed=6)
    assert not np.array_equal(a.increments, c.increments)
    d = pb.gen_brownian(grid, 100, 2, seed=5, stream="policy-eval")
    assert not np.array_equal(a.increments, d.increments)
    with pytest.raises(PreconditionError):
        pb.gen_brownian(grid, 100, 2, seed=5, stream="nope")


def test_brownian_increment_moments(grid):
    bw = pb.gen_brownian(grid, 50_000, 1, seed=0)
    var = bw.increments.var(axis=0)[:, 0]
    assert np.allclose(var, grid.dt, rtol=0.05)
    assert abs(bw.increments.mean()) < 3.0 / np.sqrt(50_000 * grid.m)


def test_euler_uncontrolled_brownian_state(grid):
    # fuel1d has sigma = 1, eta = 0: the state is exactly x0 + cumsum(dW)
    model = pb.builtin_model("fuel1d")
    bw = pb.gen_brownian(grid, 64, 1, seed=2)
    paths = pb.euler_uncontrolled(model, grid, bw, 0.5)
    expected = 0.5 + np.cumsum(bw.increments[:, :, 0], axis=1)
    assert np.allclose(paths.states[:, 1:, 0], expected)
    assert np.all(paths.states[:, 0, 0] == 0.5)


def test_rollout_controlled_push_shifts_state(grid):
    model = pb.builtin_model("fuel1d")
    bw = pb.gen_brownian(grid, 64, 1, seed=2)
    policy = pb.constant_policy(model, b=2.0, j=4.0)
    controlled, a_hist, b_hist = rollout_controlled(model, grid, bw, policy, 0.0)
    free = pb.euler_uncontrolled(model, grid, bw, 0.0)
    # sigma = nu_tilde = 1: a constant density b adds b * t of drift
    drift = 2.0 * grid.times[1:]
    assert np.allclose(controlled.states[:, 1:, 0] - free.states[:, 1:, 0], drift)
    assert np.all(b_hist == 2.0)
    assert a_hist.shape == (64, grid.m, 1)


def test_policy_density_outside_box_rejected(grid):
    model = pb.builtin_model("fuel1d")
    bw = pb.gen_brownian(grid, 8, 1, seed=2)
    bad = pb.Policy(
        a_map=lambda s, h: np.zeros((h.n_paths, 1)),
        b_map=lambda s, h: np.full((h.n_paths, 1), 9.0),
        j=4.0,
        kind="user",
    )
    with pytest.raises(PreconditionError):
        rollout_controlled(model, grid, bw, bad, 0.0)


def test_girsanov_weights_mean_one(grid):
    model = pb.builtin_model("fuel1d")
    bw = pb.gen_brownian(grid, 50_000, 1, seed=3)
    paths = pb.euler_uncontrolled(model, grid, bw, 0.0)
    policy = pb.constant_policy(model, b=1.0, j=2.0)
    w = girsanov_weights(model, grid, paths, bw, policy)
    assert abs(w.mean() - 1.0) <= 3.0 * w.std(ddof=1) / np.sqrt(w.size)
    assert np.all(w > 0)


def test_girsanov_requires_uncontrolled(grid):
    model = pb.builtin_model("fuel1d")
    bw = pb.gen_brownian(grid, 16, 1, seed=3)
    policy = pb.constant_policy(model, b=1.0, j=2.0)
    controlled, _, _ = rollout_controlled(model, grid, bw, policy, 0.0)
    with pytest.raises(PreconditionError):
        girsanov_weights(model, grid, controlled, bw, policy)


@pytest.mark.parametrize("use_gzip", [False, True])
def test_dump_paths_csv_contract(tmp_path, grid, use_gzip):
    model = pb.builtin_model("fuel1d")
    bw = pb.gen_brownian(grid, 3, 1, seed=4)
    paths = pb.euler_uncontrolled(model, grid, bw, 0.0)
    out = tmp_path / ("paths.csv.gz" if use_gzip else "paths.csv")
    dump_paths(paths, str(out), gzip=use_gzip)
    opener = (lambda p: gzip.open(p, "rt")) if use_gzip else open
    with opener(str(out)) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["path_id", "step", "time", "state_0"]
    assert len(rows) == 1 + 3 * (grid.m + 1)
    # first data row is path 0 at t = 0
    assert rows[1][:3] == ["0", "0", "0.0"]
    assert float(rows[1][3]) == 0.0
    # values round-trip exactly through repr
    assert float(rows[2][3]) == paths.states[0, 1, 0]
