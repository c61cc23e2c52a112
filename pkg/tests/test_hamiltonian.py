import numpy as np
import pytest

import penbsde as pb
from penbsde.errors import PreconditionError
from penbsde.hamiltonian import eval_pj_batch


def _one_path(rng, d=1):
    states = rng.standard_normal((1, 3, d))
    return pb.PathBatch(states, np.array([0.0, 0.5, 1.0]))


def test_linear_model_driver_values():
    model = pb.builtin_model("linear_bsde", theta=0.7)
    path = pb.PathBatch(np.zeros((1, 1, 1)), np.array([0.0]))
    out = pb.eval_p(model, 0.0, path, np.array([2.0]))
    assert out.value == pytest.approx(1.4)
    q = pb.eval_q(model, 0.0, path, np.array([2.0]))
    assert q[0] == pytest.approx(2.0 - 1e6)
    pj = pb.eval_pj(model, 0.0, path, np.array([2.0]), 64.0)
    assert pj.value == pytest.approx(1.4)  # penalty branch inert
    assert np.all(pj.argmax_b == 0.0)


def test_pj_vertex_at_box_corner_and_tie_at_zero():
    model = pb.builtin_model("fuel1d", kappa=0.5)
    path = pb.PathBatch(np.zeros((1, 1, 1)), np.array([0.0]))
    # slope = z - kappa > 0: push at the top vertex
    out = pb.eval_pj(model, 0.0, path, np.array([2.0]), 8.0)
    assert out.argmax_b[0] == 8.0
    assert out.value == pytest.approx(8.0 * 1.5)
    # slope exactly zero is a tie, resolved to b = 0
    tie = pb.eval_pj(model, 0.0, path, np.array([0.5]), 8.0)
    assert tie.argmax_b[0] == 0.0
    assert tie.value == pytest.approx(0.0)


def test_vertex_reduction_matches_exhaustive_b_grid():
    rng = np.random.default_rng(0)
    for model in (pb.builtin_model("fuel1d"), pb.builtin_model("lq1d")):
        path = _one_path(rng)
        for _ in range(200):
            z = rng.standard_normal((1, 1)) * 3.0
            j = float(rng.uniform(0.5, 32.0))
            val, _, _ = eval_pj_batch(model, 0.0, path, z, j)
            # exhaustive search over a b-grid including both endpoints
            b_axis = np.linspace(0.0, j, 9)
            best = -np.inf
            for idx in range(model.control_grid.size):
                a = model.control_grid.points[idx]
                base = float(model.f(0.0, path, a)[0]) + z[0, 0] * model.mu_tilde(0.0, path, a)[0, 0]
                slope = model.g(0.0, path, a)[0, 0] + z[0, 0] * model.nu_tilde(0.0, path, a)[0, 0, 0]
                best = max(best, float(base + (slope * b_axis).max()))
            assert abs(float(val[0]) - best) <= 1e-12


def test_p_and_q_convex_in_z():
    rng = np.random.default_rng(1)
    for name in pb.builtin_names():
        model = pb.builtin_model(name)
        path = _one_path(rng, model.dims.d)
        for _ in range(50):
            z1 = rng.standard_normal(model.dims.n) * 2.0
            z2 = rng.standard_normal(model.dims.n) * 2.0
            lam = rng.uniform()
            zmid = lam * z1 + (1.0 - lam) * z2
            p1 = pb.eval_p(model, 0.0, path, z1).value
            p2 = pb.eval_p(model, 0.0, path, z2).value
            pm = pb.eval_p(model, 0.0, path, zmid).value
            assert pm <= lam * p1 + (1.0 - lam) * p2 + 1e-10
            q1 = pb.eval_q(model, 0.0, path, z1)
            q2 = pb.eval_q(model, 0.0, path, z2)
            qm = pb.eval_q(model, 0.0, path, zmid)
            assert np.all(qm <= lam * q1 + (1.0 - lam) * q2 + 1e-10)


def test_pj_monotone_in_j():
    rng = np.random.default_rng(2)
    model = pb.builtin_model("fuel1d")
    samples = [
        (0.0, _one_path(rng), rng.standard_normal(1) * 2.0) for _ in range(25)
    ]
    report = pb.pj_monotone_report(model, samples, [1.0, 2.0, 4.0, 8.0, 16.0])
    assert report.ok, report.violations
    assert report.values.shape == (25, 5)


def test_pj_rejects_negative_j_and_nonfinite_z():
    model = pb.builtin_model("fuel1d")
    path = pb.PathBatch(np.zeros((1, 1, 1)), np.array([0.0]))
    with pytest.raises(PreconditionError):
        pb.eval_pj(model, 0.0, path, np.array([0.0]), -1.0)
    with pytest.raises(PreconditionError):
        pb.eval_pj(model, 0.0, path, np.array([np.nan]), 1.0)
