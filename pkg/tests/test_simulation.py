import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dclqr.model import BenchmarkPlant, LinearPlant, benchmark_jacobians
from dclqr.simulation import (
    SimConfig,
    noise_streams,
    parameter_trajectory,
    simulate_closed_loop,
    write_trajectory_csv,
)

PLANT = BenchmarkPlant()
Z2 = np.zeros((2, 2))
Z1 = np.zeros((1, 1))


def test_noise_free_origin_stays_put():
    traj = simulate_closed_loop(PLANT, [[-3.0, 7.0]], np.zeros(2), SimConfig(Z2, Z1, horizon=50))
    assert traj.stable and traj.first_violation is None
    assert traj.states.shape == (51, 2) and traj.inputs.shape == (50, 1)
    assert not traj.states.any()


def test_autonomous_linear_decay():
    traj = simulate_closed_loop(BenchmarkPlant(theta=0.0), np.zeros((1, 2)), [0.0, 1.0],
                                SimConfig(Z2, Z1, horizon=40))
    np.testing.assert_allclose(traj.states[:, 1], 0.95 ** np.arange(41), rtol=1e-13)


def test_recorded_noise_replays_trajectory():
    W, V = np.diag([0.2, 0.1]), np.array([[0.05]])
    K = np.array([[-0.5, -1.0]])
    traj = simulate_closed_loop(PLANT, K, [0.3, -0.2], SimConfig(W, V, horizon=200, seed=9))
    for k in range(len(traj.inputs)):
        np.testing.assert_allclose(traj.inputs[k], K @ traj.states[k] + traj.excitation[k], atol=1e-15)
        np.testing.assert_allclose(traj.states[k + 1],
                                   PLANT.step(traj.states[k], traj.inputs[k], traj.process_noise[k]),
                                   atol=1e-15)


def test_bitwise_reproducible():
    cfg = SimConfig(np.diag([0.2, 0.1]), [[0.05]], horizon=300, seed=1234)
    a = simulate_closed_loop(PLANT, [[-0.4, -1.2]], [0.1, 0.1], cfg)
    b = simulate_closed_loop(PLANT, [[-0.4, -1.2]], [0.1, 0.1], cfg)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.inputs.tobytes() == b.inputs.tobytes()


def test_noise_covariance_statistics():
    W = np.array([[0.2, 0.05], [0.05, 0.1]])
    V = np.array([[0.05]])
    w, v = noise_streams(7, 200_000, W, V)
    assert np.linalg.norm(np.cov(w.T) - W) / np.linalg.norm(W) < 0.02
    assert abs(np.var(v) - 0.05) / 0.05 < 0.02


def test_singular_noise_allowed():
    w, v = noise_streams(0, 100, np.diag([0.3, 0.0]), np.zeros((1, 1)))
    assert not w[:, 1].any() and not v.any()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 5.0))
def test_first_violation_is_minimal(seed, gain):
    plant = LinearPlant(np.array([[1.05, 0.0], [0.0, 1.1]]), np.array([[0.0], [1.0]]))
    cfg = SimConfig(0.01 * np.eye(2), [[0.05]], horizon=500, threshold=5.0, seed=seed)
    traj = simulate_closed_loop(plant, [[0.0, gain]], [1.0, 1.0], cfg)
    norms = np.max(np.abs(traj.states), axis=1)
    if traj.stable:
        assert np.all(norms < 5.0) and len(traj.inputs) == 500
    else:
        k = traj.first_violation
        assert norms[k] >= 5.0 and np.all(norms[:k] < 5.0)
        assert len(traj.states) == k + 1


def test_initial_state_violation():
    traj = simulate_closed_loop(PLANT, np.zeros((1, 2)), [200.0, 0.0], SimConfig(Z2, Z1))
    assert traj.first_violation == 0 and len(traj.inputs) == 0


def test_overflow_counts_as_violation():
    plant = LinearPlant(np.array([[1e200, 0.0], [0.0, 1.0]]), np.zeros((2, 1)))
    traj = simulate_closed_loop(plant, np.zeros((1, 2)), [1e150, 0.0],
                                SimConfig(Z2, Z1, threshold=1e300))
    assert not traj.stable and traj.first_violation == 1


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(Z2, Z1, horizon=0)
    with pytest.raises(ValueError):
        SimConfig(Z2, Z1, threshold=0)


def test_parameter_trajectory():
    traj = simulate_closed_loop(PLANT, np.zeros((1, 2)), np.zeros(2), SimConfig(Z2, Z1, horizon=5))
    params = parameter_trajectory(PLANT, traj)
    assert len(params) == 5
    A0, B0 = benchmark_jacobians(np.zeros(2), 0.0)
    for A, B in params:
        np.testing.assert_array_equal(A, A0)
        np.testing.assert_array_equal(B, B0)
    one = simulate_closed_loop(PLANT, np.zeros((1, 2)), np.zeros(2), SimConfig(Z2, Z1, horizon=1))
    assert len(parameter_trajectory(PLANT, one)) == 1


def test_csv_export(tmp_path):
    cfg = SimConfig(np.diag([0.2, 0.1]), [[0.05]], horizon=10, seed=3)
    traj = simulate_closed_loop(PLANT, [[-0.5, -1.0]], [0.1, 0.0], cfg)
    meta = write_trajectory_csv(traj, tmp_path / "t.csv", {"seed": 3, "K": [[-0.5, -1.0]]})
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0] == ["k", "x_1", "x_2", "u_1"]
    assert len(rows) == 12 and rows[-1][3] == ""
    assert float(rows[3][1]) == traj.states[2, 0]
    doc = json.loads(meta.read_text())
    assert doc["seed"] == 3 and doc["steps"] == 10 and doc["stable"] is True
