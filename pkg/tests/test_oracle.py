import math

import numpy as np
import pytest

from ipbasis.oracle import (
    ObservationSet, SolverDivergenceError, Trajectory, crank_nicolson_qho, dho_rhs, even_steps,
    inject_noise, lv_rhs, qho_truth, read_dataset, rk4_solve, sample_observations, write_dataset,
)


def test_rk4_constant_field():
    tr = rk4_solve(lambda t, y: np.zeros_like(y), [2.5], (0, 1), 10)
    assert np.all(tr.states == 2.5)
    assert tr.times[0] == 0 and tr.times[-1] == pytest.approx(1.0)
    assert len(tr.times) == 11


def test_rk4_free_fall_exact():
    tr = rk4_solve(dho_rhs([0.0, 0.0, 1.0]), [0.0, 0.0], (0.0, 3.0), 7)
    assert tr.states[-1, 0] == pytest.approx(4.5, abs=1e-10)


def test_rk4_fourth_order_on_cosine():
    errs = []
    for n in (10, 20, 40, 80):
        tr = rk4_solve(dho_rhs([0.0, 1.0, 0.0]), [1.0, 0.0], (0.0, 3.0), n)
        errs.append(abs(tr.states[-1, 0] - math.cos(3.0)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(3)]
    assert min(orders) >= 3.9


def test_rk4_batched_matches_single():
    params = np.array([[0.2, 1.0, 0.1], [0.7, 0.3, -0.5]])
    ics = np.array([[1.0, 0.0], [-2.0, 1.0]])
    both = rk4_solve(dho_rhs(params), ics, (0, 3), 50)
    for q in range(2):
        one = rk4_solve(dho_rhs(params[q]), ics[q], (0, 3), 50)
        np.testing.assert_array_equal(both.states[:, q], one.states)


def test_rk4_divergence_reports_step():
    with pytest.raises(SolverDivergenceError) as err, np.errstate(over="ignore", invalid="ignore"):
        rk4_solve(lambda t, y: y ** 3, [1e3], (0, 10), 100)
    assert err.value.step >= 1


def test_lv_conserved_quantity():
    a, b, g, d = 1.0, 0.8, 1.2, 0.9
    tr = rk4_solve(lv_rhs([a, b, g, d]), [1.0, 0.5], (0, 10), 4000)
    x, y = tr.states[:, 0], tr.states[:, 1]
    V = d * x - g * np.log(x) + b * y - a * np.log(y)
    assert np.max(np.abs(V - V[0])) < 1e-9


def test_trajectory_requires_increasing_times():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0, 1.0]), np.zeros((3, 1)))


def test_cn_norm_conservation_and_ground_state():
    for k in (1.0, 4.0):
        w = math.sqrt(k)
        wf = crank_nicolson_qho(k, (-5, 5, 200), (0, 1.5, 200), ic=lambda x: (np.exp(-w * x * x / 2), 0 * x))
        n = wf.norms()
        assert np.max(np.abs(n - n[0])) <= 1e-10
        mod = np.hypot(wf.psi_re, wf.psi_im)
        assert np.max(np.abs(mod - mod[0])) <= 1e-3
    packet = crank_nicolson_qho(2.0, (-5, 5, 200), (0, 1.5, 200))
    n = packet.norms()
    assert np.max(np.abs(n - n[0])) <= 1e-10


def test_cn_free_packet_moves_right():
    wf = crank_nicolson_qho(0.0, (-5, 5, 400), (0, 1.5, 300),
                            ic=lambda x: (np.exp(-(x + 2) ** 2) * np.cos(2 * x), np.exp(-(x + 2) ** 2) * np.sin(2 * x)))
    dens = wf.psi_re ** 2 + wf.psi_im ** 2
    centre = (dens * wf.x_grid).sum(axis=1) / dens.sum(axis=1)
    # group velocity equals the wave number (hbar = m = 1)
    assert centre[-1] - centre[0] == pytest.approx(2 * 1.5, rel=0.02)


def test_even_steps():
    assert even_steps(3000, 100) % 99 == 0 and even_steps(3000, 100) >= 3000
    assert even_steps(10, 1) == 10


def test_sample_observations_even_on_nodes():
    steps = even_steps(3000, 100)
    tr = rk4_solve(dho_rhs([0.3, 0.5, 0.0]), [1.0, 0.0], (0, 3), steps)
    obs = sample_observations(tr, 100, "even", component=slice(0, 1))
    assert obs.values.shape == (100, 1)
    np.testing.assert_allclose(obs.points[:, 0], np.linspace(0, 3, 100), atol=1e-12)
    idx = np.searchsorted(tr.times, obs.points[:, 0])
    np.testing.assert_array_equal(obs.values[:, 0], tr.states[idx, 0])


def test_sample_observations_wavefield_random():
    wf = qho_truth(1.0, n_x=60, n_t=40)
    a = sample_observations(wf, 10, "random", seed=3)
    b = sample_observations(wf, 10, "random", seed=3)
    assert np.array_equal(a.points, b.points) and a.complex_valued
    assert a.points.shape == (10, 2)
    assert np.all(np.abs(a.points[:, 0]) <= 5) and np.all((a.points[:, 1] >= 0) & (a.points[:, 1] <= 1.5))
    with pytest.raises(ValueError):
        sample_observations(wf, 60 * 40 + 1, "random")


def test_inject_noise_bounds_and_identity():
    rng = np.random.default_rng(0)
    obs = ObservationSet(np.linspace(0, 1, 50)[:, None], rng.normal(size=(50, 2)))
    zero = inject_noise(obs, 0.0, seed=4)
    assert zero.values.tobytes() == obs.values.tobytes()
    noisy = inject_noise(obs, 0.1, seed=4)
    M = np.abs(obs.values).max()
    assert np.max(np.abs(noisy.values - obs.values)) <= 0.1 * M
    assert not np.array_equal(noisy.values, obs.values)
    again = inject_noise(obs, 0.1, seed=4)
    assert np.array_equal(noisy.values, again.values)
    cobs = ObservationSet(np.zeros((3, 2)), [[3.0, 4.0], [0.0, 1.0], [1.0, 0.0]], complex_valued=True)
    cn = inject_noise(cobs, 0.5, seed=1)
    assert np.max(np.abs(cn.values - cobs.values)) <= 0.5 * 5.0
    with pytest.warns(UserWarning):
        inject_noise(obs, 1.5)
    with pytest.raises(ValueError):
        inject_noise(obs, -0.1)


def test_dataset_roundtrip_and_determinism(tmp_path):
    wf = qho_truth(2.0, n_x=40, n_t=30)
    obs = [sample_observations(wf, 12, "random", seed=1), sample_observations(wf, 12, "random", seed=1)]
    p1, s1 = write_dataset(tmp_path / "a.csv", obs, {"params": [[2.0], [2.0]], "complex_valued": True})
    p2, _ = write_dataset(tmp_path / "b.csv", obs, {"params": [[2.0], [2.0]], "complex_valued": True})
    assert p1.read_bytes() == p2.read_bytes()
    back, side = read_dataset(p1)
    assert side["params"] == [[2.0], [2.0]]
    assert len(back) == 2
    for a, b in zip(obs, back):
        assert np.array_equal(a.points, b.points) and np.array_equal(a.values, b.values)
    assert b"\r\n" not in p1.read_bytes()


def test_dataset_rejects_missing_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("readout_id,t,v0\n0,0,1\n")
    with pytest.raises(ValueError):
        read_dataset(p)
