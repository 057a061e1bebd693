import numpy as np
import pytest
from conftest import DECOUPLED, TRACKING

from mfglq import (
    GraphonModel,
    GraphonSpec,
    LqCoefficients,
    PopulationModel,
    SimConfig,
    convergence_sweep,
    estimate_nash_gap,
    make_grid,
    simulate_population,
    solve,
    step_from_weights,
)
from mfglq.simulate import FinitePopulation, _Deviation, allocate_players, draw_noise, evaluate_deviation


def test_allocation_largest_remainder():
    assert allocate_players([0.5, 0.5], 7).tolist() == [4, 3]
    assert allocate_players([0.2, 0.3, 0.5], 9).tolist() == [2, 3, 4]
    assert allocate_players([1 / 3] * 3, 10).sum() == 10


def test_noise_streams_independent_of_chunking():
    a = draw_noise(5, 4, range(6), 10)
    b = np.concatenate([draw_noise(5, 4, range(0, 2), 10), draw_noise(5, 4, range(2, 6), 10, threads=3)])
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(draw_noise(5, 4, [0], 10), draw_noise(5, 5, [0], 10)[:, :4])


def test_deterministic_limit(coupled_model):
    c = coupled_model.coeffs[0]
    m = PopulationModel.single(LqCoefficients(**{**c.__dict__, "sigma": 0.0, "x0_std": 1e-6}))
    g = make_grid(1.0, 400)
    sol = solve(m, g)
    res = simulate_population(m, sol, SimConfig(n_players=50, n_reps=2, seed=1))
    # Euler on the mean ODE: O(dt) error only
    assert np.max(np.abs(res.means - sol.z)) < 5 * g.dt


def test_no_interaction_costs_iid():
    m = PopulationModel.single(LqCoefficients(**DECOUPLED))
    g = make_grid(1.0, 50)
    sol = solve(m, g)
    res = simulate_population(m, sol, SimConfig(n_players=2, n_reps=4000, seed=3))
    a, b = res.costs[:, 0], res.costs[:, 1]
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.06
    assert abs(a.mean() - b.mean()) < 3 * np.sqrt((a.var() + b.var()) / len(a))


def test_terminal_mean_within_three_se(coupled_model):
    g = make_grid(1.0, 400)
    sol = solve(coupled_model, g)
    N, reps = 10_000, 20
    res = simulate_population(coupled_model, sol, SimConfig(n_players=N, n_reps=reps, seed=11))
    xT = res.rep_means[:, -1, 0]
    # pooled sample std of X_T over all N*reps samples
    sd = np.sqrt(res.variances[-1, 0])
    assert abs(xT.mean() - sol.z[-1, 0]) <= 3 * sd / np.sqrt(N * reps) + 2 * g.dt


def test_simulation_determinism(coupled_model):
    sol = solve(coupled_model, make_grid(1.0, 30))
    cfg = SimConfig(n_players=20, n_reps=3, seed=99)
    a = simulate_population(coupled_model, sol, cfg, keep_paths=True)
    b = simulate_population(coupled_model, sol, SimConfig(n_players=20, n_reps=3, seed=99, threads=2), keep_paths=True)
    np.testing.assert_array_equal(a.paths, b.paths)
    np.testing.assert_array_equal(a.costs, b.costs)
    assert a.paths.shape == (3, 20, 31)


def test_rejects_unconverged_and_grid_mismatch(coupled_model):
    from mfglq import SolverOptions

    g = make_grid(1.0, 30)
    bad = solve(coupled_model, g, SolverOptions(max_iter=2))
    with pytest.raises(ValueError):
        simulate_population(coupled_model, bad, SimConfig(n_players=5, n_reps=1))
    good = solve(coupled_model, g)
    with pytest.raises(ValueError):
        simulate_population(coupled_model, good, SimConfig(n_players=5, n_reps=1, grid=make_grid(1.0, 10)))


def test_config_guards():
    with pytest.raises(ValueError):
        SimConfig(n_players=5, n_reps=0)
    with pytest.raises(ValueError):
        SimConfig(n_players=0, n_reps=2)


def test_gap_needs_two_players(coupled_model):
    sol = solve(coupled_model, make_grid(1.0, 20))
    with pytest.raises(ValueError):
        estimate_nash_gap(coupled_model, sol, SimConfig(n_players=1, n_reps=4))
    with pytest.raises(ValueError):
        convergence_sweep(coupled_model, sol, [1, 5], SimConfig(n_players=5, n_reps=4))
    with pytest.raises(ValueError):
        convergence_sweep(coupled_model, sol, [], SimConfig(n_players=5, n_reps=4))


def test_zero_deviation_exact(coupled_model):
    sol = solve(coupled_model, make_grid(1.0, 30))
    dev = _Deviation(coupled_model, sol, SimConfig(n_players=6, n_reps=8, seed=2))
    raw, se, eq, dv = evaluate_deviation(dev, np.zeros(10))
    assert raw == 0.0 and se == 0.0
    np.testing.assert_array_equal(eq, dv)


def test_singleton_sweep_and_determinism(coupled_model):
    sol = solve(coupled_model, make_grid(1.0, 20))
    cfg = SimConfig(n_players=5, n_reps=6, seed=8, max_evals=40)
    a = convergence_sweep(coupled_model, sol, [5], cfg)
    b = convergence_sweep(coupled_model, sol, [5], cfg)
    assert len(a.entries) == 1 and a.monotone_flag
    assert a.to_dict() == b.to_dict()
    e = a.entries[0]
    assert e.gap >= 0 and e.gap == max(0.0, e.raw_gap)
    assert "lower bound" in e.note
    assert len(e.deviation_params["delta_p"]) == 5


def test_paired_se_not_larger_than_unpaired():
    m = PopulationModel.single(LqCoefficients(**TRACKING))
    sol = solve(m, make_grid(1.0, 40))
    for n in (5, 50):
        e = estimate_nash_gap(m, sol, SimConfig(n_players=n, n_reps=20, seed=4, max_evals=60))
        assert e.std_error <= e.unpaired_std_error


def test_decoupled_gap_within_noise():
    m = PopulationModel.single(LqCoefficients(**DECOUPLED))
    sol = solve(m, make_grid(1.0, 40))
    rep = convergence_sweep(m, sol, [5, 40], SimConfig(n_players=5, n_reps=30, seed=6))
    assert rep.monotone_flag
    for e in rep.entries:
        assert e.gap <= 2 * e.std_error


def test_multi_population_statistics(two_pop_model):
    m = PopulationModel(two_pop_model.coeffs, two_pop_model.weights, proportions=(0.25, 0.75))
    g = make_grid(1.0, 200)
    sol = solve(m, g)
    res = simulate_population(m, sol, SimConfig(n_players=400, n_reps=50, seed=5))
    assert res.counts.tolist() == [100, 300]
    z = np.abs(res.means - sol.z) / res.mean_stderr
    # two populations, four checkpoint nodes
    assert np.max(z[::50]) < 4


def test_graphon_population_interaction():
    w = np.array([[1.0, 0.5], [0.5, 2.0]])
    cs = (LqCoefficients(Abar=0.5, x0_mean=1.0), LqCoefficients(Abar=0.3, x0_mean=-1.0))
    gm = GraphonModel(cs, step_from_weights(w), 4)
    sol = solve(gm, make_grid(1.0, 20))
    pop = FinitePopulation(gm, sol, 8)
    assert pop.component.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
    X = np.arange(8.0)[None]
    # step graphon aggregate = sum_l w_kl * (block mean)
    means = np.array([X[0, :4].mean(), X[0, 4:].mean()])
    np.testing.assert_allclose(pop.aggregate(X)[0], np.repeat(w @ means, 4), atol=1e-12)
    res = simulate_population(gm, sol, SimConfig(n_players=8, n_reps=2, seed=1))
    assert res.means.shape == (21, 4)


def test_constant_graphon_simulation_matches_mean_field():
    c = LqCoefficients(A=0.1, Abar=0.5, Qbar=1.0, S=0.5, sigma=0.3, x0_mean=1.0, x0_std=0.5)
    gm = GraphonModel((c,), GraphonSpec.constant(1.0), 2)
    sol = solve(gm, make_grid(1.0, 100))
    res = simulate_population(gm, sol, SimConfig(n_players=400, n_reps=40, seed=2))
    z = np.abs(res.means - sol.z) / res.mean_stderr
    assert np.max(z[::25]) < 4
