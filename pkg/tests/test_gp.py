import numpy as np
import pytest

from maipp.fields import evaluation_grid
from maipp.gp import (
    FantasyEvaluator,
    GpBelief,
    KernelParams,
    high_interest_set,
    kernel_eval,
    kernel_matrix,
    risk_ucb,
    risk_ucb_at,
)
from oracles import gp_posterior_direct

PARAMS = KernelParams(lengthscale=0.2, signal_variance=1.0, noise_variance=1e-4)


def random_belief(rng, n_train, resolution=6, params=PARAMS):
    grid = evaluation_grid(resolution)
    xs = rng.uniform(0, 1, (n_train, 2))
    ys = rng.normal(0, 0.5, n_train)
    return GpBelief(params, grid=grid, train_x=xs, train_y=ys)


# -- kernel -------------------------------------------------------------------


def test_kernel_at_zero_distance():
    p = KernelParams(lengthscale=0.3, signal_variance=2.5)
    assert kernel_eval(p, (0.4, 0.4), (0.4, 0.4)) == 2.5


def test_kernel_closed_form():
    # r = lengthscale -> sf2 * (1 + sqrt(3)) * exp(-sqrt(3))
    p = KernelParams(lengthscale=0.2, signal_variance=1.0)
    v = kernel_eval(p, (0.0, 0.0), (0.2, 0.0))
    assert v == pytest.approx(0.4833577245965077, abs=1e-12)


def test_kernel_symmetric_and_decaying():
    p = KernelParams(lengthscale=0.1)
    a, b = (0.1, 0.9), (0.7, 0.2)
    assert kernel_eval(p, a, b) == kernel_eval(p, b, a)
    assert kernel_eval(p, (0, 0), (1.0, 1.0)) < 1e-5  # r >= 10 lengthscales


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(lengthscale=0.0)
    with pytest.raises(ValueError):
        KernelParams(noise_variance=-1e-3)


# -- posterior ----------------------------------------------------------------


def test_empty_belief_prior():
    belief = GpBelief(PARAMS, grid_resolution=30)
    mean, cov = belief.posterior()
    assert np.all(mean == 0.0)
    assert np.allclose(np.diag(cov), 1.0)
    assert belief.covariance_trace() == pytest.approx(900.0, abs=1e-6)


def test_empty_belief_small_grid_trace():
    belief = GpBelief(PARAMS, grid=evaluation_grid(5))
    assert belief.covariance_trace() == pytest.approx(25.0, abs=1e-9)


def test_noiseless_interpolation():
    params = KernelParams(lengthscale=0.2, signal_variance=1.0, noise_variance=0.0)
    grid = evaluation_grid(5)
    g = grid[7]
    belief = GpBelief(params, grid=grid).add_measurements([(g, 0.73)])
    mean, var = belief.predict(g[None, :])
    assert mean[0] == pytest.approx(0.73, abs=1e-6)
    assert var[0] <= 1e-6


def test_posterior_matches_dense_oracle():
    rng = np.random.default_rng(42)
    grid = evaluation_grid(5)  # 25 query points
    xs = rng.uniform(0, 1, (9, 2))
    ys = rng.normal(0, 1, 9)
    belief = GpBelief(PARAMS, grid=grid, train_x=xs, train_y=ys)
    mean, cov = belief.posterior()
    mean_o, cov_o = gp_posterior_direct(1.0, 0.2, 1e-4, xs, ys, grid, jitter=PARAMS.jitter)
    assert np.max(np.abs(mean - mean_o)) < 1e-8
    assert np.max(np.abs(cov - cov_o)) < 1e-8


def test_trace_matches_oracle_after_measurements():
    rng = np.random.default_rng(7)
    grid = evaluation_grid(6)
    belief = GpBelief(PARAMS, grid=grid)
    batch = [(rng.uniform(0, 1, 2), rng.normal()) for _ in range(20)]
    belief = belief.add_measurements(batch)
    _, cov_o = gp_posterior_direct(1.0, 0.2, 1e-4,
                                   np.array([p for p, _ in batch]),
                                   np.array([v for _, v in batch]), grid,
                                   jitter=PARAMS.jitter)
    assert belief.covariance_trace() == pytest.approx(np.trace(cov_o), abs=1e-6)


def test_add_measurements_batch_vs_incremental():
    rng = np.random.default_rng(3)
    grid = evaluation_grid(5)
    batch = [(rng.uniform(0, 1, 2), rng.normal()) for _ in range(3)]
    b_batch = GpBelief(PARAMS, grid=grid).add_measurements(batch)
    b_inc = GpBelief(PARAMS, grid=grid)
    for item in batch:
        b_inc = b_inc.add_measurements([item])
    m1, c1 = b_batch.posterior()
    m2, c2 = b_inc.posterior()
    assert np.max(np.abs(m1 - m2)) < 1e-8
    assert np.max(np.abs(c1 - c2)) < 1e-8


def test_empty_batch_is_noop():
    belief = GpBelief(PARAMS, grid=evaluation_grid(5))
    assert belief.add_measurements([]) is belief


def test_duplicate_positions_stay_factorizable():
    grid = evaluation_grid(5)
    x = np.array([0.5, 0.5])
    belief = GpBelief(PARAMS, grid=grid).add_measurements([(x, 0.3), (x, 0.5), (x, 0.4)])
    mean, var = belief.predict(x[None, :])
    assert np.isfinite(mean[0]) and np.isfinite(var[0])


def test_variance_shrinks_and_trace_monotone():
    rng = np.random.default_rng(11)
    grid = evaluation_grid(6)
    belief = GpBelief(PARAMS, grid=grid)
    prev_var = belief.grid_variance().copy()
    prev_trace = belief.covariance_trace()
    for _ in range(15):
        belief = belief.add_measurements([(rng.uniform(0, 1, 2), rng.normal())])
        var = belief.grid_variance()
        assert np.all(var <= prev_var + 1e-9)
        trace = belief.covariance_trace()
        assert trace <= prev_trace + 1e-6
        prev_var, prev_trace = var.copy(), trace


def test_posterior_psd_on_subgrids():
    rng = np.random.default_rng(5)
    grid = evaluation_grid(8)
    belief = GpBelief(PARAMS, grid=grid)
    for _ in range(5):
        belief = belief.add_measurements(
            [(rng.uniform(0, 1, 2), rng.normal()) for _ in range(4)])
        _, cov = belief.posterior()
        sub = rng.choice(len(grid), size=min(100, len(grid)), replace=False)
        eigvals = np.linalg.eigvalsh(cov[np.ix_(sub, sub)])
        assert eigvals.min() >= -1e-8


def test_diag_never_exceeds_prior():
    rng = np.random.default_rng(9)
    belief = random_belief(rng, 12)
    assert np.all(belief.grid_variance() <= PARAMS.signal_variance + 1e-12)


# -- UCB helpers ---------------------------------------------------------------


def test_interest_region_vacuous_threshold():
    belief = GpBelief(PARAMS, grid_resolution=30)
    region = high_interest_set(belief, mu_th=-1e9, beta=1.0)
    assert len(region.indices) == 900


def test_interest_region_prior_only():
    belief = GpBelief(PARAMS, grid_resolution=30)
    region = high_interest_set(belief, mu_th=0.5, beta=1.0)
    assert len(region.indices) == 900  # 0 + 1*1 >= 0.5 everywhere


def test_interest_region_matches_pointwise_rule():
    rng = np.random.default_rng(21)
    belief = random_belief(rng, 15, resolution=8)
    region = high_interest_set(belief, mu_th=0.4, beta=1.0)
    mean, var = belief.grid_mean(), belief.grid_variance()
    expected = {i for i in range(len(mean)) if mean[i] + var[i] >= 0.4}
    assert set(region.indices.tolist()) == expected


def test_risk_ucb_beta_zero_is_mean():
    rng = np.random.default_rng(23)
    belief = random_belief(rng, 10, resolution=6)
    assert np.allclose(risk_ucb(belief, 0.0), belief.grid_mean())


def test_risk_ucb_prior_constant():
    belief = GpBelief(PARAMS, grid_resolution=5)
    assert np.allclose(risk_ucb(belief, 1.0), 1.0)


def test_risk_ucb_matches_pointwise_oracle():
    rng = np.random.default_rng(31)
    belief = random_belief(rng, 14, resolution=7)
    ucb = risk_ucb(belief, 1.7)
    mean, var = belief.grid_mean(), belief.grid_variance()
    dense = mean + 1.7 * np.sqrt(var)
    assert np.max(np.abs(ucb - dense)) < 1e-8
    pts = rng.uniform(0, 1, (9, 2))
    m2, v2 = belief.predict(pts)
    assert np.max(np.abs(risk_ucb_at(belief, pts, 1.7) - (m2 + 1.7 * np.sqrt(v2)))) < 1e-12


# -- fantasy evaluator -----------------------------------------------------------


def test_fantasy_matches_actual_update():
    rng = np.random.default_rng(17)
    grid = evaluation_grid(6)
    belief = GpBelief(PARAMS, grid=grid).add_measurements(
        [(rng.uniform(0, 1, 2), rng.normal()) for _ in range(8)])
    sites = rng.uniform(0, 1, (5, 2))
    ev = FantasyEvaluator(belief, grid)
    predicted = ev.variance_with(sites)
    # observation values are irrelevant to the GP variance
    actual = belief.add_measurements([(s, 123.456) for s in sites]).grid_variance()
    assert np.max(np.abs(predicted - actual)) < 1e-8


def test_fantasy_empty_sites():
    belief = GpBelief(PARAMS, grid=evaluation_grid(5))
    ev = FantasyEvaluator(belief, belief.grid)
    assert np.allclose(ev.variance_with(np.zeros((0, 2))), belief.grid_variance())
