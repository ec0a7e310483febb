import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from latentpass.core import CellTable, ModelInputError, ModelNumericError
from latentpass.sampler import (ChainConfig, ChainData, ChainDivergence, ChainResult, Truth, _Sweep,
                                acceptance_probability, beta_posterior, gibbs_sweep, initial_state,
                                latent_column_posterior, mh_update_lattice, parameter_paths,
                                procrustes_align, run_chain, sample_beta, sample_latent_column,
                                summarize)
from latentpass.synthetic import SyntheticSpec, generate

DRAWS = 10_000


def within_mc_error(draws, mean, cov):
    """Moments of ``draws`` agree with N(mean, cov) within 3 Monte Carlo standard errors."""
    n = len(draws)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(draws.mean(0) - mean) <= 3 * sd / np.sqrt(n))
    emp = np.cov(draws, rowvar=False)
    # se of a sample covariance entry: sqrt((s_ii s_jj + s_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n)
    assert np.all(np.abs(emp - cov) <= 3 * se)


# -- configuration ---------------------------------------------------------

@pytest.mark.parametrize("kwargs", [dict(iterations=0), dict(iterations=10, burn_in=10),
                                    dict(thin=0), dict(R=0), dict(model="full")])
def test_config_validation(kwargs):
    with pytest.raises(ModelInputError):
        ChainConfig(**kwargs)


def test_retained_iterations_floor():
    assert ChainConfig(iterations=10, burn_in=3, thin=3).retained_iterations.tolist() == [4, 7, 10]
    assert ChainConfig(iterations=11, burn_in=10, thin=1).retained_iterations.tolist() == [11]


# -- step 1 ----------------------------------------------------------------

def test_sample_beta_prior_when_no_cells():
    rng = np.random.default_rng(0)
    draws = np.array([sample_beta(np.empty((0, 7)), np.empty(0), rng) for _ in range(100_000)])
    assert np.all(np.abs(draws.mean(0)) < 0.02)


def test_sample_beta_single_cell():
    X, r = np.eye(7)[:1], np.array([5.0])
    mean, cov = beta_posterior(X, r)
    assert mean[0] == pytest.approx(2.5) and cov[0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(mean[1:], 0)
    np.testing.assert_allclose(np.diag(cov)[1:], 1)
    rng = np.random.default_rng(1)
    draws = np.array([sample_beta(X, r, rng) for _ in range(DRAWS)])
    within_mc_error(draws, mean, cov)


def test_sample_beta_matches_analytic_posterior():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(200), rng.integers(0, 2, 200), rng.normal(1.5, .5, 200),
                         rng.integers(1, 5, 200), rng.normal(size=200), rng.normal(size=(200, 2))])
    r = X @ rng.normal(size=7) + rng.normal(size=200)
    mean, cov = beta_posterior(X, r)
    np.testing.assert_allclose(cov, np.linalg.inv(np.eye(7) + X.T @ X), rtol=1e-10)
    draws = np.array([sample_beta(X, r, rng) for _ in range(DRAWS)])
    within_mc_error(draws, mean, cov)


def test_sample_beta_rejects_non_finite():
    with pytest.raises(ModelNumericError):
        sample_beta(np.eye(7)[:1], np.array([np.nan]), np.random.default_rng(0))


# -- step 2 ----------------------------------------------------------------

def test_latent_column_prior_for_absent_player():
    mean, var = latent_column_posterior([0, 0], [1.0, 2.0], [1.0, 1.0], 3)
    assert mean[2] == 0 and var[2] == 1


def test_latent_column_single_cell():
    mean, var = latent_column_posterior([0], [1.0], [3.0], 1)
    assert mean[0] == pytest.approx(1.5) and var[0] == pytest.approx(0.5)
    rng = np.random.default_rng(3)
    draws = np.array([sample_latent_column([0], [1.0], [3.0], 1, rng) for _ in range(DRAWS)])
    within_mc_error(draws, mean, np.diag(var))


def test_latent_column_matches_analytic_per_player():
    rng = np.random.default_rng(4)
    n = 8
    owner = rng.integers(0, n - 1, 400)          # player n-1 never owns a cell
    loading = rng.normal(size=400)
    a_true = rng.normal(size=n)
    resid = a_true[owner] * loading + rng.normal(size=400)
    prec = np.ones(n)
    num = np.zeros(n)
    for o, l, e in zip(owner, loading, resid):
        prec[o] += l * l
        num[o] += l * e
    mean, var = latent_column_posterior(owner, loading, resid, n)
    np.testing.assert_allclose(mean, num / prec, rtol=1e-12)
    np.testing.assert_allclose(var, 1 / prec, rtol=1e-12)
    draws = np.array([sample_latent_column(owner, loading, resid, n, rng) for _ in range(DRAWS)])
    within_mc_error(draws, mean, np.diag(var))


# -- step 3 ----------------------------------------------------------------

def test_acceptance_is_one_for_identical_proposal():
    assert acceptance_probability(1, 0.3, 0.3, 0.2) == 1.0
    assert acceptance_probability(0, 0.3, 0.3, 0.2) == 1.0


@given(st.floats(-10, 10), st.floats(-10, 10), st.sampled_from([0, 1]), st.floats(0.01, 2))
def test_acceptance_is_a_probability(current, proposal, y, dt):
    p = acceptance_probability(y, current, proposal, dt)
    assert 0.0 <= p <= 1.0
    if y == 0 and proposal < current:
        assert p == 1.0


def test_acceptance_in_log_space_does_not_overflow():
    assert acceptance_probability(0, -5.0, 800.0, 0.2) == 0.0
    assert acceptance_probability(1, 800.0, -5.0, 0.2) == 1.0


def test_mh_downward_moves_accepted_for_no_pass():
    rng = np.random.default_rng(5)
    current = np.full(1000, 50.0)
    new, accepted = mh_update_lattice(current, np.zeros(1000), np.zeros(1000), 0.2, rng)
    assert accepted == 1000 and np.all(new < 50)


@pytest.mark.parametrize("y, mu", [(1, -0.5), (0, 1.0)])
def test_mh_stationary_marginal_matches_quadrature(y, mu):
    dt = 0.2
    unnorm = lambda h: stats.norm.pdf(h, mu, 1) * np.exp(y * (h + np.log(dt)) - np.exp(h) * dt)
    lo, hi = mu - 12, mu + 12
    Z = integrate.quad(unnorm, lo, hi, limit=200)[0]
    grid = np.linspace(lo, hi, 20001)
    cdf = integrate.cumulative_trapezoid(unnorm(grid), grid, initial=0) / Z

    rng = np.random.default_rng(6)
    n_keep, burn = 100_000, 1000
    h = np.array([mu])
    ys, means = np.array([float(y)]), np.array([mu])
    out = np.empty(n_keep)
    for i in range(burn + n_keep):
        h, _ = mh_update_lattice(h, means, ys, dt, rng)
        if i >= burn:
            out[i - burn] = h[0]
    ks = stats.kstest(out, lambda q: np.interp(q, grid, cdf)).statistic
    assert ks < 0.02


def test_full_kernel_keeps_single_cell_posterior():
    # covariates model on one cell with x = e1: log theta ~ N(0, 2) a priori
    y, dt = 1.0, 0.2
    cells = CellTable.from_array([[0, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, dt]])
    cells = CellTable(cells.game, cells.interval, cells.sender, cells.receiver,
                      np.eye(7)[:1].copy(), cells.interval_length)
    unnorm = lambda h: stats.norm.pdf(h, 0, np.sqrt(2)) * np.exp(y * (h + np.log(dt)) - np.exp(h) * dt)
    Z = integrate.quad(unnorm, -15, 15, limit=200)[0]
    grid = np.linspace(-15, 15, 30001)
    cdf = integrate.cumulative_trapezoid(unnorm(grid), grid, initial=0) / Z
    draws = []
    config = ChainConfig(iterations=101_000, burn_in=1000, thin=1, R=1, seed=7, model="covariates")
    run_chain(config, cells, np.array([y]),
              callback=lambda it, state: draws.append(state.log_hazard[0]) if it > 1000 else None)
    ks = stats.kstest(np.array(draws), lambda q: np.interp(q, grid, cdf)).statistic
    assert ks < 0.02


# -- conjugacy with the lattice held fixed ---------------------------------

def small_dataset(seed=0, intervals=600, model_truth=None):
    spec = SyntheticSpec(n_games=2, n_players=6, target_observations=intervals, seed=seed, truth=model_truth)
    return generate(spec)


def test_fixed_lattice_gibbs_draws_exact_coefficient_posterior():
    d = small_dataset(1)
    data = ChainData.register(d.cells, d.y)
    config = ChainConfig(iterations=2, burn_in=0, model="covariates", seed=8)
    rng = np.random.default_rng(8)
    state = initial_state(config, data, rng)
    state.log_hazard = d.log_hazard.copy()
    sweep = _Sweep(data)
    dyad = 0
    cell_rows = np.flatnonzero(data.dyad_of_cell == dyad)
    mean, cov = beta_posterior(d.cells.X[cell_rows], d.log_hazard[cell_rows])
    draws = np.empty((DRAWS, 7))
    for s in range(DRAWS):
        gibbs_sweep(state, data, sweep, config, rng, update_lattice=False)
        draws[s] = state.beta[data.dyads[dyad]]
    np.testing.assert_array_equal(state.log_hazard, d.log_hazard)
    within_mc_error(draws, mean, cov)


def test_fixed_lattice_latent_column_draws_match_conditional():
    d = small_dataset(2)
    data = ChainData.register(d.cells, d.y)
    config = ChainConfig(iterations=2, burn_in=0, R=1, model="latent", seed=9)
    rng = np.random.default_rng(9)
    state = initial_state(config, data, rng)
    state.log_hazard = d.log_hazard.copy()
    # the sender draw of game 0 given everything else, recomputed by hand
    sweep = _Sweep(data)
    draws = []
    for _ in range(2000):
        before = state.V[0, :, 0].copy()
        gibbs_sweep(state, data, sweep, config, rng, update_lattice=False)
        idx = data.game_cells[0]
        xb = np.einsum("ck,ck->c", d.cells.X[idx], state.beta[data.dyads].take(data.dyad_of_cell[idx], 0))
        resid = d.log_hazard[idx] - xb
        m, v = latent_column_posterior(data.sender[idx], before[data.receiver[idx]], resid, data.n_players)
        z = (state.U[0, :, 0] - m) / np.sqrt(v)
        draws.append(z)
    z = np.concatenate(draws)
    # standardised draws are N(0, 1)
    assert abs(z.mean()) < 3 / np.sqrt(len(z))
    assert abs(z.var() - 1) < 3 * np.sqrt(2 / len(z))


# -- run_chain -------------------------------------------------------------

def test_single_retained_sample():
    d = small_dataset(3, intervals=100)
    res = run_chain(ChainConfig(iterations=6, burn_in=5, thin=1, seed=1), d.cells, d.y)
    assert res.iterations.tolist() == [6] and res.beta.shape[0] == 1


def test_chain_is_deterministic():
    d = small_dataset(4, intervals=200)
    cfg = ChainConfig(iterations=30, burn_in=10, thin=2, seed=42)
    a, b = run_chain(cfg, d.cells, d.y), run_chain(cfg, d.cells, d.y)
    assert np.array_equal(a.beta, b.beta) and np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)
    c = run_chain(ChainConfig(iterations=30, burn_in=10, thin=2, seed=43), d.cells, d.y)
    assert not np.array_equal(a.beta, c.beta)


def test_covariates_model_keeps_factors_at_zero():
    d = small_dataset(5, intervals=200)
    res = run_chain(ChainConfig(iterations=20, burn_in=5, model="covariates"), d.cells, d.y)
    assert not res.has_factors and not np.any(res.U) and not np.any(res.V)
    assert not any(p.startswith(("U/", "V/")) for p, _ in parameter_paths(res))


def test_null_truth_gives_posterior_near_zero():
    n, G, R = 6, 2, 2
    zero = Truth(np.zeros((n, n, 7)), np.zeros((G, n, R)), np.zeros((G, n, R)))
    d = small_dataset(6, intervals=1500, model_truth=zero)
    res = run_chain(ChainConfig(iterations=1500, burn_in=500, thin=2, seed=3), d.cells, d.y)
    s = summarize(res)
    betas = [p for k, p in s.parameters.items() if k.startswith("beta/")]
    assert all(abs(p.mean) <= 3 * p.sd for p in betas)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_names_iteration_and_parameter():
    d = small_dataset(7, intervals=50)
    A = d.cells.to_array()
    A[:, 8] = 1e200       # openness column overflows the linear predictor
    with pytest.raises(ChainDivergence) as info:
        run_chain(ChainConfig(iterations=5, burn_in=1), CellTable.from_array(A), d.y)
    assert info.value.iteration == 1
    assert info.value.parameter in {"beta", "U", "V", "log_hazard"}


def test_truth_traces_recorded():
    d = small_dataset(8, intervals=300)
    res = run_chain(ChainConfig(iterations=40, burn_in=10, seed=2), d.cells, d.y, truth=d.truth)
    assert res.traces["uv_mse"].shape == (40,)
    assert res.traces["u_sq_error"].shape == (40, 2, 6)
    assert 0 <= res.acceptance_rate <= 1


# -- summaries ---------------------------------------------------------------

def fake_result(beta_samples, U=None, model="covariates"):
    beta_samples = np.asarray(beta_samples, dtype=float)
    S = len(beta_samples)
    U = np.zeros((S, 1, 2, 1)) if U is None else U
    cfg = ChainConfig(iterations=S + 1, burn_in=1, thin=1, R=U.shape[-1], model=model)
    return ChainResult(cfg, np.array([0, 1]), np.array([0]), np.array([[0, 1]]),
                       np.arange(2, S + 2), beta_samples, U, U.copy(), 1.0)


def test_summary_of_constant_samples():
    s = summarize(fake_result(np.full((5, 1, 7), 0.25)))
    p = s.parameters["beta/0/1/3"]
    assert p.sd == 0 and p.lower == p.mean == p.upper == 0.25


def test_summary_of_two_samples():
    s = summarize(fake_result(np.stack([np.full((1, 7), 1.0), np.full((1, 7), 4.0)])))
    assert s.parameters["beta/0/1/0"].mean == 2.5


def test_summary_needs_two_samples():
    with pytest.raises(ModelInputError):
        summarize(fake_result(np.zeros((1, 1, 7))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_summary_interval_ordering(seed):
    rng = np.random.default_rng(seed)
    samples = rng.standard_cauchy((50, 1, 7))
    s = summarize(fake_result(samples))
    for k in range(7):
        p = s.parameters[f"beta/0/1/{k}"]
        assert p.lower <= p.mean <= p.upper
        lo, hi = np.quantile(samples[:, 0, k], [0.025, 0.975])
        assert p.lower <= lo and hi <= p.upper


def test_interval_coverage_matches_independent_quantiles():
    d = small_dataset(9, intervals=400)
    res = run_chain(ChainConfig(iterations=300, burn_in=100, thin=1, seed=5), d.cells, d.y)
    s = summarize(res)
    truth = d.truth.beta[res.dyads[:, 0], res.dyads[:, 1], 0]

    def quantile(x, q):
        xs = sorted(x)
        pos = q * (len(xs) - 1)
        lo = int(pos)
        hi = min(lo + 1, len(xs) - 1)
        return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])

    hits_oracle = hits = 0
    for k, (i, j) in enumerate(res.dyads):
        x = res.beta[:, k, 0].tolist()
        lo, hi = quantile(x, 0.025), quantile(x, 0.975)
        hits_oracle += lo <= truth[k] <= hi
        p = s.parameters[f"beta/{i}/{j}/0"]
        assert p.lower == pytest.approx(lo, rel=1e-12) and p.upper == pytest.approx(hi, rel=1e-12)
        hits += p.lower <= truth[k] <= p.upper
    assert hits == hits_oracle


def test_procrustes_recovers_rotated_factors():
    rng = np.random.default_rng(10)
    U, V = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    Q = np.linalg.qr(rng.normal(size=(2, 2)))[0]
    Ua, Va = procrustes_align(U @ Q, V @ Q, U, V)
    np.testing.assert_allclose(Ua, U, atol=1e-12)
    np.testing.assert_allclose(Va, V, atol=1e-12)
    np.testing.assert_allclose((U @ Q) @ (V @ Q).T, U @ V.T, atol=1e-12)


def test_summary_reports_truth_errors():
    d = small_dataset(11, intervals=300)
    res = run_chain(ChainConfig(iterations=30, burn_in=10, seed=3), d.cells, d.y)
    s = summarize(res, d.truth)
    S = len(res.iterations)
    assert s.truth_errors["uv_mse_trace"].shape == (S,)
    assert s.truth_errors["u_sq_error_trace"].shape == (S, 2, 6)
    assert s.truth_errors["aligned_factor_mse_trace"].shape == (S, 2)
    table = dict(s.to_table())
    assert table["n_samples"] == S and "truth/uv_mse" in table
