"""Reverse-time integrators: increment law, step algebra, moment oracles."""

import math

import numpy as np
import pytest

from revsde.errors import (
    NegativeTimeError,
    NonFiniteStateError,
    NonPositiveStepError,
    UnsupportedDataError,
)
from revsde.rng import CounterStream
from revsde.samplers import (
    BrownianDraw,
    InitKind,
    SamplerKind,
    TimeGrid,
    draw_increments,
    em_step,
    forward_marginal_sample,
    moment_oracle_gaussian,
    sample_reverse,
    srk_step,
)
from revsde.schedules import make_generic_schedule, make_vp_schedule, marginal_params
from revsde.score import (
    GaussianMixture,
    Perturbation,
    ScoreModel,
    diagonal_covariance,
    metered_epsilon,
    single_gaussian,
)

SCHED = make_vp_schedule()


class _ConstScore:
    """Stand-in score model returning a fixed value; for step algebra only."""

    def __init__(self, value=0.0):
        self.value = value

    def evaluate(self, t, x, meter=None):
        return np.full_like(x, self.value)


def _gauss1d(mean=0.8, var=0.5):
    return single_gaussian(np.array([mean]), diagonal_covariance(np.array([var])))


def _model(mix, **kw):
    return ScoreModel(mixture=mix, schedule=SCHED, **kw)


def test_time_grid_nodes():
    grid = TimeGrid(T=2.0, K=4)
    assert grid.h == 0.5
    np.testing.assert_allclose(grid.tau, [2.0, 1.5, 1.0, 0.5, 0.0], atol=1e-15)
    assert grid.tau[0] == 2.0 and grid.tau[-1] == 0.0


def test_time_grid_degenerate_and_errors():
    grid = TimeGrid(T=1.5, K=0)
    assert grid.h == 0.0
    np.testing.assert_array_equal(grid.tau, [1.5])
    with pytest.raises(NegativeTimeError):
        TimeGrid(T=0.0, K=3)
    with pytest.raises(NonPositiveStepError):
        TimeGrid(T=1.0, K=-1)


def test_increment_law_moments():
    h = 0.01
    n = 100000
    draw = draw_increments(CounterStream(3), h, 0, np.arange(n), 1)
    dw = draw.dw[:, 0]
    b = draw.beta[:, 0]
    se_var_dw = h * math.sqrt(2.0 / n)
    se_var_b = (1.0 / 3.0) * math.sqrt(2.0 / n)
    assert abs(dw.var() - h) < 4 * se_var_dw
    assert abs(b.var() - 1.0 / 3.0) < 4 * se_var_b
    cov = np.cov(dw, math.sqrt(h) * b)[0, 1]
    # Var(dw) Var(sqrt(h) b) = h^2/3, Cov = h/2
    se_cov = math.sqrt((h * h / 3.0 + (h / 2.0) ** 2) / n)
    assert abs(cov - h / 2.0) < 4 * se_cov


def test_increment_law_matches_brute_force_time_integral():
    # beta is h^{-3/2} int_0^h (W_s - W_0) ds; simulate the integral on a
    # fine random walk and compare both constructions to the analytic law
    h = 0.04
    n, m = 20000, 256
    r = np.random.default_rng(12)
    xi = r.standard_normal((n, m)) * math.sqrt(h / m)
    w = np.cumsum(xi, axis=1)
    dw_bf = w[:, -1]
    # trapezoid over substep endpoints, W_0 = 0
    integral = (np.sum(w[:, :-1], axis=1) + 0.5 * w[:, -1]) * (h / m)
    beta_bf = integral / h**1.5
    assert abs(beta_bf.var() - 1.0 / 3.0) < 5 * (1.0 / 3.0) * math.sqrt(2.0 / n)
    cov_bf = np.cov(dw_bf, math.sqrt(h) * beta_bf)[0, 1]
    se_cov = math.sqrt((h * h / 3.0 + (h / 2.0) ** 2) / n)
    assert abs(cov_bf - h / 2.0) < 5 * se_cov
    draw = draw_increments(CounterStream(4), h, 0, np.arange(n), 1)
    cov_mine = np.cov(draw.dw[:, 0], math.sqrt(h) * draw.beta[:, 0])[0, 1]
    assert abs(cov_mine - h / 2.0) < 5 * se_cov


def test_draw_increments_rejects_bad_step():
    with pytest.raises(NonPositiveStepError):
        draw_increments(CounterStream(0), 0.0, 0, np.arange(2), 1)


def test_em_step_hand_computed():
    grid = TimeGrid(T=2.0, K=10)  # tau_0 = 2, h = 0.2
    y = np.array([[0.5]])
    draw = BrownianDraw(dw=np.array([[0.1]]), beta=np.array([[0.0]]))
    out = em_step(y, 0, grid, SCHED, _ConstScore(-0.3), draw)
    want = 0.5 + (1.0 * 0.5 + 2.0 * (-0.3)) * 0.2 + math.sqrt(2.0) * 0.1
    assert out[0, 0] == pytest.approx(want, rel=1e-15)


def test_em_step_flags_nonfinite():
    grid = TimeGrid(T=2.0, K=10)
    y = np.array([[np.inf]])
    draw = BrownianDraw(dw=np.zeros((1, 1)), beta=np.zeros((1, 1)))
    with pytest.raises(NonFiniteStateError):
        em_step(y, 0, grid, SCHED, _ConstScore(0.0), draw)


def test_srk_step_deterministic_linear_reduction():
    # with g == 0 and a(t, x) = lam x the step is the order-2 Taylor factor
    lam = 0.7
    sched = make_generic_schedule(lambda t: lam, lambda t: 0.0)
    grid = TimeGrid(T=1.0, K=4)
    h = grid.h
    y = np.array([[1.3]])
    zero = BrownianDraw(dw=np.zeros((1, 1)), beta=np.zeros((1, 1)))
    out = srk_step(y, 0, grid, sched, _ConstScore(0.0), zero)
    want = 1.3 * (1.0 + lam * h + (lam * h) ** 2 / 2.0)
    assert out[0, 0] == pytest.approx(want, rel=1e-15)


def test_srk_step_pure_brownian():
    sched = make_generic_schedule(lambda t: 0.0, lambda t: 1.0)
    grid = TimeGrid(T=1.0, K=4)
    y = np.array([[0.2, -0.4]])
    draw = BrownianDraw(dw=np.array([[0.3, 0.1]]), beta=np.array([[0.5, -0.2]]))
    out = srk_step(y, 0, grid, sched, _ConstScore(0.0), draw)
    np.testing.assert_allclose(out, y + draw.dw, rtol=1e-15)


def test_srk_step_g_next_override():
    sched = make_generic_schedule(lambda t: 0.0, lambda t: 1.0)
    grid = TimeGrid(T=1.0, K=4)
    h = grid.h
    y = np.zeros((1, 1))
    draw = BrownianDraw(dw=np.array([[0.3]]), beta=np.array([[0.5]]))
    out = srk_step(y, 0, grid, sched, _ConstScore(0.0), draw, g_next=2.0)
    want = 1.0 * 0.3 + (2.0 - 1.0) * (0.3 - math.sqrt(h) * 0.5)
    assert out[0, 0] == pytest.approx(want, rel=1e-14)


@pytest.mark.parametrize("sampler", [SamplerKind.EM, SamplerKind.SRK15])
@pytest.mark.parametrize("init", [InitKind.STANDARD_NORMAL_SIGMA_T, InitKind.EXACT_TERMINAL])
def test_terminal_moments_match_oracle(sampler, init):
    mean0, var0 = 0.8, 0.5
    grid = TimeGrid(T=2.0, K=25)
    n = 30000
    model = _model(_gauss1d(mean0, var0))
    batch = sample_reverse(SCHED, grid, model, n=n, seed=21, sampler=sampler, init=init)
    means, variances = moment_oracle_gaussian(
        SCHED, grid, mean0, var0, sampler=sampler, init=init
    )
    m_hat = batch.data.mean()
    v_hat = batch.data.var(ddof=1)
    assert abs(m_hat - means[-1]) < 4 * math.sqrt(variances[-1] / n)
    assert abs(v_hat - variances[-1]) < 4 * variances[-1] * math.sqrt(2.0 / (n - 1))


def test_oracle_initial_conditions():
    grid = TimeGrid(T=1.0, K=5)
    phi_f, phi_fg = marginal_params(SCHED, 1.0)
    m_sig, v_sig = moment_oracle_gaussian(SCHED, grid, 0.8, 0.5, init=InitKind.STANDARD_NORMAL_SIGMA_T)
    assert m_sig[0] == 0.0 and v_sig[0] == pytest.approx(phi_fg, rel=1e-15)
    m_ex, v_ex = moment_oracle_gaussian(SCHED, grid, 0.8, 0.5, init=InitKind.EXACT_TERMINAL)
    assert m_ex[0] == pytest.approx(phi_f * 0.8, rel=1e-15)
    assert v_ex[0] == pytest.approx(phi_f**2 * 0.5 + phi_fg, rel=1e-15)


def test_vp_stationarity_short_horizon():
    # unit-variance centered data is a fixed point of the reverse dynamics;
    # over T = 0.01 the EM defect (h tau / 2)^2 per step stays below 1e-10
    grid = TimeGrid(T=0.01, K=100)
    means, variances = moment_oracle_gaussian(
        SCHED, grid, 0.0, 1.0, init=InitKind.EXACT_TERMINAL
    )
    assert np.max(np.abs(means)) == 0.0
    assert np.max(np.abs(variances - 1.0)) < 1e-10


def test_vp_stationarity_inflation_law():
    # at T = 4 the EM variance defect follows v' = (1 - h tau/2)^2 v + h tau
    grid = TimeGrid(T=4.0, K=100)
    h = grid.h
    v = 1.0
    for k in range(100):
        tau = grid.tau[k]
        v = (1.0 - h * tau / 2.0) ** 2 * v + h * tau
    _, variances = moment_oracle_gaussian(
        SCHED, grid, 0.0, 1.0, init=InitKind.EXACT_TERMINAL
    )
    assert variances[-1] == pytest.approx(v, rel=1e-13)
    assert variances[-1] > 1.0 + 1e-5  # the defect is real at this h


def test_oracle_rejects_bad_data():
    grid = TimeGrid(T=1.0, K=5)
    with pytest.raises(UnsupportedDataError):
        moment_oracle_gaussian(SCHED, grid, 0.0, -1.0)
    with pytest.raises(UnsupportedDataError):
        moment_oracle_gaussian(SCHED, grid, np.zeros(2), 1.0)


def test_degenerate_grid_returns_initial_draws():
    grid = TimeGrid(T=0.5, K=0)
    model = _model(_gauss1d())
    batch = sample_reverse(SCHED, grid, model, n=20000, seed=4, init=InitKind.EXACT_TERMINAL)
    assert batch.stable and batch.meta["h"] == 0.0
    phi_f, phi_fg = marginal_params(SCHED, 0.5)
    want_mean = phi_f * 0.8
    want_var = phi_f**2 * 0.5 + phi_fg
    assert abs(batch.data.mean() - want_mean) < 5 * math.sqrt(want_var / 20000)
    assert abs(batch.data.var(ddof=1) - want_var) < 5 * want_var * math.sqrt(2.0 / 19999)


@pytest.mark.parametrize("sampler", [SamplerKind.EM, SamplerKind.SRK15])
def test_worker_and_chunk_invariance(sampler):
    grid = TimeGrid(T=1.0, K=7)
    mix = _gauss1d()

    def run(workers, chunk):
        model = _model(mix)
        return sample_reverse(
            SCHED, grid, model, n=4097, seed=8, sampler=sampler,
            init=InitKind.EXACT_TERMINAL, workers=workers, chunk_size=chunk,
        ).data

    base = run(1, 512)
    np.testing.assert_array_equal(base, run(3, 512))
    np.testing.assert_array_equal(base, run(1, 4096))
    np.testing.assert_array_equal(base, run(4, 1024))


def test_sampler_streams_differ():
    grid = TimeGrid(T=1.0, K=7)
    mix = _gauss1d()
    em = sample_reverse(SCHED, grid, _model(mix), n=64, seed=8, sampler=SamplerKind.EM)
    srk = sample_reverse(SCHED, grid, _model(mix), n=64, seed=8, sampler=SamplerKind.SRK15)
    assert not np.array_equal(em.data, srk.data)


def test_meter_survives_chunked_run():
    grid = TimeGrid(T=1.0, K=5)
    model = _model(_gauss1d(), perturbation=Perturbation.ADDITIVE_BIAS, magnitude=0.25)
    sample_reverse(SCHED, grid, model, n=3000, seed=1, workers=2, chunk_size=700)
    assert metered_epsilon(model) == pytest.approx(0.25, abs=1e-12)


def test_unstable_batch_is_flagged_and_kept_finite():
    grid = TimeGrid(T=4.0, K=10)
    model = _model(_gauss1d(), perturbation=Perturbation.MULTIPLICATIVE, magnitude=1e200)
    batch = sample_reverse(SCHED, grid, model, n=256, seed=2)
    assert not batch.stable
    assert batch.first_bad_step is not None and 0 <= batch.first_bad_step < 10
    assert np.all(np.isfinite(batch.data))


def test_forward_marginal_moments():
    mix = _gauss1d(0.8, 0.5)
    t = 1.7
    phi_f, phi_fg = marginal_params(SCHED, t)
    n = 30000
    batch = forward_marginal_sample(mix, SCHED, t, n, seed=5)
    want_var = phi_f**2 * 0.5 + phi_fg
    assert abs(batch.data.mean() - phi_f * 0.8) < 5 * math.sqrt(want_var / n)
    assert abs(batch.data.var(ddof=1) - want_var) < 5 * want_var * math.sqrt(2.0 / (n - 1))


def test_forward_marginal_at_zero_is_the_data_law():
    mix = _gauss1d(0.8, 0.5)
    n = 30000
    batch = forward_marginal_sample(mix, SCHED, 0.0, n, seed=6)
    assert abs(batch.data.mean() - 0.8) < 5 * math.sqrt(0.5 / n)
    assert abs(batch.data.var(ddof=1) - 0.5) < 5 * 0.5 * math.sqrt(2.0 / (n - 1))


def test_smaller_steps_get_closer_to_the_data():
    # EM with the exact score and exact init: W2 to data shrinks with h
    from revsde.harness import build_problem, reference_summary
    from revsde.metrics import MomentMode, accumulate_moments, gaussian_w2

    mix = build_problem("offset-gauss:4")
    ref = reference_summary(mix, MomentMode.DIAG)
    out = {}
    for h in (0.4, 0.1):
        grid = TimeGrid(T=4.0, K=round(4.0 / h))
        model = _model(mix)
        batch = sample_reverse(
            SCHED, grid, model, n=4000, seed=11, init=InitKind.EXACT_TERMINAL
        )
        out[h] = gaussian_w2(accumulate_moments(batch.data, MomentMode.DIAG), ref)
    assert out[0.1] < out[0.4]
