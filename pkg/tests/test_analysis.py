import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochflock.analysis import (
    EventAParams,
    EventClass,
    appendix_a_mask,
    cluster_norm,
    collision_lyapunov,
    comparison_process,
    concave_envelope,
    conditional_split,
    dufresne_law,
    envelope_target,
    event_A,
    exp_functional,
    exp_martingale,
    fit_decay,
    flocking_metrics,
    inverse_gamma_ks,
    jensen_gap,
    linear_slope,
    two_particle_lower_bound,
    wilson_interval,
)
from stochflock.errors import (
    BadIndex,
    DegenerateFit,
    DomainError,
    EmptyEnsemble,
    EmptyMask,
    WrongScenario,
)
from stochflock.integrator import StepController, SystemConfig, SystemState, simulate_batch
from stochflock.kernels import Constant, PowerLaw
from stochflock.noise import ConstantNoise, PowerDecay
from stochflock.paths import BrownianPath, path_seed, sample_path, stochastic_integral, uniform_grid


def _zero_path(horizon, dt):
    t = uniform_grid(horizon, dt)
    return BrownianPath(t, np.zeros_like(t), 0)


def _results(kernel, noise, n=4, d=2, paths=40, horizon=1.0, sampler="uniform_gaussian",
             keep=False, **params):
    cfg = SystemConfig(n, d, 1.0, kernel, noise, sampler, params)
    seeds = [path_seed(12, i) for i in range(paths)]
    return simulate_batch(cfg, StepController(1e-3), horizon, seeds, uniform_grid(horizon, 0.1),
                          keep_states=keep)


# martingale and comparison process


def test_exp_martingale_examples():
    p = sample_path(2.0, 0.01, 3)
    assert exp_martingale(stochastic_integral(p, ConstantNoise(0.5)), 0.0) == 1.0
    track = stochastic_integral(p, ConstantNoise(0.0))
    assert all(exp_martingale(track, t) == 1.0 for t in p.times[::20])


def test_exp_martingale_unit_mean():
    n = 100_000
    vals = np.empty(n)
    for i in range(n):
        track = stochastic_integral(sample_path(2.0, 0.5, path_seed(4, i)), ConstantNoise(0.5))
        vals[i] = exp_martingale(track, 2.0)
    assert abs(vals.mean() - 1) <= 3 * vals.std(ddof=1) / math.sqrt(n)


def test_comparison_process_examples():
    track = stochastic_integral(sample_path(1.0, 0.1, 6), PowerDecay(1.0, 0.75))
    for t in track.times:
        assert comparison_process(track, 0.0, 1.0, 2.5, t) == 2.5 * exp_martingale(track, t)
        assert comparison_process(track, 0.7, 1.0, 0.0, t) == 0.0


def test_comparison_process_mean():
    n = 100_000
    vals = np.empty(n)
    for i in range(n):
        track = stochastic_integral(sample_path(1.0, 0.5, path_seed(8, i)), ConstantNoise(0.5))
        vals[i] = comparison_process(track, 0.7, 1.0, 2.0, 1.0)
    target = 2.0 * math.exp(-0.7)
    assert abs(vals.mean() - target) <= 3 * vals.std(ddof=1) / math.sqrt(n)


# exponential functional and event A


def test_exp_functional_examples():
    v, _ = exp_functional(_zero_path(60.0, 1e-3), 1.0, 0.0, 60.0)
    assert v == pytest.approx(1.0, rel=1e-6)
    v, tail = exp_functional(_zero_path(10.0, 1e-4), 2.0, 0.0, 10.0)
    assert v == pytest.approx((1 - math.exp(-20)) / 2, rel=1e-8)
    assert tail == pytest.approx(math.exp(-20) / 1.0)
    with pytest.raises(DomainError):
        exp_functional(_zero_path(1.0, 0.1), 0.0, 1.0, 1.0)


def test_event_A_trivial_cases():
    params = EventAParams(4.0, 2.0, 1.0, 0.5)
    path = _zero_path(params.horizon, 0.1)
    assert event_A(1.0, 0.0, params, path) is EventClass.InA
    assert event_A(1e3, 1e3, params, path) is EventClass.NotInA


def test_event_params_coefficients():
    p = EventAParams(4.0, 2.0, 1.0, 0.5)
    assert p.drift_coef == pytest.approx(0.25)
    assert p.vol_coef == pytest.approx(1.0)
    assert p.horizon == pytest.approx(200.0)
    assert p.factor == pytest.approx((2**5 / 4) ** 0.5)
    event = EventAParams(4.0, 3.0, 1.0, 0.5, constant_form="event")
    assert event.factor == pytest.approx((16 / 3) ** 0.5)
    assert EventAParams(4.0, 2.0, 1.0, 0.5, constant=9.0).factor == pytest.approx(3.0)
    with pytest.raises(DomainError):
        EventAParams(2.0, 2.0, 1.0, 0.5)


def test_dufresne_law_parameters():
    shape, scale = dufresne_law(0.25, 1.0)
    assert shape == pytest.approx(0.5) and scale == pytest.approx(2.0)


def test_inverse_gamma_ks_on_exact_sample():
    from scipy import stats

    x = stats.invgamma(0.5, scale=2.0).rvs(size=4000, random_state=np.random.default_rng(0))
    res = inverse_gamma_ks(x, 0.5)
    assert res.statistic < 0.03
    assert res.scale == pytest.approx(2.0, rel=0.15)


# metrics and conditioning


def test_identical_paths_have_zero_se():
    res = _results(Constant(1.0), ConstantNoise(0.5), paths=1)
    stats = flocking_metrics(res * 5)
    assert np.all(stats.mean_vnorm[2.0].se == 0)
    assert np.all(stats.martingale_mean.se == 0)


def test_all_true_mask_matches_unconditional():
    res = _results(Constant(1.0), ConstantNoise(0.5))
    stats = flocking_metrics(res, 2.0, mask=[True] * len(res))
    assert np.array_equal(stats.cond_mean_vnorm[2.0].mean, stats.mean_vnorm[2.0].mean)
    assert np.array_equal(stats.cond_mean_vnorm[2.0].se, stats.mean_vnorm[2.0].se)
    assert stats.event_frequency.estimate == 1.0


def test_empty_mask_omits_series():
    res = _results(Constant(1.0), ConstantNoise(0.5), paths=5)
    stats = flocking_metrics(res, 2.0, mask=[False] * 5)
    assert stats.cond_mean_vnorm is None and stats.cond_count == 0
    with pytest.raises(EmptyMask):
        conditional_split(np.ones((5, 3)), [False] * 5)
    with pytest.raises(EmptyEnsemble):
        flocking_metrics([])


def test_indeterminate_excluded():
    res = _results(Constant(1.0), ConstantNoise(0.5), paths=4)
    mask = [EventClass.InA, EventClass.Indeterminate, EventClass.NotInA, EventClass.InA]
    stats = flocking_metrics(res, 2.0, mask=mask)
    assert stats.indeterminate == 1 and stats.cond_count == 2
    assert stats.event_frequency.n == 3


def test_conditional_consistency():
    res = _results(PowerLaw(1.0), ConstantNoise(0.5))
    vals = np.stack([r.vnorm[:, 0] for r in res])
    mask = vals[:, 0] > np.median(vals[:, 0])
    pa, inside, outside = conditional_split(vals, mask)
    assert np.max(np.abs(vals.mean(axis=0) - (pa * inside + (1 - pa) * outside))) <= 1e-12


def test_wilson_interval():
    f = wilson_interval(0, 2000)
    assert f.lower == 0.0 and 1.8e-3 < f.upper < 2e-3
    f = wilson_interval(50, 100)
    assert f.lower < 0.5 < f.upper


# fits


def test_fit_decay_planted_rates():
    t = np.linspace(0, 5, 101)
    f = fit_decay(t, 3 * np.exp(-2 * t), "Exponential", (0, 5))
    assert abs(f.rate - 2) < 1e-8 and f.r_squared > 1 - 1e-12
    g = fit_decay(t, (1 + t) ** -0.5, "Algebraic", (0, 5))
    assert abs(g.rate - 0.5) < 1e-8


@settings(max_examples=40, deadline=None)
@given(rate=st.floats(0.1, 5.0), scale=st.floats(1e-3, 1e3))
def test_fit_decay_scale_invariant(rate, scale):
    t = np.linspace(0, 5, 51)
    y = np.exp(-rate * t)
    a = fit_decay(t, y, "Exponential")
    b = fit_decay(t, scale * y, "Exponential")
    assert abs(a.rate - b.rate) <= 1e-9 * max(1.0, rate)
    assert b.intercept == pytest.approx(scale * a.intercept, rel=1e-9)


def test_fit_decay_default_window_and_flat_series():
    t = np.linspace(0, 10, 101)
    f = fit_decay(t, np.exp(-t))
    assert f.window == pytest.approx((2.0, 10.0))
    with pytest.raises(DegenerateFit):
        fit_decay(t, np.ones_like(t))


def test_linear_slope_rows():
    t = np.linspace(0, 1, 11)
    y = np.stack([2 * t + 1, -t])
    assert np.allclose(linear_slope(t, y), [2.0, -1.0])


# cluster diagnostics


def test_cluster_norm_examples():
    x = np.array([[0.0], [3.0], [7.0]])
    assert cluster_norm(x, [2]) == 0.0
    assert cluster_norm(x, [0, 1]) == pytest.approx(3 * math.sqrt(2))
    with pytest.raises(BadIndex):
        cluster_norm(x, [])
    with pytest.raises(BadIndex):
        cluster_norm(x, [0, 3])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8), k=st.integers(1, 8))
def test_cluster_norm_bound(seed, n, k):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n, 2))
    idx = rng.choice(n, size=min(k, n), replace=False)
    assert cluster_norm(y, idx) <= 2 * math.sqrt(len(idx)) * np.linalg.norm(y) + 1e-12


def test_collision_lyapunov_examples():
    s = math.sqrt(2)
    state = SystemState(0.0, [[0.25, 0.25], [-0.25, -0.25]], [[0.1, 0.0], [0.1, 0.0]])
    assert collision_lyapunov(state, [0, 1], PowerLaw(1.0), 2.0, 2) == (0.0, 0.0)
    state = SystemState(0.0, [[math.e / s], [0.0]], [[1 / s], [0.0]])
    ep, em = collision_lyapunov(state, [0, 1], PowerLaw(1.0), 2.0, 2)
    assert ep == pytest.approx(2.0) and em == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        collision_lyapunov(SystemState(0.0, [[1.0], [1.0]], [[0.0], [0.0]]), [0, 1],
                           PowerLaw(1.0), 1.0, 2)


def test_collision_lyapunov_bounded_near_contact():
    cfg = SystemConfig(2, 1, 1.0, PowerLaw(1.5), ConstantNoise(0.0))
    res = simulate_batch(cfg, StepController(1e-3), 2.0, [0], uniform_grid(2.0, 1e-2),
                         initial=([[-0.5], [0.5]], [[2.0], [-2.0]]), keep_states=True)[0]
    eplus = np.array([collision_lyapunov(SystemState(0.0, x, v), [0, 1], PowerLaw(1.5), 1.0, 2)[0]
                      for x, v in zip(*res.states)])
    assert np.all(np.isfinite(eplus))
    assert eplus.max() <= eplus[0] + 0.1
    assert res.min_dist.min() < 0.2


# two-particle system


def test_two_particle_mask_and_bound():
    res = _results(PowerLaw(2.0), ConstantNoise(0.3), n=2, d=1, paths=30, keep=True,
                   sampler="two_particle", pos=0.5, vel=1.0)
    mask = appendix_a_mask(res, PowerLaw(2.0), 1.0)
    assert mask.all()
    bound = two_particle_lower_bound(res, PowerLaw(2.0), 1.0, mask)
    assert bound.count == 30
    assert np.all(bound.mean_v >= bound.mean_tail - 3 * np.hypot(bound.se_v, bound.se_tail))
    assert two_particle_lower_bound(res, PowerLaw(2.0), 1.0, [False] * 30) is None


def test_two_particle_wrong_scenario():
    res = _results(PowerLaw(2.0), ConstantNoise(0.3), paths=2, keep=True)
    with pytest.raises(WrongScenario):
        two_particle_lower_bound(res, PowerLaw(2.0), 1.0, [True, True])
    res = _results(PowerLaw(2.0), ConstantNoise(0.3), n=2, d=1, paths=2)
    with pytest.raises(WrongScenario):
        appendix_a_mask(res, PowerLaw(2.0), 1.0)


# concave envelope


def test_envelope_examples():
    assert concave_envelope(1.0, 2.0, 0.5, 1.0, 0.0) == 0.0
    t, a, alpha, lam = 2.0, 3.0, 0.4, 1.5
    ap = a / (a - 1)
    rs = 0.5 * (alpha * ap * lam * t) ** (1 / alpha)
    lin = 2 * rs * (math.e * alpha * ap * lam * t) ** (-1 / alpha)
    assert lin == pytest.approx(math.exp(-1 / alpha), rel=1e-12)
    assert envelope_target(t, a, alpha, lam, rs) == pytest.approx(math.exp(-1 / alpha), rel=1e-12)
    with pytest.raises(DomainError):
        concave_envelope(1.0, 1.0, 0.5, 1.0, 1.0)
    with pytest.raises(DomainError):
        concave_envelope(1.0, 2.0, 1.5, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0.1, 5.0), a=st.floats(1.1, 4.0), alpha=st.floats(0.05, 0.95),
       lam=st.floats(0.2, 3.0))
def test_envelope_dominates_and_is_concave(t, a, alpha, lam):
    ap = a / (a - 1)
    rs = 0.5 * (alpha * ap * lam * t) ** (1 / alpha)
    r = np.concatenate([[0.0], np.geomspace(1e-4 * rs, 1e3 * rs, 200)])
    fh = concave_envelope(t, a, alpha, lam, r)
    assert np.all(fh - envelope_target(t, a, alpha, lam, r) >= -1e-12)
    mid = concave_envelope(t, a, alpha, lam, 0.5 * (r[:-1] + r[1:]))
    assert np.all(mid >= 0.5 * (fh[:-1] + fh[1:]) - 1e-12)


def test_jensen_direction_on_ensemble():
    res = _results(PowerLaw(0.5), ConstantNoise(0.3), n=4, d=2, paths=200, horizon=1.0)
    xsup = np.array([r.xsup[-1, 0] for r in res])
    mean_f, f_mean, se = jensen_gap(xsup, 1.0, 2.0, 0.5, 1.0)
    assert mean_f <= f_mean + 3 * se
