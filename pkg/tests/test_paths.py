import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stochflock import _core
from stochflock.errors import ConfigError, GridError
from stochflock.noise import ConstantNoise, PowerDecay
from stochflock.paths import (
    BrownianPath,
    base_normals,
    dump_path,
    extend,
    load_path,
    path_seed,
    refine,
    refine_all,
    sample_path,
    stochastic_integral,
    uniform_grid,
)


def _endpoints(n, horizon=1.0):
    # W(horizon) for n independent paths with a single base step
    return np.array([sample_path(horizon, horizon, path_seed(7, i)).values[-1]
                     for i in range(n)])


def test_sample_path_grid():
    p = sample_path(1.0, 0.5, 3)
    assert np.array_equal(p.times, [0.0, 0.5, 1.0])
    assert p.values[0] == 0.0


def test_sample_path_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        sample_path(0.0, 0.1, 1)
    with pytest.raises(ConfigError):
        sample_path(1.0, -0.1, 1)


def test_w1_mean_and_variance():
    w = _endpoints(100_000)
    assert abs(w.mean()) < 0.01
    assert abs(w.var() - 1.0) < 0.02


def test_w1_ks_standard_normal():
    w = _endpoints(10_000)
    assert stats.kstest(w, "norm").pvalue > 1e-3


def test_disjoint_increments_uncorrelated():
    n = 100_000
    seeds = [path_seed(11, i) for i in range(n)]
    inc = np.array([np.diff(sample_path(1.0, 0.25, s).values)[[0, 2]] for s in seeds])
    r = np.corrcoef(inc[:, 0], inc[:, 1])[0, 1]
    assert abs(r) < 3 / np.sqrt(n)


def test_prefix_property():
    short = sample_path(1.0, 0.01, 5)
    long = sample_path(2.0, 0.01, 5)
    assert np.array_equal(long.values[: len(short)], short.values)
    assert np.array_equal(base_normals(5, 10), base_normals(5, 20)[:10])


def test_path_seeds_distinct_and_stable():
    seeds = {path_seed(1, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert path_seed(1, 3) == path_seed(1, 3)
    assert path_seed(1, 3) != path_seed(2, 3)


def test_refine_midpoint_mean():
    p = BrownianPath(np.array([0.0, 1.0]), np.array([0.0, 1.3]), 9)
    # the bridge conditional mean is the average of the endpoints
    devs = np.array([refine(BrownianPath(p.times, p.values, s), 0.0, 1.0, 2).values[1]
                     for s in range(2000)]) - 0.65
    assert abs(devs.mean()) < 3 * 0.5 / np.sqrt(2000)


def test_refine_midpoint_variance():
    n = 100_000
    mids = np.empty(n)
    for i in range(n):
        p = sample_path(1.0, 1.0, path_seed(3, i))
        mids[i] = refine(p, 0.0, 1.0, 2).values[1] - 0.5 * p.values[-1]
    assert abs(mids.var() - 0.25) < 0.01


def test_refine_keeps_original_nodes():
    p = sample_path(1.0, 0.1, 21)
    q = refine(refine(p, p.times[2], p.times[3], 4), p.times[7], p.times[8], 3)
    for t, w in zip(p.times, p.values):
        assert q.value_at(t) == w


def test_refine_requires_adjacent_nodes():
    p = sample_path(1.0, 0.1, 1)
    with pytest.raises(GridError):
        refine(p, p.times[0], p.times[2], 2)
    with pytest.raises(GridError):
        refine(p, p.times[0], p.times[1], 1)


def test_refine_all_matches_refine():
    p = sample_path(0.5, 0.1, 4)
    a = refine_all(p, 3)
    b = p
    for t0, t1 in zip(p.times[:-1], p.times[1:]):
        b = refine(b, t0, t1, 3)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.values, b.values)


def test_integrator_dyadic_nodes_match_refine():
    # the integrator's midpoint substep is refine(parts=2) of the base interval
    p = sample_path(0.25, 0.25, 77)
    half = refine(p, 0.0, 0.25, 2)
    t, w = _core.dyadic_node(np.uint64(77), 0.0, 0.25, 0.0, p.values[-1], _core.FULL // 2)
    assert (t, w) == (half.times[1], half.values[1])
    quarter = refine(half, 0.0, half.times[1], 2)
    t, w = _core.dyadic_node(np.uint64(77), 0.0, 0.25, 0.0, p.values[-1], _core.FULL // 4)
    assert (t, w) == (quarter.times[1], quarter.values[1])


def test_extend_appends_only():
    p = sample_path(1.0, 0.1, 8)
    q = extend(p, 3.0, 0.5)
    assert np.array_equal(q.values[: len(p)], p.values)
    assert q.times[-1] == 3.0
    assert extend(p, 0.5, 0.1) is p


def test_stochastic_integral_trivial_noises():
    p = sample_path(1.0, 0.01, 12)
    assert np.array_equal(stochastic_integral(p, ConstantNoise(1.0)).m_values, p.values)
    track = stochastic_integral(p, ConstantNoise(0.0))
    assert np.all(track.m_values == 0)
    assert track.m_values[0] == 0 and np.all(np.diff(track.qv_values) >= 0)


def test_stochastic_integral_refinement_consistency():
    noise = PowerDecay(1.0, 1.0)
    diffs = []
    for seed in range(100):
        coarse = sample_path(1.0, 1e-3, path_seed(5, seed))
        fine = refine_all(coarse, 10)
        diffs.append(stochastic_integral(coarse, noise).m_values[-1] -
                     stochastic_integral(fine, noise).m_values[-1])
    assert np.max(np.abs(diffs)) < 1e-2


def test_dump_load_round_trip():
    p = refine(sample_path(1.0, 0.25, 2**63 + 5), 0.25, 0.5, 3)
    buf = io.BytesIO()
    dump_path(p, buf)
    raw = buf.getvalue()
    assert len(raw) == 16 + 16 * len(p)
    assert int.from_bytes(raw[:8], "little") == p.seed
    q = load_path(io.BytesIO(raw))
    assert q.seed == p.seed
    assert np.array_equal(q.times, p.times) and np.array_equal(q.values, p.values)


def test_load_truncated_dump():
    buf = io.BytesIO()
    dump_path(sample_path(1.0, 0.5, 1), buf)
    with pytest.raises(GridError):
        load_path(io.BytesIO(buf.getvalue()[:-4]))


@settings(max_examples=40, deadline=None)
@given(horizon=st.floats(0.01, 10.0), dt=st.floats(1e-3, 1.0))
def test_uniform_grid_covers_horizon(horizon, dt):
    if dt > horizon:
        with pytest.raises(ConfigError):
            uniform_grid(horizon, dt)
        return
    g = uniform_grid(horizon, dt)
    assert g[0] == 0.0 and g[-1] == horizon
    assert np.all(np.diff(g) > 0)
    assert np.all(np.diff(g) <= dt * (1 + 1e-9))
