import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_sample
from oracles import gcv_ref, kkt_residual, saddle_solve, smoother_matrix
from sfda.errors import DegenerateGCVError, RankDeficiencyError, ValidationError
from sfda.spline import (
    CubicSmoother,
    DenseSmoother,
    GroupSample,
    Observation,
    SplineFit,
    evaluate,
    fit_penalized,
    gcv_score,
    lambda_grid,
    make_smoother,
    select_lambda,
    smoother_trace,
)

FIXTURE_T = (0.0, 0.25, 0.5, 0.75)
FIXTURE_Y = (0.0, 1.0, 0.5, -0.2)


def single_subject(t, y):
    return GroupSample(t=t, y=y, subject=np.zeros(len(t), int), subject_ids=("s",))


def one_obs_each(t, y):
    return GroupSample(t=t, y=y, subject=np.arange(len(t)), subject_ids=tuple(range(len(t))))


@pytest.fixture
def fixture4():
    return one_obs_each(FIXTURE_T, FIXTURE_Y)


# --- samples ---------------------------------------------------------------

def test_group_sample_indexing():
    s = GroupSample.from_records(["b", "a", "b", "c"], [0.1, 0.2, 0.3, 0.4], [1, 2, 3, 4], group=2)
    assert s.subject_ids == ("b", "a", "c")
    np.testing.assert_array_equal(s.subject, [0, 1, 0, 2])
    np.testing.assert_array_equal(s.counts, [2, 1, 1])
    assert (s.M, s.n, s.group) == (4, 3, 2)
    with pytest.raises(ValueError):
        s.t[0] = 0.5


def test_observation_round_trip():
    s = GroupSample.from_records(["x", "y"], [0.0, 1.0], [3.0, 4.0])
    again = GroupSample.from_observations(s.observations())
    np.testing.assert_array_equal(again.t, s.t)
    assert again.subject_ids == s.subject_ids


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(group=3, subject="a", t=0.5, y=1.0),
        dict(group=1, subject="a", t=1.5, y=1.0),
        dict(group=1, subject="a", t=0.5, y=float("inf")),
    ],
)
def test_observation_validation(kwargs):
    with pytest.raises(ValidationError):
        Observation(**kwargs)


def test_sample_validation():
    with pytest.raises(ValidationError):
        GroupSample(t=[0.1, 1.2], y=[0, 0], subject=[0, 0], subject_ids=("a",))
    with pytest.raises(ValidationError):
        GroupSample(t=[0.1, 0.2], y=[0, 0], subject=[0, 0], subject_ids=("a", "b"))
    with pytest.raises(ValidationError):
        GroupSample.from_observations([])


def test_observation_weights(rng):
    s = random_sample(rng, 5)
    u = np.arange(1.0, 6.0)
    np.testing.assert_array_equal(s.observation_weights(u), u[s.subject])
    with pytest.raises(ValidationError):
        s.observation_weights(np.r_[u[:-1], 0.0])
    with pytest.raises(ValidationError):
        s.observation_weights(u[:3])


# --- fit_penalized / evaluate -------------------------------------------------

@pytest.mark.parametrize("lam", [1e-6, 0.01, 10.0])
def test_linear_data_reproduced(lam):
    t = np.array([0.1, 0.4, 0.9])
    fit = fit_penalized(one_obs_each(t, 2 * t + 1), lam)
    np.testing.assert_allclose(fit(t), 2 * t + 1, atol=1e-8)
    np.testing.assert_allclose(fit.c, 0.0, atol=1e-8)


def test_zero_data_gives_zero_fit(rng):
    s = random_sample(rng)
    s = GroupSample(t=s.t, y=np.zeros(s.M), subject=s.subject, subject_ids=s.subject_ids)
    fit = fit_penalized(s, 0.1)
    assert not fit.c.any() and not fit.d.any()
    assert not evaluate(fit, np.linspace(0, 1, 5)).any()


def test_fixture_matches_dense_oracle(fixture4):
    fit = fit_penalized(fixture4, 0.01)
    c, d, fitted = saddle_solve(FIXTURE_T, FIXTURE_Y, 0.01)
    np.testing.assert_allclose(fit(np.array(FIXTURE_T)), fitted, atol=1e-6)
    np.testing.assert_allclose(fit.c, c, atol=1e-6)
    np.testing.assert_allclose(fit.d, d, atol=1e-6)


def test_evaluate_pure_null_space():
    fit = SplineFit(m=2, lam=1.0, knots=np.array([0.2, 0.6]), c=np.zeros(2), d=np.array([1.0, 2.0]))
    assert evaluate(fit, 0.25) == pytest.approx(1.5)
    zero = SplineFit(m=2, lam=1.0, knots=np.array([0.2, 0.6]), c=np.zeros(2), d=np.zeros(2))
    assert evaluate(zero, 0.7) == 0.0
    with pytest.raises(ValidationError):
        evaluate(fit, 1.2)


def test_evaluate_at_knots_matches_stationarity_identity(rng):
    s = random_sample(rng, 6)
    u = rng.uniform(0.5, 2.0, s.n)
    lam = 1e-3
    fit = fit_penalized(s, lam, subject_weights=u)
    w = s.observation_weights(u)
    np.testing.assert_allclose(fit(s.t), s.y - s.M * lam * fit.c / w, atol=1e-8)


def test_fit_errors(fixture4):
    with pytest.raises(ValidationError):
        fit_penalized(fixture4, 0.0)
    with pytest.raises(ValidationError):
        fit_penalized(fixture4, 0.1, subject_weights=[1, 1, -1, 1])
    with pytest.raises(RankDeficiencyError):
        fit_penalized(single_subject([0.3, 0.3], [1.0, 2.0]), 0.1)


@given(st.integers(0, 10**6), st.floats(-5, 1))
def test_kkt_and_oracle_agreement(seed, log_lam):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, int(rng.integers(2, 9)), ties=bool(seed % 3 == 0))
    if np.unique(s.t).size < 2:
        return
    lam = 10.0**log_lam
    u = rng.uniform(0.3, 2.5, s.n) if seed % 2 else None
    w = None if u is None else s.observation_weights(u)
    fit = fit_penalized(s, lam, subject_weights=u)
    scale = 1.0 + np.abs(s.y).max()
    assert kkt_residual(s.t, s.y, lam, fit.c, fit.d, w=w) < 1e-8 * scale
    assert np.abs(np.vander(s.t, 2, increasing=True).T @ fit.c).max() < 1e-8 * scale
    _, _, fitted = saddle_solve(s.t, s.y, lam, w=w)
    np.testing.assert_allclose(fit(s.t), fitted, atol=1e-6)


@given(st.integers(0, 10**6), st.sampled_from([0.5, 2.0, 5.0]))
def test_uniform_weights_rescale_lambda(seed, u):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, 6)
    lam = 10.0 ** rng.uniform(-4, 0)
    weighted = fit_penalized(s, lam, subject_weights=np.full(s.n, u))
    plain = fit_penalized(s, lam / u)
    np.testing.assert_allclose(weighted(s.t), plain(s.t), atol=1e-8)


@given(st.integers(0, 10**6))
def test_roughness_nonincreasing(seed):
    s = random_sample(np.random.default_rng(seed), 6)
    rough = [fit_penalized(s, lam).roughness() for lam in np.logspace(-6, 2, 12)]
    assert all(b <= a + 1e-10 for a, b in zip(rough, rough[1:]))


# --- traces and GCV --------------------------------------------------------------

def test_trace_limits():
    t = np.linspace(0.05, 0.95, 10)
    s = one_obs_each(t, np.cos(3 * t))
    for method in ("dense", "cubic"):
        assert smoother_trace(s, 1e10, method=method) == pytest.approx(2.0, abs=1e-3)
    s6 = one_obs_each(np.linspace(0.1, 0.9, 6), np.arange(6.0))
    assert smoother_trace(s6, 1e-12) == pytest.approx(6.0, abs=1e-2)


def test_trace_matches_column_probe(fixture4):
    S = smoother_matrix(FIXTURE_T, 0.01)
    for method in ("dense", "cubic"):
        assert smoother_trace(fixture4, 0.01, method=method) == pytest.approx(np.trace(S), abs=1e-8)


@given(st.integers(0, 10**6))
def test_trace_bounds_and_monotone(seed):
    s = random_sample(np.random.default_rng(seed), 7)
    if np.unique(s.t).size < 2:
        return
    traces = [smoother_trace(s, lam) for lam in np.logspace(-6, 3, 15)]
    assert all(2 - 1e-3 < tr < s.M + 1e-3 for tr in traces)
    assert all(b <= a + 1e-9 for a, b in zip(traces, traces[1:]))


def test_gcv_constant_data_is_zero(rng):
    s = random_sample(rng)
    s = GroupSample(t=s.t, y=np.full(s.M, 3.0), subject=s.subject, subject_ids=s.subject_ids)
    for lam in (1e-4, 1.0):
        assert gcv_score(s, lam) == pytest.approx(0.0, abs=1e-20)


@pytest.mark.parametrize("lam", [1e-3, 1e-2, 1e-1])
def test_gcv_matches_oracle(fixture4, lam):
    expected = gcv_ref(FIXTURE_T, FIXTURE_Y, lam)
    for method in ("dense", "cubic"):
        assert gcv_score(fixture4, lam, method=method) == pytest.approx(expected, rel=1e-8, abs=1e-12)


def test_gcv_degenerate():
    # two distinct points with m=2 fit exactly for every lambda
    s = one_obs_each([0.2, 0.8], [1.0, 3.0])
    with pytest.raises(DegenerateGCVError):
        gcv_score(s, 0.1)


def test_select_lambda_exhaustive(rng):
    s = random_sample(rng, 10)
    grid = np.logspace(-4, 2, 25)
    scores = [gcv_ref(s.t, s.y, lam) for lam in grid]
    assert select_lambda(s, grid=grid) == grid[int(np.argmin(scores))]
    assert select_lambda(s, grid=grid, method="dense") == grid[int(np.argmin(scores))]


def test_select_lambda_ties_go_large(rng):
    s = random_sample(rng)
    s = GroupSample(t=s.t, y=np.full(s.M, -1.0), subject=s.subject, subject_ids=s.subject_ids)
    assert select_lambda(s, grid=[1e-3, 1e-1]) == 1e-1


def test_select_lambda_validation(fixture4):
    with pytest.raises(ValidationError):
        select_lambda(fixture4, grid=[])
    with pytest.raises(ValidationError):
        select_lambda(fixture4, grid=[1e-3, -1.0])
    assert lambda_grid().size == 40
    assert lambda_grid()[0] == pytest.approx(1e-6) and lambda_grid()[-1] == pytest.approx(1e2)


# --- the two engines agree ------------------------------------------------------

@given(st.integers(0, 10**6), st.floats(-7, 3))
def test_cubic_engine_matches_dense(seed, log_lam):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, int(rng.integers(3, 15)), ties=seed % 4 == 0)
    if np.unique(s.t).size < 2:
        return
    lam = 10.0**log_lam
    grid = np.linspace(0, 1, 23)
    w = s.observation_weights(rng.uniform(0.3, 2.5, s.n))
    dense, cubic = DenseSmoother(s), CubicSmoother(s)
    scale = 1.0 + np.abs(s.y).max()
    np.testing.assert_allclose(cubic.curve(lam, grid), dense.curve(lam, grid), atol=1e-7 * scale)
    np.testing.assert_allclose(cubic.curve(lam, grid, w), dense.curve(lam, grid, w), atol=1e-7 * scale)
    assert cubic.residual_trace(lam) == pytest.approx(dense.residual_trace(lam), rel=1e-7, abs=1e-9)


def test_cubic_batches_match_single_solves(rng):
    s = random_sample(rng, 12)
    eng = CubicSmoother(s)
    grid = np.linspace(0, 1, 11)
    W = np.array([s.observation_weights(rng.uniform(0.3, 2.5, s.n)) for _ in range(4)])
    batch = eng.curve_batch(0.01, grid, W)
    for row, w in zip(batch, W):
        np.testing.assert_allclose(row, eng.curve(0.01, grid, w), atol=1e-14)


def test_make_smoother_dispatch(fixture4):
    assert isinstance(make_smoother(fixture4), CubicSmoother)
    assert isinstance(make_smoother(fixture4, m=3), DenseSmoother)
    assert isinstance(make_smoother(fixture4, method="dense"), DenseSmoother)
    with pytest.raises(ValidationError):
        make_smoother(fixture4, m=3, method="cubic")
