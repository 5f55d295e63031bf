import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridcast.vnngp import (KernelParams, ResidualField, VnngpModel, VnngpNumericalError,
                              VnngpStateError, _elbo_terms, _field_stats, _geometry, _theta,
                              build_neighbor_graph, correlation, elbo_minibatch, fit_vnngp, haversine,
                              kernel_matrix, matern32, matern52, predict_residual, predict_residuals,
                              shrinkage_factor, st_kernel)


# -- independent dense oracle ----------------------------------------------------

def _m32(d, ls):
    r = math.sqrt(3.0) * d / ls
    return (1 + r) * np.exp(-r)


def _m52(d, ls):
    r = math.sqrt(5.0) * d / ls
    return (1 + r + r ** 2 / 3) * np.exp(-r)


def _dense_cov(pts, kern):
    """Full covariance for euclidean-metric (x, y, t) points, built entry by entry."""
    n = len(pts)
    K = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            ds = math.hypot(pts[a][0] - pts[b][0], pts[a][1] - pts[b][1])
            dt = abs(pts[a][2] - pts[b][2])
            K[a, b] = kern.signal_variance * _m32(ds, kern.spatial_lengthscale) * _m52(dt, kern.temporal_lengthscale)
        K[a, a] += kern.nugget
    return K


def _dense_elbo(K, mean, var, values, noise):
    """E_q log N(r | u, noise) - KL(N(mean, diag var) || N(0, K))."""
    n = len(mean)
    Kinv = np.linalg.inv(K)
    kl = 0.5 * (np.trace(Kinv @ np.diag(var)) + mean @ Kinv @ mean - n
                + np.linalg.slogdet(K)[1] - np.sum(np.log(var)))
    data = np.sum(-0.5 * np.log(2 * np.pi * noise) - ((values - mean) ** 2 + var) / (2 * noise))
    return data - kl


def _small_problem(n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 3, n)
    y = rng.uniform(0, 3, n)
    t = np.arange(n, dtype=float)  # distinct times keep every point its own inducing value
    vals = rng.normal(0.5, 1.0, n)
    field = ResidualField(x, y, t, vals)
    kern = KernelParams(1.3, 1.5, 2.5, 1e-3)
    graph = build_neighbor_graph(field, n - 1, kern, "euclidean")
    model = VnngpModel(kern, 0.2, graph, n - 1, "euclidean",
                       rng.normal(0, 0.7, n), rng.uniform(0.1, 0.9, n))
    return field, model


# -- kernels ---------------------------------------------------------------------------

def test_matern_values():
    assert matern32(0.0, 2.0) == 1.0
    assert matern52(0.0, 2.0) == 1.0
    assert float(matern32(3.0, 3.0)) == pytest.approx(0.4834, abs=1e-4)
    assert float(matern52(3.0, 3.0)) == pytest.approx(0.5240, abs=1e-4)
    assert float(matern32(1e6, 1.0)) == 0.0
    with pytest.raises(ValueError):
        matern32(-1.0, 1.0)
    with pytest.raises(ValueError):
        matern52(1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.1, 20))
def test_matern_monotone(d1, d2, ls):
    lo, hi = sorted((d1, d2))
    assert matern52(lo, ls) >= matern52(hi, ls)
    assert matern32(lo, ls) >= matern32(hi, ls)
    assert 0 <= matern32(hi, ls) <= 1


def test_st_kernel_examples():
    k = KernelParams(2.0, 100.0, 4.0, 0.01)
    p = (33.0, 44.0, 5.0)
    assert st_kernel(p, p, k) == pytest.approx(2.01)
    assert st_kernel(p, (33.0, 44.0, 9.0), k) == pytest.approx(2.0 * 0.5240, abs=1e-3)
    one = KernelParams(1.0, 3.0, 2.0, 1e-6)
    q1, q2 = (0.0, 0.0, 0.0), (1.0, 2.0, 3.0)
    expect = _m32(math.hypot(1, 2), 3.0) * _m52(3.0, 2.0)
    assert st_kernel(q1, q2, one, "euclidean") == pytest.approx(expect, rel=1e-12)


def test_haversine_against_spherical_cosines():
    lat1, lon1, lat2, lon2 = 33.3152, 44.3661, 33.5138, 36.2765
    p1, p2 = math.radians(lat1), math.radians(lat2)
    central = math.acos(math.sin(p1) * math.sin(p2)
                        + math.cos(p1) * math.cos(p2) * math.cos(math.radians(lon2 - lon1)))
    assert float(haversine(lat1, lon1, lat2, lon2)) == pytest.approx(6371.0088 * central, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.tuples(st.floats(-60, 60), st.floats(-170, 170), st.floats(0, 100)),
       st.tuples(st.floats(-60, 60), st.floats(-170, 170), st.floats(0, 100)))
def test_kernel_symmetry(p1, p2):
    k = KernelParams()
    assert st_kernel(p1, p2, k) == pytest.approx(st_kernel(p2, p1, k), rel=1e-12, abs=1e-15)


def test_kernel_matrix_matches_pointwise():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.5, 2.0], [0.0, 0.0, 0.0], [2.0, 1.0, 1.0]])
    k = KernelParams(1.5, 2.0, 3.0, 0.05)
    K = kernel_matrix(pts, pts, k, "euclidean")
    for a, b in itertools.product(range(4), repeat=2):
        assert K[a, b] == pytest.approx(st_kernel(pts[a], pts[b], k, "euclidean"))


def test_shrinkage_factor():
    assert shrinkage_factor(1, 1) == 0.5
    assert shrinkage_factor(4, 1) == 0.8
    assert shrinkage_factor(1, 1e-12) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        shrinkage_factor(0, 1)


# -- graph -----------------------------------------------------------------------------

def test_saturated_graph_uses_all_predecessors():
    field, model = _small_problem(7)
    assert model.graph.sets() == [list(range(j)) for j in range(7)]


def test_single_point_graph():
    g = build_neighbor_graph(ResidualField([0.0], [0.0], [0.0], [1.0]), 3)
    assert g.sets() == [[]]


def test_collinear_temporal_neighbours():
    field = ResidualField(np.zeros(5), np.zeros(5), np.arange(5.0), np.zeros(5))
    k = KernelParams(temporal_lengthscale=2.0)
    g = build_neighbor_graph(field, 2, k)
    for j in range(2, 5):
        corr = correlation(g.coords[j], g.coords[:j], k, "haversine")[0]
        best = sorted(np.argsort(-corr, kind="stable")[:2].tolist())
        assert g.sets()[j] == best == [j - 2, j - 1]


def test_ordering_is_time_then_location():
    field = ResidualField([1.0, 0.0, 1.0], [1.0, 0.0, 1.0], [5.0, 5.0, 2.0], [0.0, 0.0, 0.0],
                          location_id=[7, 3, 7])
    g = build_neighbor_graph(field, 2)
    assert g.coords[:, 2].tolist() == [2.0, 5.0, 5.0]
    assert g.location_id.tolist() == [7, 3, 7]


# -- ELBO --------------------------------------------------------------------------------

@pytest.mark.parametrize("n", [3, 6, 10])
def test_full_batch_elbo_matches_dense_oracle(n):
    field, model = _small_problem(n, seed=n)
    pts = model.graph.coords
    K = _dense_cov(pts, model.kernel)
    oracle = _dense_elbo(K, model.mean, model.var, field.values[model.graph.obs_index.argsort()],
                         model.noise_variance)
    assert elbo_minibatch(model, field) == pytest.approx(oracle, abs=1e-8)


def test_explicit_full_batch_equals_default():
    field, model = _small_problem(6)
    assert elbo_minibatch(model, field, batch=np.arange(6)) == elbo_minibatch(model, field)


def test_minibatch_is_unbiased_exhaustively():
    field, model = _small_problem(10, seed=3)
    full = elbo_minibatch(model, field)
    subsets = list(itertools.combinations(range(10), 8))
    avg = np.mean([elbo_minibatch(model, field, batch=np.array(s)) for s in subsets])
    assert avg == pytest.approx(full, rel=1e-12)


@pytest.fixture(scope="module")
def fitted_small():
    field, model = _small_problem(10, seed=4)
    fitted = fit_vnngp(field, m=9, init=model.kernel, steps=200, noise_variance=0.2,
                       learn_kernel=False, learn_noise=False, metric="euclidean")
    return field, fitted


def test_minibatch_mean_over_seeded_draws(fitted_small):
    # evaluated at a fitted posterior; the exhaustive test above covers arbitrary q
    field, model = fitted_small
    full = elbo_minibatch(model, field)
    draws = [elbo_minibatch(model, field, batch=8, seed=s) for s in range(1000)]
    assert abs(np.mean(draws) - full) <= 0.01 * abs(full)


def test_kl_vanishes_at_prior_marginals():
    # points far apart are independent a priori, so q = prior marginals is the prior
    field = ResidualField(np.arange(4) * 1000.0, np.zeros(4), np.arange(4) * 1000.0, np.zeros(4))
    kern = KernelParams(1.2, 1.0, 1.0, 1e-3)
    g = build_neighbor_graph(field, 3, kern, "euclidean")
    stats = _field_stats(g, field.values, g.obs_index)
    var = np.full(4, 1.2 + 1e-3)
    _, kl = _elbo_terms(_theta(kern, 0.1), np.zeros(4), np.log(var), _geometry(g, "euclidean"),
                        stats, np.arange(4))
    assert np.allclose(kl.value, 0.0, atol=1e-12)


def test_unfitted_model_rejected():
    field, model = _small_problem(4)
    bare = VnngpModel(model.kernel, 0.1, model.graph, 3, "euclidean")
    with pytest.raises(VnngpStateError):
        elbo_minibatch(bare, field)
    with pytest.raises(VnngpStateError):
        predict_residual(bare, (0.0, 0.0, 0.0))


def test_duplicate_points_need_nugget():
    # two series at one place and time share a latent value instead of a singular block
    field = ResidualField([0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 2.0], [0.2, 0.4, 0.1],
                          location_id=[0, 0, 0])
    g = build_neighbor_graph(field, 2)
    assert g.n == 2 and g.obs_index.tolist() == [0, 0, 1]


# -- fitting and prediction ------------------------------------------------------------

def test_zero_field_gives_zero_means():
    rng = np.random.default_rng(0)
    field = ResidualField(rng.uniform(0, 5, 20), rng.uniform(0, 5, 20), np.arange(20.0), np.zeros(20))
    model = fit_vnngp(field, m=5, init=KernelParams(1.0, 2.0, 3.0, 1e-3), steps=60, metric="euclidean")
    assert np.max(np.abs(model.mean)) < 1e-2


def test_fit_is_deterministic_and_improves():
    field, _ = _small_problem(10, seed=5)
    kw = dict(m=4, init=KernelParams(1.0, 1.5, 2.5, 1e-3), steps=80, metric="euclidean",
              batch_size=6, eval_every=20, seed=9)
    a, b = fit_vnngp(field, **kw), fit_vnngp(field, **kw)
    assert a.elbo_trace == b.elbo_trace
    assert len(a.elbo_trace) == 5
    assert a.elbo_trace[-1] > a.elbo_trace[0]


@pytest.fixture(scope="module")
def recovery_problem():
    # 1-d Matern-3/2 draw: all points share one time, so only the spatial factor acts
    rng = np.random.default_rng(2024)
    kern = KernelParams(1.0, 1.0, 1.0, 1e-6)
    x = np.sort(rng.uniform(0, 10, 60))
    pts = np.stack([x, np.zeros(60), np.zeros(60)], axis=1)
    K = _dense_cov(pts, kern)
    f = np.linalg.cholesky(K + 1e-10 * np.eye(60)) @ rng.normal(size=60)
    noise = 0.01
    y = f + rng.normal(0, math.sqrt(noise), 60)
    held = np.zeros(60, dtype=bool)
    held[rng.choice(60, 10, replace=False)] = True
    train = ~held
    field = ResidualField(x[train], np.zeros(50), np.zeros(50), y[train])
    model = fit_vnngp(field, m=10, init=kern, steps=300, lr=0.05, noise_variance=noise,
                      learn_kernel=False, learn_noise=False, metric="euclidean")
    return kern, pts, f, y, held, model, noise


def test_recovery_beats_prior_sd(recovery_problem):
    kern, pts, f, y, held, model, noise = recovery_problem
    mean, var = predict_residuals(model, pts[held])
    rmse = np.sqrt(np.mean((mean - f[held]) ** 2))
    assert rmse < math.sqrt(kern.signal_variance)
    # exact GP regression on the same 50 points for reference
    K = _dense_cov(pts, kern)
    tr = ~held
    exact = K[np.ix_(held, tr)] @ np.linalg.solve(K[np.ix_(tr, tr)] + noise * np.eye(50), y[tr])
    assert np.sqrt(np.mean((mean - exact) ** 2)) < 0.2


def test_posterior_variance_bounded_by_prior(recovery_problem):
    kern, pts, f, y, held, model, noise = recovery_problem
    bound = kern.signal_variance + kern.nugget
    assert np.all(model.var <= bound)
    _, var = predict_residuals(model, model.graph.coords)
    assert np.all(var <= bound + 1e-12)


def test_far_query_reverts_to_prior(recovery_problem):
    kern, _, _, _, _, model, _ = recovery_problem
    mean, var = predict_residual(model, (1e4, 0.0, 0.0))
    assert abs(mean) < 1e-8
    assert var == pytest.approx(kern.signal_variance + kern.nugget, rel=1e-8)


def test_query_at_inducing_point_returns_its_mean():
    field, model = _small_problem(5, seed=8)
    for j in range(5):
        mean, _ = predict_residual(model, model.graph.coords[j])
        assert mean == pytest.approx(model.mean[j], abs=1e-2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_predictive_variance_non_negative(seed):
    field, model = _small_problem(8, seed=1)
    q = np.random.default_rng(seed).uniform([-2, -2, -3], [5, 5, 12], size=(50, 3))
    _, var = predict_residuals(model, q)
    assert np.all(var >= 0)


def test_model_array_round_trip():
    field, model = _small_problem(6)
    arrays, meta = model.to_arrays("v")
    back = VnngpModel.from_arrays({k[2:]: v for k, v in arrays.items()}, meta)
    q = np.array([[1.0, 1.0, 2.5]])
    assert np.array_equal(predict_residuals(model, q)[0], predict_residuals(back, q)[0])


def test_jitter_gives_up_on_indefinite_blocks():
    from hybridcast.vnngp import _solve_spd
    with pytest.raises(VnngpNumericalError):
        _solve_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))
