import numpy as np
import pytest

from conftest import benchmark_put, gaussian_walk
from oracles import hat_continuation_quadrature
from wsmesh.baselines import black_scholes_put
from wsmesh.errors import ConfigError, ContaminationError
from wsmesh.mesh import MeshValue, Truncation, backward_induction
from wsmesh.models import PathSet, simulate_paths
from wsmesh.policy import (
    ContinuationEstimator,
    continuation_direct,
    continuation_knn,
    evaluate_lower_bound,
    evaluate_stopping_rule,
)
from wsmesh.rewards import RewardFunction, hat_reward


def small_benchmark(L=5, N=300, seed=30):
    model, reward = benchmark_put(L)
    paths = simulate_paths(model, [100.0], L=L, N=N, seed=seed)
    mesh = backward_induction(paths, reward, model)
    return model, reward, paths, mesh


def test_continuation_zero_for_null_values():
    model, _, paths, mesh = small_benchmark()
    zero = RewardFunction(fn=lambda l, x: np.zeros(x.shape[0]), cap=0.0)
    mesh0 = backward_induction(paths, zero, model)
    est = ContinuationEstimator(paths, mesh0, model, "direct")
    got = continuation_direct(est, 2, paths.states(2)[:5])
    np.testing.assert_allclose(got, 0.0, atol=1e-300)


def test_direct_matches_training_continuation():
    model, _, paths, mesh = small_benchmark()
    est = ContinuationEstimator(paths, mesh, model, "direct")
    for l in (0, 2, 4):
        idx = [0, 3, 250]
        got = continuation_direct(est, l, paths.states(l)[idx])
        np.testing.assert_allclose(got, mesh.continuation[idx, l], rtol=5e-6)


def test_knn_all_neighbors_is_constant():
    model, _, paths, mesh = small_benchmark()
    est = ContinuationEstimator(paths, mesh, model, "knn", k=paths.n_paths)
    a = continuation_knn(est, 2, np.array([[80.0]]))
    b = continuation_knn(est, 2, np.array([[120.0]]))
    assert a[0] == pytest.approx(b[0], rel=1e-14)
    assert a[0] == pytest.approx(float(mesh.continuation[:, 2].mean()), rel=1e-12)


def test_knn_single_neighbor_matches_direct_at_training_point():
    model, _, paths, mesh = small_benchmark()
    est1 = ContinuationEstimator(paths, mesh, model, "knn", k=1)
    estd = ContinuationEstimator(paths, mesh, model, "direct")
    x = paths.states(3)[[7]]
    knn_val = continuation_knn(est1, 3, x)
    dir_val = continuation_direct(estd, 3, x)
    assert knn_val[0] == pytest.approx(dir_val[0], rel=1e-5)


def test_variant_guards():
    model, _, paths, mesh = small_benchmark()
    est = ContinuationEstimator(paths, mesh, model, "direct")
    with pytest.raises(ConfigError):
        continuation_knn(est, 0, np.array([[100.0]]))
    with pytest.raises(ConfigError):
        ContinuationEstimator(paths, mesh, model, "knn", k=paths.n_paths + 1)
    with pytest.raises(ConfigError):
        ContinuationEstimator(paths, mesh, model, "knn")


def test_terminal_only_reward_stops_at_maturity():
    model, _, paths, mesh_put = small_benchmark()
    terminal = RewardFunction(
        fn=lambda l, x: np.where(l == paths.n_steps, np.maximum(100.0 - x[:, 0], 0.0), 0.0),
        cap=100.0,
    )
    mesh = backward_induction(paths, terminal, model)
    est = ContinuationEstimator(paths, mesh, model, "direct")
    lb = evaluate_lower_bound(est, terminal, model, 500, seed=31)
    assert lb.stop_histogram[-1] == 500
    assert lb.stop_histogram.sum() == lb.n_test


def test_immediate_stop_when_values_vanish():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [0.0], L=3, N=100, seed=32)
    reward = hat_reward(3.0)
    zero = RewardFunction(fn=lambda l, x: np.zeros(x.shape[0]), cap=0.0)
    mesh0 = backward_induction(paths, zero, chain)
    est = ContinuationEstimator(paths, mesh0, chain, "direct")
    lb = evaluate_lower_bound(est, reward, chain, 200, seed=33)
    assert lb.mean == pytest.approx(3.0)  # g_0(x0) with zero continuation
    assert lb.std_error == 0.0
    assert lb.stop_histogram[0] == 200


def test_forced_european_matches_black_scholes():
    L = 10
    model, reward = benchmark_put(L)
    lb = evaluate_stopping_rule(
        lambda l, x: np.full(x.shape[0], np.inf),
        reward, model, np.array([100.0]), L, 20_000, seed=34,
    )
    bs = black_scholes_put(100.0, 100.0, 0.08, 0.2, 0.0, 3.0)
    assert abs(lb.mean - bs) < 3 * lb.std_error


def test_seed_contamination_rejected():
    model, reward, paths, mesh = small_benchmark(seed=35)
    est = ContinuationEstimator(paths, mesh, model, "direct")
    with pytest.raises(ContaminationError):
        evaluate_lower_bound(est, reward, model, 100, seed=35)


def test_knn_invariant_under_training_permutation():
    model, _, paths, mesh = small_benchmark(L=4, N=120, seed=36)
    rng = np.random.default_rng(0)
    perm = rng.permutation(paths.n_paths)
    pv = paths.values[perm].copy()
    pv.flags.writeable = False
    ppaths = PathSet(values=pv, x0=paths.x0, step_size=paths.step_size,
                     seed_record=paths.seed_record)
    pmesh = MeshValue(
        values=mesh.values[perm],
        u0=mesh.u0,
        truncation=mesh.truncation,
        cap=mesh.cap,
        continuation=mesh.continuation[perm],
        log_denominators=mesh.log_denominators[:, perm],
    )
    a = ContinuationEstimator(paths, mesh, model, "knn", k=7)
    b = ContinuationEstimator(ppaths, pmesh, model, "knn", k=7)
    probes = np.array([[92.0], [100.5], [111.0]])
    for l in range(4):
        np.testing.assert_allclose(
            a.continuation(l, probes), b.continuation(l, probes), rtol=1e-12
        )


def test_continuation_is_pure():
    model, _, paths, mesh = small_benchmark()
    est = ContinuationEstimator(paths, mesh, model, "knn", k=20)
    x = np.array([[97.0], [104.0]])
    first = est.continuation(2, x)
    second = est.continuation(2, x)
    np.testing.assert_array_equal(first, second)


def test_direct_continuation_against_quadrature(hat_instance):
    # mesh continuation at probe points vs the dense-grid oracle
    chain, reward = hat_instance["chain"], hat_instance["reward"]
    paths = simulate_paths(chain, hat_instance["x0"], hat_instance["L"], 50_000, seed=37)
    mesh = backward_induction(paths, reward, chain, hat_instance["truncation"])
    est = ContinuationEstimator(paths, mesh, chain, "direct")
    probes = np.linspace(0.0, 3.5, 10)
    got = continuation_direct(est, 1, probes[:, None])
    want = hat_continuation_quadrature(probes, l=1)
    np.testing.assert_allclose(got, want, rtol=0.02)


@pytest.mark.slow
def test_knn_and_direct_agree_on_benchmark():
    # Benchmark cross-variant agreement at k=500, N_train=2000. This is
    # implemented exactly as specified and is expected to FAIL: averaging
    # the weight rows of 500 of 2000 neighbors smooths the continuation
    # near the exercise boundary (a Jensen bias for the convex put
    # continuation), which costs the knn policy ~0.17-0.20 against the
    # direct policy, i.e. ~2.3-2.8 combined SEs. See the decisions ledger.
    L = 50
    model, reward = benchmark_put(L)
    paths = simulate_paths(model, [100.0], L=L, N=2000, seed=20240801)
    mesh = backward_induction(paths, reward, model)
    knn = evaluate_lower_bound(
        ContinuationEstimator(paths, mesh, model, "knn", k=500),
        reward, model, 20_000, seed=907,
    )
    direct = evaluate_lower_bound(
        ContinuationEstimator(paths, mesh, model, "direct"),
        reward, model, 20_000, seed=908,
    )
    combined = float(np.hypot(knn.std_error, direct.std_error))
    assert abs(knn.mean - direct.mean) <= 2.0 * combined, (
        f"knn {knn.mean:.4f} vs direct {direct.mean:.4f}: gap "
        f"{abs(knn.mean - direct.mean):.4f} > 2 x combined SE {2 * combined:.4f} "
        "(known systematic smoothing of the k=500 row average; see ledger)"
    )
