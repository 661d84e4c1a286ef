import math

import numpy as np
import pytest

from conftest import gaussian_walk, sine_vol_chain, benchmark_put
from wsmesh import _kernels
from wsmesh.errors import (
    CapabilityError,
    DegenerateDenominatorError,
    ParameterSelectionError,
    RewardError,
)
from wsmesh.mesh import (
    MeshValue,
    Truncation,
    backward_induction,
    check_mesh_invariants,
    ck_denominators,
    estimate_fr,
    select_parameters,
    weight_row,
)
from wsmesh.models import GbmModel, PathSet, simulate_paths
from wsmesh.rewards import RewardFunction, hat_reward, put_reward
from wsmesh.rng import SeedRecord


def fabricate_paths(values, x0, h=1.0):
    values = np.asarray(values, dtype=float)
    values.flags.writeable = False
    return PathSet(values=values, x0=np.atleast_1d(np.asarray(x0, dtype=float)),
                   step_size=h, seed_record=SeedRecord(0))


def test_ck_denominators_single_path():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [0.0], L=2, N=1, seed=4)
    logd = ck_denominators(paths, chain, 0)
    expected = chain.log_density(paths.states(1), paths.states(0))
    assert logd[0] == pytest.approx(float(expected[0]), rel=1e-7)


def test_ck_denominators_identical_paths():
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.5)
    one = simulate_paths(model, [1.0], L=2, N=1, seed=5)
    n = 7
    values = np.tile(one.values, (n, 1, 1))
    paths = fabricate_paths(values, [1.0], h=0.5)
    logd = ck_denominators(paths, model, 1)
    base = model.log_density(paths.states(2), paths.states(1))
    np.testing.assert_allclose(logd, np.log(n) + base, rtol=1e-7)


def test_ck_denominators_track_exact_multistep():
    # (1/N) D_j is a Monte Carlo estimate of the 2-step density at Z_2^(j)
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.5)
    paths = simulate_paths(model, [1.0], L=2, N=10_000, seed=6)
    logd = ck_denominators(paths, model, 1)
    exact = model.log_multistep_density(
        2, paths.states(2), np.broadcast_to(paths.x0, paths.states(2).shape)
    )
    rel = np.exp(logd - np.log(paths.n_paths) - exact) - 1.0
    rms = float(np.sqrt(np.mean(rel**2)))
    assert rms <= 5.0 / np.sqrt(paths.n_paths)


def test_weight_row_single_path():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [0.0], L=1, N=1, seed=7)
    wr = weight_row(paths, chain, 0, 0)
    assert wr.weights.shape == (1,)
    assert wr.weights[0] == pytest.approx(1.0, abs=1e-15)


def test_weight_row_coincident_paths_uniform():
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.5)
    one = simulate_paths(model, [1.0], L=1, N=1, seed=8)
    n = 5
    paths = fabricate_paths(np.tile(one.values, (n, 1, 1)), [1.0], h=0.5)
    wr = weight_row(paths, model, 0, 2)
    np.testing.assert_allclose(wr.weights, np.full(n, 1.0 / n), atol=1e-15)


def test_weight_row_hand_computed_three_points():
    # d=1 Gaussian walk, hand-picked grid points, weights by plain math.exp
    x = [-0.5, 0.2, 1.0]
    y = [0.3, -0.8, 0.6]
    values = np.zeros((3, 3, 1))
    values[:, 1, 0] = x
    values[:, 2, 0] = y
    paths = fabricate_paths(values, [0.0], h=1.0)
    chain = gaussian_walk(1.0)
    i = 1
    dens = [[math.exp(-((yy - xx) ** 2) / 2.0) / math.sqrt(2 * math.pi) for xx in x] for yy in y]
    denom = [sum(row) for row in dens]
    raw = [dens[j][i] / denom[j] for j in range(3)]
    hand = np.array(raw) / sum(raw)
    wr = weight_row(paths, chain, 1, i)
    np.testing.assert_allclose(wr.weights, hand, atol=1e-12)
    assert wr.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_backward_null_reward():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [0.0], L=3, N=50, seed=9)
    zero = RewardFunction(fn=lambda l, x: np.zeros(x.shape[0]), cap=0.0)
    mesh = backward_induction(paths, zero, chain)
    assert mesh.u0 == 0.0
    assert np.all(mesh.values == 0.0)


def test_backward_terminal_only():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [1.0], L=0, N=10, seed=10)
    mesh = backward_induction(paths, hat_reward(3.0), chain, Truncation(5.0))
    assert mesh.u0 == pytest.approx(2.0)


def test_backward_rejects_negative_reward():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [0.0], L=2, N=20, seed=11)
    bad = RewardFunction(fn=lambda l, x: x[:, 0])
    with pytest.raises(RewardError):
        backward_induction(paths, bad, chain)


def test_mesh_invariants_with_truncation():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [0.0], L=3, N=400, seed=12)
    reward = hat_reward(3.0)
    trunc = Truncation(1.5)  # genuinely cuts paths
    mesh = backward_induction(paths, reward, chain, trunc)
    in_ball = np.abs(paths.values[:, :, 0]) <= 1.5
    assert np.any(~in_ball), "test instance should actually truncate"
    assert np.all(mesh.values[~in_ball] == 0.0)
    for l in range(4):
        g = reward(l, paths.states(l))
        sel = in_ball[:, l]
        assert np.all(mesh.values[sel, l] >= g[sel] - 1e-12)
    assert np.all(mesh.values <= 3.0 + 1e-9)
    assert check_mesh_invariants(paths, reward, chain, mesh) == []


def test_backward_recompute_is_idempotent():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [2.0], L=3, N=300, seed=13)
    reward = hat_reward(3.0)
    trunc = Truncation(10.0)
    mesh = backward_induction(paths, reward, chain, trunc)
    again = backward_induction(paths, reward, chain, trunc)
    assert np.array_equal(mesh.values, again.values)
    # rebuilding one step from the stored next column via public weight rows
    l = 1
    g = reward(l, paths.states(l))
    rebuilt = np.empty(paths.n_paths)
    for i in range(paths.n_paths):
        wr = weight_row(paths, chain, l, i, mesh.log_denominators[l])
        rebuilt[i] = max(g[i], float(wr.weights @ mesh.values[:, l + 1]))
    np.testing.assert_allclose(rebuilt, mesh.values[:, l], rtol=2e-5, atol=1e-10)


def test_fast_and_generic_kernels_agree():
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.3)
    paths = simulate_paths(model, [1.0], L=2, N=250, seed=14)
    ys, xs = paths.states(1), paths.states(0 + 1 - 1)
    u = np.maximum(1.1 - paths.states(2)[:, 0], 0.0)
    f = model.gaussian_factors(paths.states(2), ys)
    logd_fast, cont_fast = _kernels.mesh_step_factored(f, u)
    logd_gen = _kernels.ck_log_denominators_generic(model, paths.states(2), ys)
    cont_gen = _kernels.continuation_targets_generic(model, paths.states(2), u, logd_gen, ys)
    np.testing.assert_allclose(logd_fast, logd_gen, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(cont_fast, cont_gen, rtol=1e-5, atol=1e-8)


def test_generic_model_backward_runs():
    chain = sine_vol_chain(0.1)
    paths = simulate_paths(chain, [0.5], L=3, N=120, seed=15)
    reward = hat_reward(2.0)
    mesh = backward_induction(paths, reward, chain)
    assert np.isfinite(mesh.u0)
    assert check_mesh_invariants(paths, reward, chain, mesh, n_weight_rows=8) == []


def test_degenerate_denominator_error():
    # a kernel with compact support can zero out a whole denominator row
    class BoxKernel(gaussian_walk().__class__.__mro__[1]):  # ChainModel
        dimension = 1
        step_size = 1.0
        noise_dim = 1

        def log_density_matrix(self, ys, xs):
            d = np.abs(ys[:, 0][:, None] - xs[:, 0][None, :])
            return np.where(d <= 1.0, 0.0, -np.inf)

        def gaussian_factors(self, ys, xs):
            return None

    values = np.zeros((3, 2, 1))
    values[:, 0, 0] = [0.0, 0.1, -0.1]
    values[:, 1, 0] = [0.5, 9.0, -0.5]  # middle point unreachable from every parent
    paths = fabricate_paths(values, [0.0], h=1.0)
    with pytest.raises(DegenerateDenominatorError):
        ck_denominators(paths, BoxKernel(), 0)


def test_convergence_toward_quadrature_oracle(hat_instance):
    chain, reward = hat_instance["chain"], hat_instance["reward"]
    errs = {}
    for n in (500, 4000):
        e = []
        for seed in range(3):
            paths = simulate_paths(chain, hat_instance["x0"], hat_instance["L"], n, 100 + seed)
            mesh = backward_induction(paths, reward, chain, hat_instance["truncation"])
            e.append(abs(mesh.u0 - hat_instance["oracle"]))
        errs[n] = np.mean(e)
    assert errs[4000] < errs[500]


def test_select_parameters_formula():
    # independent re-evaluation of the closed forms, plain python arithmetic
    eps, d, L = 0.1, 1, 10
    alpha = kappa = c_g = c_z = 1.0
    sel = select_parameters(eps, d, L, alpha=alpha, kappa=kappa, c_g=c_g, c_z=c_z, x0=[0.0])
    a_term = 1.0 + c_z + 0.0 + c_z * math.sqrt(d * alpha * L)
    log_arg = L * c_g * kappa * a_term * 2 ** (1 + d / 4) / eps
    r_ref = math.sqrt(8 * alpha * L * math.log(log_arg))
    n_ref = (
        alpha * c_g**2 * kappa * (8 * math.e / d) ** (d / 2)
        * L ** (d / 2 + 3) * eps**-2 * math.log(log_arg) ** (d / 2 + 1)
    )
    assert sel.radius == pytest.approx(r_ref, rel=1e-12)
    assert sel.n_paths == math.ceil(n_ref)


def test_select_parameters_monotone_in_epsilon():
    kw = dict(alpha=1.0, kappa=1.0, c_g=1.0, c_z=1.0, x0=[0.0])
    a = select_parameters(0.1, 2, 10, **kw)
    b = select_parameters(0.05, 2, 10, **kw)
    assert b.radius > a.radius
    assert b.n_paths > a.n_paths


def test_select_parameters_radius_grows_sqrt2_with_l():
    kw = dict(alpha=1.0, kappa=1.0, c_g=1.0, c_z=1.0, x0=[0.0])
    a = select_parameters(0.1, 1, 10, **kw)
    b = select_parameters(0.1, 1, 20, **kw)
    assert b.radius >= math.sqrt(2.0) * a.radius


def test_select_parameters_rejects_large_epsilon():
    with pytest.raises(ParameterSelectionError):
        select_parameters(0.5, 1, 1, alpha=1.0, kappa=0.01, c_g=0.01, c_z=0.01, x0=[0.0])


def test_estimate_fr_vanishing_ball():
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.5)
    paths = simulate_paths(model, [1.0], L=2, N=2000, seed=16)
    est = estimate_fr(paths, model, Truncation(1e-9), 1)
    assert est.fr == 0.0


def test_estimate_fr_monotone_in_radius():
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.5)
    paths = simulate_paths(model, [1.0], L=2, N=2000, seed=17)
    small = estimate_fr(paths, model, Truncation(0.1), 1)
    big = estimate_fr(paths, model, Truncation(0.2), 1)
    assert big.fr2_mean >= small.fr2_mean  # same pairs, larger indicator set


def test_estimate_fr_against_quadrature():
    # 2D tensor quadrature of the squared-ratio integral, lognormal kernels
    r, sig, h, R = 0.08, 0.2, 0.5, 0.15
    model = GbmModel(rate=r, sigma=sig, step_size=h)
    paths = simulate_paths(model, [1.0], L=2, N=200_000, seed=18)
    est = estimate_fr(paths, model, Truncation(R), 1)

    xs = np.geomspace(np.exp(-6 * sig * np.sqrt(h)), np.exp(6 * sig * np.sqrt(h)), 601)
    ys = np.linspace(1.0 - R, 1.0 + R, 601)
    lp_y_given_x = model.log_density_matrix(ys[:, None], xs[:, None])  # (y, x)
    lp_x = model.log_density(xs[:, None], np.ones((xs.size, 1)))
    lp2_y = model.log_multistep_density(2, ys[:, None], np.ones((ys.size, 1)))
    integrand = np.exp(2 * lp_y_given_x - lp2_y[:, None] + lp_x[None, :])
    fr2 = np.trapezoid(np.trapezoid(integrand, xs, axis=1), ys)
    assert abs(est.fr2_mean - fr2) < 3 * est.fr2_std_error


def test_estimate_fr_capability():
    chain = gaussian_walk()
    paths = simulate_paths(chain, [0.0], L=2, N=500, seed=19)
    with pytest.raises(CapabilityError):
        estimate_fr(paths, chain, Truncation(2.0), 0)
    est = estimate_fr(paths, chain, Truncation(2.0), 0, use_ck_surrogate=True)
    assert np.isfinite(est.fr)


def test_mesh_artifact_roundtrip(tmp_path):
    chain = gaussian_walk()
    paths = simulate_paths(chain, [2.0], L=3, N=64, seed=20)
    mesh = backward_induction(paths, hat_reward(3.0), chain, Truncation(10.0))
    f = tmp_path / "mesh.wsm"
    mesh.save(f)
    back = MeshValue.load(f)
    assert np.array_equal(back.values, mesh.values)
    assert np.array_equal(back.continuation, mesh.continuation)
    assert np.array_equal(back.log_denominators, mesh.log_denominators)
    assert back.u0 == mesh.u0
    assert back.truncation == mesh.truncation
    assert back.cap == mesh.cap


def test_weight_rows_sum_to_one_on_benchmark():
    model, reward = benchmark_put(10)
    paths = simulate_paths(model, [100.0], L=10, N=400, seed=21)
    mesh = backward_induction(paths, reward, model)
    for l in (0, 4, 9):
        for i in (0, 17, 399):
            wr = weight_row(paths, model, l, i, mesh.log_denominators[l])
            assert abs(wr.weights.sum() - 1.0) <= 1e-12
            assert wr.weights.min() >= 0.0
