import numpy as np
import pytest
from scipy.stats import kstest, norm

from conftest import gaussian_walk, sine_vol_chain
from wsmesh.errors import CapabilityError, DensityError, SimulationError
from wsmesh.models import (
    EulerChain,
    GbmModel,
    PathSet,
    SdeModel,
    check_assumptions,
    make_diffusion,
    make_drift,
    simulate_paths,
)


def test_single_path_no_steps():
    paths = simulate_paths(gaussian_walk(), [1.5], L=0, N=1, seed=3)
    assert paths.values.shape == (1, 1, 1)
    assert paths.values[0, 0, 0] == 1.5


def test_degenerate_dynamics_constant_paths():
    drift = make_drift("zero", 1)
    diffusion, const = make_diffusion("const:0.0", 1, 1)
    chain = EulerChain(SdeModel(drift, diffusion, 1, 1), 0.5, constant_diffusion=const)
    paths = simulate_paths(chain, [2.0], L=10, N=20, seed=1)
    assert np.all(paths.values == 2.0)


def test_gbm_terminal_mean_matches_lognormal():
    # exact GBM over one step of length T=3: E[X_T / X_0] = e^{rT}
    model = GbmModel(rate=0.08, sigma=0.2, step_size=3.0)
    paths = simulate_paths(model, [1.0], L=1, N=100_000, seed=11)
    ratios = paths.values[:, 1, 0]
    se = ratios.std(ddof=1) / np.sqrt(ratios.size)
    assert abs(ratios.mean() - np.exp(0.24)) < 3 * se


def test_bit_reproducibility():
    model = GbmModel(rate=0.05, sigma=0.3, step_size=0.1)
    a = simulate_paths(model, [1.0], L=7, N=50, seed=123)
    b = simulate_paths(model, [1.0], L=7, N=50, seed=123)
    assert np.array_equal(a.values, b.values)
    assert a.seed_record == b.seed_record


def test_path_depends_only_on_seed_and_index():
    model = GbmModel(rate=0.05, sigma=0.3, step_size=0.1)
    small = simulate_paths(model, [1.0], L=7, N=37, seed=123)
    big = simulate_paths(model, [1.0], L=7, N=60, seed=123)
    assert np.array_equal(small.values, big.values[:37])


def test_pathset_values_frozen():
    paths = simulate_paths(gaussian_walk(), [0.0], L=2, N=4, seed=0)
    with pytest.raises(ValueError):
        paths.values[0, 0, 0] = 1.0


def test_pathset_roundtrip(tmp_path):
    paths = simulate_paths(gaussian_walk(), [0.5], L=3, N=8, seed=9)
    f = tmp_path / "paths.npz"
    paths.save(f)
    back = PathSet.load(f)
    assert np.array_equal(back.values, paths.values)
    assert back.seed_record == paths.seed_record
    assert back.step_size == paths.step_size


def test_euler_density_standard_normal_mode():
    chain = gaussian_walk(h=1.0)
    got = chain.log_density(np.array([0.3]), np.array([0.3]))
    assert got == pytest.approx(np.log(1.0 / np.sqrt(2 * np.pi)), abs=1e-14)


@pytest.mark.parametrize("case", ["euler-sine", "gbm"])
def test_one_step_density_normalization(case):
    if case == "euler-sine":
        chain = sine_vol_chain(h=0.1)
        x = np.array([0.7])
        sig_hi = 2.5
        ys = np.linspace(x[0] - 10 * sig_hi * np.sqrt(0.1), x[0] + 10 * sig_hi * np.sqrt(0.1), 20001)
    else:
        chain = GbmModel(rate=0.08, sigma=0.2, step_size=0.1)
        x = np.array([1.0])
        width = 12 * 0.2 * np.sqrt(0.1)
        ys = np.geomspace(x[0] * np.exp(-width), x[0] * np.exp(width), 20001)
    dens = np.exp(chain.log_density(ys[:, None], np.broadcast_to(x, (ys.size, 1))))
    integral = np.trapezoid(dens, ys)
    assert integral == pytest.approx(1.0, abs=1e-6)


def test_gbm_density_matches_cdf_finite_difference():
    h, r, sig = 0.1, 0.08, 0.2
    model = GbmModel(rate=r, sigma=sig, step_size=h)
    x = 1.0
    mu = (r - 0.5 * sig**2) * h
    sd = sig * np.sqrt(h)

    def cdf(y):
        return norm.cdf((np.log(y / x) - mu) / sd)

    for y in (0.85, 0.95, 1.0, 1.05, 1.2):
        eps = 1e-6 * y
        fd = (cdf(y + eps) - cdf(y - eps)) / (2 * eps)
        got = np.exp(model.log_density(np.array([y]), np.array([x])))
        assert got == pytest.approx(fd, rel=1e-6)


def test_multistep_one_step_coincide():
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.25)
    y, x = np.array([1.1]), np.array([0.9])
    assert model.log_multistep_density(1, y, x) == pytest.approx(
        float(model.log_density(y, x)), rel=1e-14
    )


def test_multistep_chapman_kolmogorov_quadrature():
    h, r, sig = 0.25, 0.08, 0.2
    model = GbmModel(rate=r, sigma=sig, step_size=h)
    x0, y = np.array([1.0]), np.array([1.05])
    width = 12 * sig * np.sqrt(h)
    zs = np.geomspace(np.exp(-width), np.exp(width), 20001)
    inner = np.exp(
        model.log_density(np.broadcast_to(y, (zs.size, 1)), zs[:, None])
        + model.log_density(zs[:, None], np.broadcast_to(x0, (zs.size, 1)))
    )
    quad = np.trapezoid(inner, zs)
    direct = np.exp(model.log_multistep_density(2, y, x0))
    assert direct == pytest.approx(quad, rel=1e-5)


def test_multistep_mode_concentration_as_sigma_shrinks():
    h, r, l = 0.1, 0.08, 2
    vals = []
    for sig in (0.2, 0.1):
        model = GbmModel(rate=r, sigma=sig, step_size=h)
        y = np.array([np.exp((r - sig**2 / 2) * l * h)])
        vals.append(float(model.log_multistep_density(l, y, np.array([1.0]))))
    assert vals[1] > vals[0]


def test_euler_has_no_exact_multistep():
    with pytest.raises(CapabilityError):
        gaussian_walk().log_multistep_density(2, np.array([0.0]), np.array([0.0]))


def test_simulation_error_reports_path_and_step():
    bad = SdeModel(
        drift=lambda x: np.full_like(x, np.inf),
        diffusion=lambda x: np.ones(x.shape + (1,)),
        dimension=1,
        noise_dim=1,
    )
    chain = EulerChain(bad, step_size=0.1)
    with pytest.raises(SimulationError, match="path 0, step 1"):
        simulate_paths(chain, [0.0], L=2, N=3, seed=5)


def test_density_error_on_singular_covariance():
    drift = make_drift("zero", 1)
    diffusion, const = make_diffusion("const:0.0", 1, 1)
    chain = EulerChain(SdeModel(drift, diffusion, 1, 1), 0.5, constant_diffusion=const)
    with pytest.raises(DensityError):
        chain.log_density(np.array([0.1]), np.array([0.0]))


def test_log_density_matrix_matches_pairwise():
    rng = np.random.default_rng(4)
    for chain, pos in ((GbmModel(0.08, [0.2, 0.3], 0.1), True), (sine_vol_chain(0.1), False)):
        d = chain.dimension
        ys = rng.uniform(0.8, 1.2, (6, d)) if pos else rng.normal(0.0, 1.0, (6, d))
        xs = rng.uniform(0.8, 1.2, (5, d)) if pos else rng.normal(0.0, 1.0, (5, d))
        mat = chain.log_density_matrix(ys, xs)
        for m in range(5):
            ref = chain.log_density(ys, np.broadcast_to(xs[m], ys.shape))
            np.testing.assert_allclose(mat[:, m], ref, rtol=1e-10, atol=1e-10)


def test_gbm_correlated_density_normalizes():
    corr = np.array([[1.0, 0.6], [0.6, 1.0]])
    model = GbmModel(rate=0.05, sigma=[0.2, 0.3], step_size=0.2, correlation=corr)
    paths = simulate_paths(model, [1.0, 1.0], L=1, N=50_000, seed=2)
    logs = np.log(paths.values[:, 1, :])
    corr_hat = np.corrcoef(logs.T)[0, 1]
    assert abs(corr_hat - 0.6) < 0.02
    # density integrates to one over a product grid
    g = np.geomspace(np.exp(-1.2), np.exp(1.2), 301)
    yy1, yy2 = np.meshgrid(g, g, indexing="ij")
    ys = np.column_stack([yy1.ravel(), yy2.ravel()])
    dens = np.exp(model.log_density(ys, np.broadcast_to([1.0, 1.0], ys.shape)))
    integral = np.trapezoid(np.trapezoid(dens.reshape(301, 301), g, axis=1), g)
    assert integral == pytest.approx(1.0, abs=1e-4)


def test_check_assumptions_constant_paths():
    drift = make_drift("zero", 1)
    diffusion, const = make_diffusion("const:0.0", 1, 1)
    chain = EulerChain(SdeModel(drift, diffusion, 1, 1), 1.0, constant_diffusion=const)
    paths = simulate_paths(chain, [2.0], L=4, N=50, seed=1)
    report = check_assumptions(chain, paths, n_samples=0)
    assert report.c_z == pytest.approx(2.0 / 3.0, rel=1e-12)
    assert report.c_z <= 1.0
    assert report.ap_violations == 0


def test_check_assumptions_gbm_two_seed_stability():
    model = GbmModel(rate=0.08, sigma=0.2, step_size=0.3)
    reports = []
    for seed in (1, 2):
        paths = simulate_paths(model, [100.0], L=10, N=4000, seed=seed)
        reports.append(check_assumptions(model, paths, n_samples=100, seed=0))
    a, b = (r.c_z for r in reports)
    assert np.isfinite(a) and np.isfinite(b)
    assert abs(a - b) / max(a, b) < 0.20


def test_check_assumptions_euler_ap_envelope():
    # bounded drift, elliptic constant diffusion: the Gaussian envelope
    # with kappa at twice the empirical max ratio sees no violations
    drift = make_drift("ou:1.0", 1)
    diffusion, const = make_diffusion("const:1.0", 1, 1)
    chain = EulerChain(SdeModel(drift, diffusion, 1, 1), 0.2, constant_diffusion=const)
    paths = simulate_paths(chain, [0.0], L=10, N=2000, seed=3)
    report = check_assumptions(chain, paths, n_samples=400, seed=1)
    assert report.ap_violations == 0
    assert 0 < report.ap_max_ratio < np.inf
    assert report.ap_kappa == pytest.approx(2 * report.ap_max_ratio)


def test_gaussian_walk_increments_pass_ks():
    chain = gaussian_walk(h=0.5)
    paths = simulate_paths(chain, [0.0], L=1, N=100_000, seed=17)
    inc = (paths.values[:, 1, 0] - paths.values[:, 0, 0]) / np.sqrt(0.5)
    assert kstest(inc, "norm").pvalue > 0.01


@pytest.mark.slow
def test_euler_strong_convergence_order_half():
    # coupled Euler vs exact GBM on the same noise: mean |payoff gap| ~ sqrt(h)
    r, sig, K, T = 0.08, 0.2, 100.0, 1.0
    hs = [0.1, 0.05, 0.025, 0.0125]
    errs = []
    for h in hs:
        L = int(round(T / h))
        gbm = GbmModel(rate=r, sigma=sig, step_size=h)
        exact = simulate_paths(gbm, [100.0], L=L, N=100_000, seed=31)
        drift = lambda x: r * x
        diffusion = lambda x: (sig * x)[..., None]
        chain = EulerChain(SdeModel(drift, diffusion, 1, 1), h)
        euler = simulate_paths(chain, [100.0], L=L, N=100_000, seed=31)
        pay = lambda s: np.maximum(K - s, 0.0)
        errs.append(np.mean(np.abs(pay(exact.values[:, -1, 0]) - pay(euler.values[:, -1, 0]))))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 0.35 <= slope <= 0.65
