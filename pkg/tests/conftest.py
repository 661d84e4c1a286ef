import numpy as np
import pytest

from wsmesh.models import EulerChain, GbmModel, SdeModel, make_diffusion, make_drift
from wsmesh.rewards import hat_reward, put_reward


def gaussian_walk(h=1.0):
    """d = 1 chain with N(x, h) one-step kernel (zero drift, unit diffusion)."""
    drift = make_drift("zero", 1)
    diffusion, const = make_diffusion("const:1.0", 1, 1)
    sde = SdeModel(drift=drift, diffusion=diffusion, dimension=1, noise_dim=1)
    return EulerChain(sde, step_size=h, constant_diffusion=const)


def sine_vol_chain(h=0.1):
    """d = 1 Euler chain with state-dependent volatility (generic path)."""
    drift = make_drift("zero", 1)
    diffusion, const = make_diffusion("sine:2.0,0.5", 1, 1)
    sde = SdeModel(drift=drift, diffusion=diffusion, dimension=1, noise_dim=1)
    return EulerChain(sde, step_size=h, constant_diffusion=const)


def benchmark_put(L):
    """American put setup from the single-asset benchmark."""
    h = 3.0 / L
    model = GbmModel(rate=0.08, sigma=0.2, step_size=h)
    reward = put_reward(100.0, 0.08, h)
    return model, reward


BENCH = dict(s0=100.0, strike=100.0, rate=0.08, sigma=0.2, dividend=0.0, maturity=3.0)
TRUE_PRICE = 6.9320  # converged binomial reference for the benchmark put

# frozen output of the dense-grid quadrature oracle in tests/oracles.py for
# the hat-payoff Gaussian-walk instance (x0=2, L=3, width=3, h=1)
HAT_ORACLE_U0 = 1.2571378935


@pytest.fixture(scope="session")
def hat_instance():
    from wsmesh.mesh import Truncation

    return {
        "chain": gaussian_walk(1.0),
        "reward": hat_reward(3.0),
        "x0": np.array([2.0]),
        "L": 3,
        "truncation": Truncation(10.0),
        "oracle": HAT_ORACLE_U0,
    }
