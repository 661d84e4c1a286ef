"""Experiment configuration: a YAML file with fixed blocks and strict keys.

Blocks: ``model`` (chain kind and coefficients), ``reward`` (payoff kind,
strike, discount rate), ``solver`` (method and sizes), ``seeds`` (train
and test, which must differ), ``output`` (csv path, figures toggle), and
the optional ``expansion`` / ``diffusion`` / ``density_check`` blocks for
the approximated-density workflow. Unknown keys anywhere are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError
from .expansion import ExpansionDensity, ExpansionChainModel, make_diffusion1d
from .models import EulerChain, GbmModel, SdeModel, make_diffusion, make_drift
from .rewards import RewardFunction, call_reward, hat_reward, put_reward

KNOWN_METHODS = (
    "wsm-direct", "wsm-knn", "ls-2", "ls-4", "vf-2", "vf-4", "binomial", "bs-european",
)

_BLOCK_KEYS = {
    "model": {
        "kind", "x0", "rate", "sigma", "dividend", "correlation",
        "drift", "diffusion", "dim", "noise_dim", "h", "seed", "density",
    },
    "reward": {"payoff", "strike", "rate"},
    "solver": {
        "method", "steps", "horizon", "n_train", "n_test", "truncation",
        "neighbors", "degree", "epsilon", "tree_steps", "in_the_money_only",
    },
    "seeds": {"train", "test"},
    "output": {"csv", "figures"},
    "expansion": {"delta", "order", "bridges", "grid_points", "bridges_per_pair"},
    "diffusion": {"kind", "theta", "work_range", "a", "b", "c"},
    "density_check": {"probe_x", "probe_lo", "probe_hi", "probe_count", "orders"},
}


def _check_keys(block: str, data: dict):
    unknown = set(data) - _BLOCK_KEYS[block]
    if unknown:
        raise ConfigError(f"unknown key(s) in {block!r} block: {sorted(unknown)}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    reward: dict
    solver: dict
    seeds: dict
    output: dict = field(default_factory=dict)
    expansion: dict = field(default_factory=dict)
    diffusion: dict = field(default_factory=dict)
    density_check: dict = field(default_factory=dict)

    def with_solver(self, **updates) -> "ExperimentConfig":
        return replace(self, solver={**self.solver, **updates})

    def with_seeds(self, **updates) -> "ExperimentConfig":
        return replace(self, seeds={**self.seeds, **updates})

    def as_dict(self) -> dict:
        return {
            "model": dict(self.model),
            "reward": dict(self.reward),
            "solver": dict(self.solver),
            "seeds": dict(self.seeds),
            "output": dict(self.output),
            "expansion": dict(self.expansion),
            "diffusion": dict(self.diffusion),
            "density_check": dict(self.density_check),
        }


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    known_blocks = set(_BLOCK_KEYS) | {"schema"}
    unknown = set(data) - known_blocks
    if unknown:
        raise ConfigError(f"unknown top-level block(s): {sorted(unknown)}")
    schema = data.get("schema", 1)
    if schema != 1:
        raise ConfigError(f"unsupported config schema {schema!r}")
    blocks = {}
    for name in _BLOCK_KEYS:
        block = data.get(name, {})
        if block is None:
            block = {}
        if not isinstance(block, dict):
            raise ConfigError(f"{name!r} block must be a mapping")
        _check_keys(name, block)
        blocks[name] = block
    cfg = ExperimentConfig(**blocks)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigError(f"could not parse {path}: {e}") from e
    return parse_config(data)


def validate_config(cfg: ExperimentConfig):
    method = cfg.solver.get("method")
    if method is not None and method not in KNOWN_METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {KNOWN_METHODS}")
    train = cfg.seeds.get("train")
    test = cfg.seeds.get("test")
    if train is not None and test is not None and int(train) == int(test):
        raise ConfigError("train and test seeds must differ")
    kind = cfg.model.get("kind")
    if kind is not None and kind not in ("gbm", "euler"):
        raise ConfigError(f"unknown model kind {kind!r}")
    if cfg.model.get("h") is not None and cfg.solver.get("horizon") is not None:
        raise ConfigError("give either model.h or solver.horizon, not both")
    trunc = cfg.solver.get("truncation")
    if isinstance(trunc, str) and trunc not in ("inf", "auto"):
        raise ConfigError(f"truncation must be a number, 'inf', or 'auto', got {trunc!r}")


def step_size(cfg: ExperimentConfig, steps: Optional[int] = None) -> float:
    """Effective step h: fixed model.h, or horizon / steps."""
    L = int(steps if steps is not None else cfg.solver["steps"])
    if cfg.model.get("h") is not None:
        return float(cfg.model["h"])
    horizon = cfg.solver.get("horizon")
    if horizon is None:
        raise ConfigError("need model.h or solver.horizon to fix the time step")
    if L < 1:
        raise ConfigError("steps must be >= 1")
    return float(horizon) / L


def build_model(cfg: ExperimentConfig, steps: Optional[int] = None):
    """Instantiate the chain model; returns (model, x0 vector)."""
    kind = cfg.model.get("kind")
    if kind is None:
        raise ConfigError("model.kind is required")
    h = step_size(cfg, steps)
    x0 = np.atleast_1d(np.asarray(cfg.model.get("x0", 0.0), dtype=float))
    if kind == "gbm":
        model = GbmModel(
            rate=float(cfg.model.get("rate", 0.0)),
            sigma=cfg.model.get("sigma", 0.2),
            step_size=h,
            dividend=float(cfg.model.get("dividend", 0.0)),
            correlation=cfg.model.get("correlation"),
        )
        if x0.size != model.dimension:
            raise ConfigError("model.x0 length does not match sigma")
        return model, x0
    d = int(cfg.model.get("dim", x0.size))
    m = int(cfg.model.get("noise_dim", d))
    if x0.size != d:
        raise ConfigError("model.x0 length does not match model.dim")
    drift = make_drift(cfg.model.get("drift", "zero"), d)
    diffusion, const = make_diffusion(cfg.model.get("diffusion", "const:1.0"), d, m)
    sde = SdeModel(drift=drift, diffusion=diffusion, dimension=d, noise_dim=m)
    chain = EulerChain(sde, step_size=h, constant_diffusion=const)
    if cfg.model.get("density", "exact") == "expansion":
        diff = build_diffusion(cfg)
        exp = build_expansion(cfg, delta=h)
        chain = ExpansionChainModel(
            chain, diff, exp,
            bridges_per_pair=int(cfg.expansion.get("bridges_per_pair", 256)),
        )
    return chain, x0


def build_reward(cfg: ExperimentConfig, steps: Optional[int] = None) -> RewardFunction:
    payoff = cfg.reward.get("payoff")
    if payoff is None:
        raise ConfigError("reward.payoff is required")
    h = step_size(cfg, steps)
    strike = float(cfg.reward.get("strike", 0.0))
    rate = float(cfg.reward.get("rate", 0.0))
    if payoff == "put":
        return put_reward(strike, rate, h)
    if payoff == "call":
        return call_reward(strike, rate, h)
    if payoff == "hat":
        return hat_reward(strike)
    raise ConfigError(f"unknown payoff {payoff!r}")


def build_diffusion(cfg: ExperimentConfig):
    block = dict(cfg.diffusion)
    kind = block.pop("kind", None)
    if kind is None:
        raise ConfigError("diffusion.kind is required for density work")
    try:
        return make_diffusion1d(kind, **block)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad diffusion block: {e}") from e


def build_expansion(cfg: ExperimentConfig, delta: Optional[float] = None) -> ExpansionDensity:
    block = cfg.expansion
    if delta is None:
        delta = block.get("delta")
        if delta is None:
            raise ConfigError("expansion.delta is required")
    return ExpansionDensity(
        order=int(block.get("order", 3)),
        delta=float(delta),
        n_bridges=int(block.get("bridges", 100_000)),
        grid_points=int(block.get("grid_points", 200_001)),
    )


def parse_method(method: str):
    """Split a method label into (family, degree_or_None)."""
    if method in ("wsm-direct", "wsm-knn", "binomial", "bs-european"):
        return method, None
    family, _, deg = method.partition("-")
    if family in ("ls", "vf") and deg.isdigit():
        return family, int(deg)
    raise ConfigError(f"unknown method {method!r}")
