"""Samplers producing paired experimental/observational datasets from a DgpSpec."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ExperimentalData, ObservationalData, RngStream
from .errors import InvalidArgumentError
from .oracle import DgpSpec, make_multivariate_dgp, make_univariate_dgp

__all__ = ["SimulatedPair", "sample_pair", "sample_univariate", "sample_multivariate"]


@dataclass(frozen=True)
class SimulatedPair:
    """One simulated dataset pair plus the spec and stream that produced it."""

    exp: ExperimentalData
    obs: ObservationalData
    dgp: DgpSpec
    stream: RngStream | None = None


def sample_pair(
    dgp: DgpSpec, n: int, n_obs: int, rng: RngStream | np.random.Generator
) -> SimulatedPair:
    """Draw n experimental and n_obs observational rows from a known DGP.

    Experimental: covariates from the experimental law, effect measurement =
    effect function + Gaussian noise. Observational: covariates from the
    target law, treatment Bernoulli(observational propensity), outcome =
    arm mean + Gaussian noise.
    """
    if n < 1 or n_obs < 1:
        raise InvalidArgumentError("need n >= 1 and n_obs >= 1")
    stream = rng if isinstance(rng, RngStream) else None
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    x_exp = dgp.rct_law.sample(n, gen)
    d = dgp.cate(x_exp) + dgp.sigma_d * gen.standard_normal(n)
    x_obs = dgp.obs_law.sample(n_obs, gen)
    z = (gen.random(n_obs) < dgp.obs_propensity(x_obs)).astype(int)
    y = np.where(z == 1, dgp.m1(x_obs), dgp.m0(x_obs)) \
        + dgp.sigma_y * gen.standard_normal(n_obs)
    return SimulatedPair(
        exp=ExperimentalData(d=d, x=x_exp),
        obs=ObservationalData(y=y, z=z, x=x_obs),
        dgp=dgp,
        stream=stream,
    )


def sample_univariate(
    theta: float,
    n: int = 100,
    n_obs: int = 10_000,
    rng: RngStream | np.random.Generator = RngStream(0),
    sigma_d: float = 1.0,
    sigma_y: float = 1.0,
) -> SimulatedPair:
    """Single-covariate design: experimental X ~ N(-theta, 1-theta), target
    X ~ N(0,1), fair-coin observational treatment."""
    return sample_pair(make_univariate_dgp(theta, sigma_d, sigma_y), n, n_obs, rng)


def sample_multivariate(
    eta: float,
    sigma0_sq: float,
    n: int = 100,
    n_obs: int = 10_000,
    rng: RngStream | np.random.Generator = RngStream(0),
    sigma_d: float = 1.0,
    sigma_y: float = 1.0,
) -> SimulatedPair:
    """Ten-covariate design with confounded observational treatment."""
    return sample_pair(
        make_multivariate_dgp(eta, sigma0_sq, sigma_d, sigma_y), n, n_obs, rng
    )
