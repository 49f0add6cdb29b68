"""Analytic oracle for known data-generating processes.

Everything a simulation study needs to know exactly: the target estimands
(unweighted and projected transported effects), the calibration coefficients
and their asymptotic variance, the minimum-variance representation of the
projected estimand as a weighted effect, the likelihood ratio and sampling
propensity between the two covariate laws, and the efficient influence
function of the projected estimand in the fused-sample formulation (with its
known-contrast variant and the small-experimental-fraction limit of the
efficiency bound).

All population quantities are computed by tensor-product Gauss-Hermite
quadrature over the "active" covariate coordinates (the ones the contrast and
effect functions actually depend on); the remaining coordinates marginalize
out analytically because both covariate laws are coordinatewise-independent
Gaussians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .core import BasisExpansion, RngStream
from .errors import (
    InvalidArgumentError,
    QuadratureDegeneracyError,
)

__all__ = [
    "GaussianProductLaw",
    "DgpSpec",
    "QuadratureSpec",
    "OracleEstimands",
    "MinVarWeights",
    "NestedNuisances",
    "EfficiencyRow",
    "make_univariate_dgp",
    "make_multivariate_dgp",
    "oracle_estimands",
    "weight_gamma_minvar",
    "weight_function",
    "weight_checks",
    "sampling_propensity",
    "make_nested_nuisances",
    "sample_nested",
    "eif_eval",
    "eif_known_delta",
    "v_eff_monte_carlo",
    "e1_quadrature",
    "efficiency_limit_check",
]


# ---------------------------------------------------------------------------
# covariate laws and DGP specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianProductLaw:
    """Coordinatewise-independent Gaussian law on R^p."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        sd = np.atleast_1d(np.asarray(self.sd, dtype=float))
        if mean.shape != sd.shape or mean.ndim != 1:
            raise InvalidArgumentError("mean and sd must be 1-d and equal length")
        if np.any(sd <= 0):
            raise InvalidArgumentError("law sds must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = (x - self.mean) / self.sd
        return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.sd)) \
            - 0.5 * self.p * math.log(2 * math.pi)

    def sample(self, m: int, gen: np.random.Generator) -> np.ndarray:
        return self.mean + self.sd * gen.standard_normal((m, self.p))


@dataclass(frozen=True)
class DgpSpec:
    """A fully known data-generating process for simulation and oracles.

    `contrast`, `cate`, `m0` and `obs_propensity` are vectorized over (n, p_x)
    covariate matrices and must depend only on the coordinates listed in
    `active` (quadrature integrates over those alone). Outcome noise is
    homoskedastic Gaussian: sd `sigma_d` for the experimental effect
    measurements and `sigma_y` for observational outcomes.
    """

    family: str
    params: dict
    rct_law: GaussianProductLaw
    obs_law: GaussianProductLaw
    contrast: Callable[[np.ndarray], np.ndarray]
    cate: Callable[[np.ndarray], np.ndarray]
    m0: Callable[[np.ndarray], np.ndarray]
    obs_propensity: Callable[[np.ndarray], np.ndarray]
    active: tuple[int, ...]
    sigma_d: float = 1.0
    sigma_y: float = 1.0

    def __post_init__(self):
        if self.rct_law.p != self.obs_law.p:
            raise InvalidArgumentError("covariate laws must share a dimension")
        if self.sigma_d <= 0 or self.sigma_y <= 0:
            raise InvalidArgumentError("noise sds must be positive")
        if not self.active or any(a < 0 or a >= self.p_x for a in self.active):
            raise InvalidArgumentError("active coordinates out of range")

    @property
    def p_x(self) -> int:
        return self.rct_law.p

    def m1(self, x: np.ndarray) -> np.ndarray:
        return self.m0(x) + self.contrast(x)

    def m_arm(self, z: int, x: np.ndarray) -> np.ndarray:
        return self.m1(x) if z == 1 else self.m0(x)

    def lambda_ratio(self, x: np.ndarray) -> np.ndarray:
        """Likelihood ratio of the experimental to the observational law."""
        return np.exp(self.rct_law.log_pdf(x) - self.obs_law.log_pdf(x))


def _expit(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def make_univariate_dgp(theta: float, sigma_d: float = 1.0, sigma_y: float = 1.0) -> DgpSpec:
    """Single-covariate shifted-Gaussian design.

    Experimental covariates are N(-theta, 1-theta), observational covariates
    are N(0,1); the observational contrast is 0.75 x^2 + 3 x + 1, the true
    effect function is that contrast minus x, the untreated arm mean is x,
    and observational treatment is a fair coin independent of x.
    """
    if not (0.0 <= theta < 1.0):
        raise InvalidArgumentError(f"theta must lie in [0,1), got {theta}")
    contrast = lambda x: 0.75 * x[:, 0] ** 2 + 3.0 * x[:, 0] + 1.0
    return DgpSpec(
        family="univariate",
        params={"theta": theta},
        rct_law=GaussianProductLaw(np.array([-theta]), np.array([math.sqrt(1.0 - theta)])),
        obs_law=GaussianProductLaw(np.array([0.0]), np.array([1.0])),
        contrast=contrast,
        cate=lambda x: contrast(x) - x[:, 0],
        m0=lambda x: x[:, 0].copy(),
        obs_propensity=lambda x: np.full(x.shape[0], 0.5),
        active=(0,),
        sigma_d=sigma_d,
        sigma_y=sigma_y,
    )


def make_multivariate_dgp(
    eta: float,
    sigma0_sq: float,
    sigma_d: float = 1.0,
    sigma_y: float = 1.0,
    dim: int = 10,
) -> DgpSpec:
    """Ten-covariate design with a bounded two-coordinate contrast.

    Observational covariates are iid N(0, sigma0_sq); experimental covariates
    iid N(0.5, 1). The contrast is expit(0.5 x1) expit(1 - 0.5 x2); the true
    effect adds an interaction eta (x1+1)(x2+1) on top of 0.5 + 0.5*contrast,
    so eta = 0 makes the linear calibration exactly correct.
    """
    if sigma0_sq <= 0:
        raise InvalidArgumentError(f"sigma0_sq must be positive, got {sigma0_sq}")
    if dim < 2:
        raise InvalidArgumentError("need at least two covariates")
    contrast = lambda x: _expit(0.5 * x[:, 0]) * _expit(1.0 - 0.5 * x[:, 1])
    return DgpSpec(
        family="multivariate",
        params={"eta": eta, "sigma0_sq": sigma0_sq, "dim": dim},
        rct_law=GaussianProductLaw(np.full(dim, 0.5), np.ones(dim)),
        obs_law=GaussianProductLaw(np.zeros(dim), np.full(dim, math.sqrt(sigma0_sq))),
        contrast=contrast,
        cate=lambda x: 0.5 + 0.5 * contrast(x) + eta * (x[:, 0] + 1.0) * (x[:, 1] + 1.0),
        m0=lambda x: (
            np.sin(x[:, 0]) + np.cos(x[:, 1])
            + np.sin(2 * x[:, 0]) * np.cos(2 * x[:, 1])
            + 0.5 * np.sum(x, axis=1)
        ),
        obs_propensity=lambda x: ndtr((2.0 * x[:, 1] - x[:, 0]) / 5.0),
        active=(0, 1),
        sigma_d=sigma_d,
        sigma_y=sigma_y,
    )


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Hermite order per active dimension (>= 32)."""

    nodes: int = 64

    def __post_init__(self):
        if self.nodes < 32:
            raise InvalidArgumentError("quadrature needs at least 32 nodes per dimension")


DEFAULT_QUAD = QuadratureSpec()


@lru_cache(maxsize=8)
def _hermgauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.hermite.hermgauss(n)
    return t, w / math.sqrt(math.pi)


def _law_nodes(law: GaussianProductLaw, active: tuple[int, ...], nodes: int):
    """Tensor-product nodes over the active coordinates of a product law.

    Returns (X, w) where X is (m, p) with inactive coordinates pinned at the
    law's means (integrands must not depend on them) and w sums to 1.
    """
    t, w1 = _hermgauss(nodes)
    grids = np.meshgrid(*[t] * len(active), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*[w1] * len(active), indexing="ij")
    wts = np.ones(pts.shape[0])
    for g in wgrids:
        wts = wts * g.ravel()
    X = np.tile(law.mean, (pts.shape[0], 1))
    for j, a in enumerate(active):
        X[:, a] = law.mean[a] + math.sqrt(2.0) * law.sd[a] * pts[:, j]
    return X, wts


def _expect(law, active, f, nodes):
    X, w = _law_nodes(law, active, nodes)
    return float(np.sum(w * f(X)))


def _lambda_active(dgp: DgpSpec, x: np.ndarray) -> np.ndarray:
    """Likelihood ratio restricted to the active coordinates."""
    out = np.zeros(x.shape[0])
    for a in dgp.active:
        zr = (x[:, a] - dgp.rct_law.mean[a]) / dgp.rct_law.sd[a]
        zo = (x[:, a] - dgp.obs_law.mean[a]) / dgp.obs_law.sd[a]
        out += -0.5 * zr**2 + 0.5 * zo**2 \
            - math.log(dgp.rct_law.sd[a]) + math.log(dgp.obs_law.sd[a])
    return np.exp(out)


def _lambda_rest_moment(dgp: DgpSpec, order: int, nodes: int, under: str) -> float:
    """prod over inactive coords of E_law[Lambda_j(X_j)^order]."""
    total = 1.0
    t, w1 = _hermgauss(nodes)
    for a in range(dgp.p_x):
        if a in dgp.active:
            continue
        law = dgp.rct_law if under == "rct" else dgp.obs_law
        xj = law.mean[a] + math.sqrt(2.0) * law.sd[a] * t
        zr = (xj - dgp.rct_law.mean[a]) / dgp.rct_law.sd[a]
        zo = (xj - dgp.obs_law.mean[a]) / dgp.obs_law.sd[a]
        lam_j = np.exp(-0.5 * zr**2 + 0.5 * zo**2) * dgp.obs_law.sd[a] / dgp.rct_law.sd[a]
        total *= float(np.sum(w1 * lam_j**order))
    return total


# ---------------------------------------------------------------------------
# estimands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleEstimands:
    """Population quantities of a known DGP under a given basis."""

    tau: float            # effect function averaged over the target law
    tau_bar: float        # projected effect averaged over the target law
    beta_bar: np.ndarray  # population calibration coefficients
    alpha_bar: np.ndarray # Gram-inverse times target-law basis mean
    sigma: float          # asymptotic variance of the calibrated estimator

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "tau_bar": self.tau_bar,
            "beta_bar": [float(v) for v in self.beta_bar],
            "alpha_bar": [float(v) for v in self.alpha_bar],
            "sigma": self.sigma,
        }


def _gram_and_nodes(dgp: DgpSpec, psi: BasisExpansion, quad: QuadratureSpec):
    Xr, wr = _law_nodes(dgp.rct_law, dgp.active, quad.nodes)
    Xo, wo = _law_nodes(dgp.obs_law, dgp.active, quad.nodes)
    psi_r = psi.eval(dgp.contrast(Xr))
    psi_o = psi.eval(dgp.contrast(Xo))
    gram = psi_r.T @ (wr[:, None] * psi_r)
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-12 * max(ev[-1], 1.0):
        raise QuadratureDegeneracyError(
            "basis Gram matrix singular under the experimental covariate law"
        )
    return Xr, wr, psi_r, Xo, wo, psi_o, gram


def oracle_estimands(
    dgp: DgpSpec, psi: BasisExpansion, quad: QuadratureSpec = DEFAULT_QUAD
) -> OracleEstimands:
    """Compute tau, tau_bar, beta_bar, alpha_bar and the asymptotic variance.

    beta_bar solves the population normal equations of regressing the effect
    function on the basis-expanded contrast under the experimental law;
    everything else follows by averaging under the appropriate law. The
    variance uses the homoskedastic effect-noise model carried by the DGP.
    """
    Xr, wr, psi_r, Xo, wo, psi_o, gram = _gram_and_nodes(dgp, psi, quad)
    mu_r = dgp.cate(Xr)
    mu_o = dgp.cate(Xo)
    beta = np.linalg.solve(gram, psi_r.T @ (wr * mu_r))
    tau = float(np.sum(wo * mu_o))
    tau_bar = float(np.sum(wo * (psi_o @ beta)))
    alpha = np.linalg.solve(gram, psi_o.T @ wo)
    meat_w = ((mu_r - psi_r @ beta) ** 2 + dgp.sigma_d**2) * wr
    meat = psi_r.T @ (meat_w[:, None] * psi_r)
    sigma = float(alpha @ meat @ alpha)
    return OracleEstimands(tau=tau, tau_bar=tau_bar, beta_bar=beta,
                           alpha_bar=alpha, sigma=sigma)


# ---------------------------------------------------------------------------
# weighted-effect representation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinVarWeights:
    """Weight parameter minimizing the target-law weight variance.

    `unit_weight` flags the well-specified case (projected effect equals the
    effect function almost surely) where the representation holds trivially
    with unit weights.
    """

    gamma: np.ndarray
    unit_weight: bool
    constraint_gap: float  # b'gamma - E_obs[mu - mu_bar], ~0 by construction


def weight_gamma_minvar(
    dgp: DgpSpec,
    psi: BasisExpansion,
    estimands: OracleEstimands,
    quad: QuadratureSpec = DEFAULT_QUAD,
) -> MinVarWeights:
    Xr, wr, psi_r, Xo, wo, psi_o, gram = _gram_and_nodes(dgp, psi, quad)
    mu_r = dgp.cate(Xr)
    resid = mu_r - psi_r @ estimands.beta_bar
    ms_resid = float(np.sum(wr * resid**2))
    scale = max(1.0, float(np.sum(wr * mu_r**2)))
    if ms_resid < 1e-10 * scale:
        return MinVarWeights(gamma=np.zeros(psi.p), unit_weight=True, constraint_gap=0.0)
    gap = estimands.tau - estimands.tau_bar
    # change of measure: E_obs[Lambda * g] = E_rct[g] for active-only g
    b = psi_r.T @ (wr * mu_r * resid)
    lam_act = _lambda_active(dgp, Xr)
    rest = _lambda_rest_moment(dgp, order=1, nodes=quad.nodes, under="rct")
    a_w = wr * lam_act * resid**2 * rest
    A = psi_r.T @ (a_w[:, None] * psi_r)
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= 1e-14 * max(ev[-1], 1.0):
        raise QuadratureDegeneracyError("weight normal matrix is singular")
    ainv_b = np.linalg.solve(A, b)
    denom = float(b @ ainv_b)
    if abs(denom) < 1e-14:
        raise QuadratureDegeneracyError("weight constraint direction degenerate")
    gamma = (gap / denom) * ainv_b
    return MinVarWeights(gamma=gamma, unit_weight=False,
                         constraint_gap=float(b @ gamma - gap))


def weight_function(
    x: np.ndarray,
    dgp: DgpSpec,
    psi: BasisExpansion,
    estimands: OracleEstimands,
    gamma: np.ndarray,
) -> np.ndarray:
    """Weights w(x) = 1 - Lambda(x) (mu - mu_bar)(x) psi(contrast(x))' gamma."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lam = dgp.lambda_ratio(x)
    psi_x = psi.eval(dgp.contrast(x))
    resid = dgp.cate(x) - psi_x @ estimands.beta_bar
    return 1.0 - lam * resid * (psi_x @ np.asarray(gamma, dtype=float))


def weight_checks(
    dgp: DgpSpec,
    psi: BasisExpansion,
    estimands: OracleEstimands,
    gamma: np.ndarray,
    quad: QuadratureSpec = DEFAULT_QUAD,
) -> tuple[float, float]:
    """Quadrature values of (E_obs[w], E_obs[w * mu]) for the given gamma."""
    Xo, wo = _law_nodes(dgp.obs_law, dgp.active, quad.nodes)
    psi_o = psi.eval(dgp.contrast(Xo))
    mu_o = dgp.cate(Xo)
    resid = mu_o - psi_o @ estimands.beta_bar
    lam_act = _lambda_active(dgp, Xo)
    rest = _lambda_rest_moment(dgp, order=1, nodes=quad.nodes, under="obs")
    correction = lam_act * resid * (psi_o @ np.asarray(gamma, dtype=float)) * rest
    e_w = float(np.sum(wo * (1.0 - correction)))
    e_wmu = float(np.sum(wo * (mu_o * (1.0 - correction))))
    return e_w, e_wmu


def sampling_propensity(x: np.ndarray, rho2: float, dgp: DgpSpec) -> np.ndarray:
    """Probability of experimental membership given covariates in the fused sample."""
    if not (0.0 < rho2 < 1.0):
        raise InvalidArgumentError(f"rho2 must lie in (0,1), got {rho2}")
    lam = dgp.lambda_ratio(np.atleast_2d(np.asarray(x, dtype=float)))
    return rho2 * lam / (rho2 * lam + (1.0 - rho2))


# ---------------------------------------------------------------------------
# fused-sample nuisances and the efficient influence function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NestedNuisances:
    """Exact nuisances of the fused-sample formulation for a known DGP.

    Group labels: 2 = experimental (effect measurement observed), 1/0 =
    treated/control observational rows. rho are the group probabilities;
    conditional on the observational group, treatment follows the DGP's
    observational propensity.
    """

    dgp: DgpSpec
    psi: BasisExpansion
    rho: tuple[float, float, float]  # (rho_0, rho_1, rho_2)
    beta_bar: np.ndarray
    alpha_bar: np.ndarray
    tau_bar: float
    sigma: float

    @property
    def rho2(self) -> float:
        return self.rho[2]

    def m_q(self, q: int, x: np.ndarray) -> np.ndarray:
        if q == 2:
            return self.dgp.cate(x)
        return self.dgp.m_arm(q, x)

    def mu_bar(self, x: np.ndarray) -> np.ndarray:
        return self.psi.eval(self.dgp.contrast(x)) @ self.beta_bar

    def kappa(self, x: np.ndarray) -> np.ndarray:
        """Contrast-perturbation factor of the influence function.

        kappa = psidot' beta_bar
              + Lambda * alpha_bar' (m2 psidot - [psi psidot' + psidot psi'] beta_bar)
        evaluated at the contrast value.
        """
        if self.psi.eval_dot is None:
            raise InvalidArgumentError(
                "influence function needs a differentiable basis (eval_dot missing)"
            )
        x = np.atleast_2d(np.asarray(x, dtype=float))
        delta = self.dgp.contrast(x)
        p_v = self.psi.eval(delta)
        pd_v = self.psi.eval_dot(delta)
        lam = self.dgp.lambda_ratio(x)
        a_pd = pd_v @ self.alpha_bar
        a_p = p_v @ self.alpha_bar
        b_pd = pd_v @ self.beta_bar
        b_p = p_v @ self.beta_bar
        return b_pd + lam * (self.m_q(2, x) * a_pd - (a_p * b_pd + a_pd * b_p))


def make_nested_nuisances(
    dgp: DgpSpec,
    psi: BasisExpansion,
    rho2: float,
    quad: QuadratureSpec = DEFAULT_QUAD,
) -> NestedNuisances:
    if not (0.0 < rho2 < 1.0):
        raise InvalidArgumentError(f"rho2 must lie in (0,1), got {rho2}")
    est = oracle_estimands(dgp, psi, quad)
    p_treat = _expect(dgp.obs_law, dgp.active, dgp.obs_propensity, quad.nodes)
    rho1 = (1.0 - rho2) * p_treat
    rho0 = (1.0 - rho2) * (1.0 - p_treat)
    return NestedNuisances(
        dgp=dgp, psi=psi, rho=(rho0, rho1, rho2),
        beta_bar=est.beta_bar, alpha_bar=est.alpha_bar,
        tau_bar=est.tau_bar, sigma=est.sigma,
    )


def sample_nested(
    nuis: NestedNuisances, m: int, rng: RngStream | np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw m fused-sample observations (q, x, y) from the nested DGP."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    dgp = nuis.dgp
    is_exp = gen.random(m) < nuis.rho2
    x = np.where(
        is_exp[:, None],
        dgp.rct_law.sample(m, gen),
        dgp.obs_law.sample(m, gen),
    )
    treated = gen.random(m) < dgp.obs_propensity(x)
    q = np.where(is_exp, 2, treated.astype(int))
    noise = gen.standard_normal(m)
    y = np.where(
        q == 2,
        dgp.cate(x) + dgp.sigma_d * noise,
        np.where(q == 1, dgp.m1(x), dgp.m0(x)) + dgp.sigma_y * noise,
    )
    return q, x, y


def _eif_terms(q, x, y, nuis: NestedNuisances, tau_bar: float):
    q = np.atleast_1d(np.asarray(q))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    rho2 = nuis.rho2
    mu_bar = nuis.mu_bar(x)
    r = nuis.dgp.obs_propensity(x)
    obs_mask = q != 2
    if np.any(obs_mask & ((r <= 0.0) | (r >= 1.0))):
        raise InvalidArgumentError(
            "observational propensity hits {0,1}: treated/control residual undefined"
        )
    iota = np.where(q == 1, (y - nuis.m_q(1, x)) / r, 0.0) \
        - np.where(q == 0, (y - nuis.m_q(0, x)) / (1.0 - r), 0.0)
    base = obs_mask / (1.0 - rho2) * (mu_bar - tau_bar)
    correction = obs_mask / (1.0 - rho2) * iota * nuis.kappa(x)
    psi_x = nuis.psi.eval(nuis.dgp.contrast(x))
    exp_term = (q == 2) / rho2 * (y - mu_bar) * (psi_x @ nuis.alpha_bar)
    return base, correction, exp_term


def eif_eval(w, nuis: NestedNuisances, psi: BasisExpansion, tau_bar: float):
    """Efficient influence function of the projected estimand at w = (q, x, y).

    Vectorized: q, y may be arrays with x the matching covariate matrix.
    """
    q, x, y = w
    base, correction, exp_term = _eif_terms(q, x, y, nuis, tau_bar)
    out = base + correction + exp_term
    return float(out[0]) if np.isscalar(q) or np.asarray(q).ndim == 0 else out


def eif_known_delta(w, nuis: NestedNuisances, psi: BasisExpansion, tau_bar: float):
    """Influence function when the observational contrast is known exactly.

    Drops the treated/control-residual correction term; identical to
    `eif_eval` on experimental draws.
    """
    q, x, y = w
    base, _, exp_term = _eif_terms(q, x, y, nuis, tau_bar)
    out = base + exp_term
    return float(out[0]) if np.isscalar(q) or np.asarray(q).ndim == 0 else out


def v_eff_monte_carlo(
    nuis: NestedNuisances,
    psi: BasisExpansion,
    draws: int,
    rng: RngStream | np.random.Generator,
    stratified: bool = False,
) -> tuple[float, float]:
    """Monte Carlo estimate (value, standard error) of the efficiency bound.

    `stratified=True` splits the draws between the experimental and
    observational groups and recombines with the exact group probabilities;
    the two indicator blocks of the influence function never co-occur, so the
    stratified estimator is unbiased and keeps the rare-group term accurate
    when the experimental fraction is tiny.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if not stratified:
        q, x, y = sample_nested(nuis, draws, gen)
        vals = eif_eval((q, x, y), nuis, psi, nuis.tau_bar) ** 2
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(draws))
    dgp = nuis.dgp
    m_obs = draws // 2
    m_exp = draws - m_obs
    rho2 = nuis.rho2
    # observational stratum: (mu_bar - tau_bar + iota*kappa)^2 / (1-rho2)
    x = dgp.obs_law.sample(m_obs, gen)
    treated = gen.random(m_obs) < dgp.obs_propensity(x)
    q = treated.astype(int)
    y = np.where(q == 1, dgp.m1(x), dgp.m0(x)) + dgp.sigma_y * gen.standard_normal(m_obs)
    base, corr, _ = _eif_terms(q, x, y, nuis, nuis.tau_bar)
    e1_vals = ((base + corr) * (1.0 - rho2)) ** 2
    # experimental stratum: ((y - mu_bar) alpha'psi)^2 / rho2
    xe = dgp.rct_law.sample(m_exp, gen)
    ye = dgp.cate(xe) + dgp.sigma_d * gen.standard_normal(m_exp)
    _, _, expt = _eif_terms(np.full(m_exp, 2), xe, ye, nuis, nuis.tau_bar)
    e2_vals = (expt * rho2) ** 2
    v = float(e1_vals.mean() / (1.0 - rho2) + e2_vals.mean() / rho2)
    se = math.sqrt(
        (e1_vals.std(ddof=1) / math.sqrt(m_obs) / (1.0 - rho2)) ** 2
        + (e2_vals.std(ddof=1) / math.sqrt(m_exp) / rho2) ** 2
    )
    return v, se


def e1_quadrature(nuis: NestedNuisances, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Observational-group second moment of the influence function, by quadrature.

    E[(mu_bar - tau_bar + iota*kappa)^2 | observational]. The cross term
    vanishes because the treated/control residual is conditionally mean zero,
    and its conditional second moment is sigma_y^2 (1/r + 1/(1-r)). kappa
    splits into an active-coordinate part plus the full likelihood ratio times
    another active part, so the inactive coordinates contribute closed-form
    moments of the coordinatewise ratio.
    """
    dgp, psi = nuis.dgp, nuis.psi
    if psi.eval_dot is None:
        raise InvalidArgumentError("influence function needs a differentiable basis")
    Xo, wo = _law_nodes(dgp.obs_law, dgp.active, quad.nodes)
    delta = dgp.contrast(Xo)
    p_v = psi.eval(delta)
    pd_v = psi.eval_dot(delta)
    mu_bar = p_v @ nuis.beta_bar
    term_mean = float(np.sum(wo * (mu_bar - nuis.tau_bar) ** 2))
    # kappa = a + Lambda_rest * Lambda_act * g with a, g active-only
    a = pd_v @ nuis.beta_bar
    g = nuis.m_q(2, Xo) * (pd_v @ nuis.alpha_bar) - (
        (p_v @ nuis.alpha_bar) * (pd_v @ nuis.beta_bar)
        + (pd_v @ nuis.alpha_bar) * (p_v @ nuis.beta_bar)
    )
    lam_act = _lambda_active(dgp, Xo)
    rest1 = _lambda_rest_moment(dgp, 1, quad.nodes, "obs")
    rest2 = _lambda_rest_moment(dgp, 2, quad.nodes, "obs")
    r = dgp.obs_propensity(Xo)
    cond_var = dgp.sigma_y**2 * (1.0 / r + 1.0 / (1.0 - r))
    kappa_sq = (
        np.sum(wo * a**2 * cond_var)
        + 2.0 * rest1 * np.sum(wo * a * lam_act * g * cond_var)
        + rest2 * np.sum(wo * (lam_act * g) ** 2 * cond_var)
    )
    return term_mean + float(kappa_sq)


@dataclass(frozen=True)
class EfficiencyRow:
    rho2: float
    rho2_v_eff: float
    mc_se: float
    sigma: float
    remainder: float  # rho2/(1-rho2) * E1 by quadrature

    @property
    def gap(self) -> float:
        return abs(self.rho2_v_eff - self.sigma)


def efficiency_limit_check(
    dgp: DgpSpec,
    psi: BasisExpansion,
    rho_grid: list[float],
    quad: QuadratureSpec = DEFAULT_QUAD,
    draws: int = 10**6,
    rng: RngStream | np.random.Generator | None = None,
    stratified: bool = True,
) -> list[EfficiencyRow]:
    """Tabulate rho2 * V_eff against the fixed-design asymptotic variance.

    The conditional laws given group membership are held fixed across the
    grid; only the experimental fraction changes, so the scaled bound drifts
    toward the asymptotic variance as the fraction vanishes, with remainder
    rho2/(1-rho2) times the observational second moment.
    """
    gen = (rng or RngStream(0, 0))
    gen = gen.generator() if isinstance(gen, RngStream) else gen
    rows = []
    for rho2 in rho_grid:
        nuis = make_nested_nuisances(dgp, psi, rho2, quad)
        v, se = v_eff_monte_carlo(nuis, psi, draws, gen, stratified=stratified)
        e1 = e1_quadrature(nuis, quad)
        rows.append(
            EfficiencyRow(
                rho2=rho2,
                rho2_v_eff=rho2 * v,
                mc_se=rho2 * se,
                sigma=nuis.sigma,
                remainder=rho2 / (1.0 - rho2) * e1,
            )
        )
    return rows
