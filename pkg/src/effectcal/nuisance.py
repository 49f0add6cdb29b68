"""Pluggable nuisance learners.

Includes the cross-fit treatment-control contrast (arm-wise kernel, k-NN or
polynomial-ridge learners plus a closed-form oracle for simulations), a
ridge-with-GCV effect-function learner with prognostic adjustment, logistic
odds models fit by Newton/IRLS, and a Gaussian-kernel univariate smoother.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import FoldAssignment, ObservationalData, ExperimentalData, RngStream, partition_folds
from .errors import (
    DegenerateArmError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericalRankError,
)
from .oracle import DgpSpec

__all__ = [
    "ContrastLearnerSpec",
    "ContrastFit",
    "CateFit",
    "OddsFit",
    "SmootherFit",
    "parse_contrast_learner",
    "fit_contrast_crossfit",
    "fit_cate",
    "fit_odds",
    "fit_smoother",
    "poly_features",
]


# ---------------------------------------------------------------------------
# ridge regression with generalized cross-validation
# ---------------------------------------------------------------------------

_GCV_GRID = np.logspace(-8.0, 8.0, 33)


@dataclass(frozen=True)
class _RidgeModel:
    keep: np.ndarray          # column indices kept (nonzero variance)
    center: np.ndarray
    scale: np.ndarray
    coef_std: np.ndarray      # coefficients in standardized space
    intercept_std: float      # mean of the response
    penalty: float

    def predict(self, feats: np.ndarray) -> np.ndarray:
        z = (feats[:, self.keep] - self.center) / self.scale
        return self.intercept_std + z @ self.coef_std


def _ridge_gcv(feats: np.ndarray, y: np.ndarray, penalty: float | None) -> _RidgeModel:
    """Ridge fit with an unpenalized intercept on standardized features.

    penalty=None selects the penalty by generalized cross-validation over a
    fixed log grid. Zero-variance columns are dropped (their coefficient is
    zero by symmetry).
    """
    n = y.shape[0]
    sd = feats.std(axis=0)
    keep = np.flatnonzero(sd > 0)
    ybar = float(y.mean())
    if keep.size == 0:
        return _RidgeModel(keep, np.empty(0), np.empty(0), np.empty(0), ybar, 0.0)
    center = feats[:, keep].mean(axis=0)
    scale = sd[keep]
    z = (feats[:, keep] - center) / scale
    yc = y - ybar
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    if penalty is not None and penalty <= 0 and s.size and s[-1] <= 1e-14 * s[0]:
        raise NumericalRankError("feature matrix is rank deficient and the ridge floor is zero")
    uty = u.T @ yc
    yc_sq = float(yc @ yc)
    if penalty is None:
        best = (math.inf, _GCV_GRID[0])
        for lam in _GCV_GRID:
            d = s**2 / (s**2 + lam)
            rss = yc_sq - float(np.sum((2 * d - d**2) * uty**2))
            df = float(np.sum(d)) + 1.0
            if df >= n:
                continue
            gcv = n * rss / (n - df) ** 2
            if gcv < best[0]:
                best = (gcv, lam)
        penalty = best[1]
    denom = s**2 + penalty
    if np.any(denom <= 0) or (s[0] ** 2 + penalty) / max(denom.min(), 1e-300) > 1e14:
        raise NumericalRankError("ridge system numerically singular at the chosen penalty")
    coef = vt.T @ (s / denom * uty)
    return _RidgeModel(keep, center, scale, coef, ybar, float(penalty))


def poly_features(x: np.ndarray, degree: int) -> np.ndarray:
    """All monomials of the columns of x with total degree 1..degree."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = []
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(x.shape[1]), deg):
            cols.append(np.prod(x[:, combo], axis=1))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# treatment-control contrast with cross-fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContrastLearnerSpec:
    """Which arm-wise learner estimates the observational contrast.

    kind: 'oracle' (closed form from a DGP spec), 'kernel_t' (Gaussian-kernel
    regression per arm, univariate covariate), 'knn_t' (k-nearest-neighbour
    regression per arm), or 'ridge_poly' with a polynomial degree.
    """

    kind: str
    degree: int | None = None
    dgp: DgpSpec | None = None

    @property
    def tag(self) -> str:
        return f"ridge_poly{self.degree}" if self.kind == "ridge_poly" else self.kind


def parse_contrast_learner(name: str, dgp: DgpSpec | None = None) -> ContrastLearnerSpec:
    if name == "oracle":
        if dgp is None:
            raise InvalidArgumentError("oracle contrast learner needs a DGP spec")
        return ContrastLearnerSpec(kind="oracle", dgp=dgp)
    if name in ("kernel_t", "knn_t"):
        return ContrastLearnerSpec(kind=name)
    if name.startswith("ridge_poly"):
        try:
            degree = int(name[len("ridge_poly"):])
        except ValueError:
            raise InvalidArgumentError(f"bad ridge_poly degree in {name!r}") from None
        if degree < 1:
            raise InvalidArgumentError("ridge_poly degree must be >= 1")
        return ContrastLearnerSpec(kind="ridge_poly", degree=degree)
    raise InvalidArgumentError(
        f"unknown contrast learner {name!r}; use oracle | kernel_t | knn_t | ridge_poly<d>"
    )


@dataclass(frozen=True)
class ContrastFit:
    """Cross-fit contrast estimates: one function per fold plus their average.

    per_fold[k-1] was trained on the observational rows outside fold k (the
    exact training index sets are recorded in train_rows so leakage is
    checkable).
    """

    per_fold: tuple[Callable[[np.ndarray], np.ndarray], ...]
    learner_tag: str
    n_obs: int
    train_rows: tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.per_fold)

    def averaged(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros(x.shape[0])
        for f in self.per_fold:
            total += f(x)
        return total / self.k

    def out_of_fold(self, x: np.ndarray, folds: FoldAssignment) -> np.ndarray:
        """Per-row predictions using each row's own held-out-fold function."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if folds.n != x.shape[0] or folds.n != self.n_obs or folds.k != self.k:
            raise InvalidArgumentError("fold assignment does not match this contrast fit")
        out = np.empty(x.shape[0])
        for fold in range(1, self.k + 1):
            idx = folds.indices(fold)
            out[idx] = self.per_fold[fold - 1](x[idx])
        return out


def _fit_arm_kernel(x: np.ndarray, y: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    if x.shape[1] != 1:
        raise InvalidArgumentError("kernel_t contrast learner needs a univariate covariate")
    sm = fit_smoother(x[:, 0], y)
    return lambda q: sm.predict(q[:, 0])


def _fit_arm_knn(x: np.ndarray, y: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    k = max(1, math.ceil(x.shape[0] ** 0.4))
    tree = cKDTree(x)
    y = y.copy()

    def predict(q: np.ndarray) -> np.ndarray:
        _, idx = tree.query(q, k=k)
        if k == 1:
            idx = idx[:, None]
        return y[idx].mean(axis=1)

    return predict


def _fit_arm_ridge(x: np.ndarray, y: np.ndarray, degree: int) -> Callable[[np.ndarray], np.ndarray]:
    model = _ridge_gcv(poly_features(x, degree), y, penalty=None)
    return lambda q: model.predict(poly_features(q, degree))


def fit_contrast_crossfit(
    obs: ObservationalData,
    folds: FoldAssignment,
    learner: ContrastLearnerSpec,
) -> ContrastFit:
    """Cross-fit the observational treatment-control contrast.

    For each fold the learner is trained arm-by-arm on the rows outside the
    fold; the returned fit also exposes the plain average of the per-fold
    functions for use on experimental covariates.
    """
    if folds.n != obs.n:
        raise InvalidArgumentError("fold assignment does not match the dataset")
    fns: list[Callable[[np.ndarray], np.ndarray]] = []
    train_rows: list[np.ndarray] = []
    for fold in range(1, folds.k + 1):
        rows = folds.complement(fold) if folds.k > 1 else np.arange(obs.n)
        train_rows.append(rows)
        if learner.kind == "oracle":
            fns.append(learner.dgp.contrast)
            continue
        x, y, z = obs.x[rows], obs.y[rows], obs.z[rows]
        n1, n0 = int(z.sum()), int((1 - z).sum())
        if n1 < 2 or n0 < 2:
            raise DegenerateArmError(
                f"training set for fold {fold} has {n1} treated / {n0} control rows; "
                "need at least 2 of each"
            )
        if learner.kind == "kernel_t":
            f1, f0 = _fit_arm_kernel(x[z == 1], y[z == 1]), _fit_arm_kernel(x[z == 0], y[z == 0])
        elif learner.kind == "knn_t":
            f1, f0 = _fit_arm_knn(x[z == 1], y[z == 1]), _fit_arm_knn(x[z == 0], y[z == 0])
        elif learner.kind == "ridge_poly":
            f1 = _fit_arm_ridge(x[z == 1], y[z == 1], learner.degree)
            f0 = _fit_arm_ridge(x[z == 0], y[z == 0], learner.degree)
        else:  # pragma: no cover - parse_contrast_learner guards this
            raise InvalidArgumentError(f"unknown learner kind {learner.kind!r}")
        fns.append(lambda q, f1=f1, f0=f0: f1(np.atleast_2d(q)) - f0(np.atleast_2d(q)))
    return ContrastFit(
        per_fold=tuple(fns),
        learner_tag=learner.tag,
        n_obs=obs.n,
        train_rows=tuple(train_rows),
    )


# ---------------------------------------------------------------------------
# effect-function learner (prognostic-adjusted ridge)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CateFit:
    """Ridge fit of the effect measurements on (x, contrast(x)) features.

    `exp_predictions` are the cross-fit (out-of-fold) predictions on the
    experimental rows themselves when folds_exp > 1, in-sample otherwise;
    `predict` averages the per-fold models at new covariates.
    """

    models: tuple[_RidgeModel, ...]
    contrast: ContrastFit
    exp_predictions: np.ndarray
    folds_exp: int
    learner_tag: str = "ridge_gcv"

    def _features(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.column_stack([x, self.contrast.averaged(x)])

    def predict(self, x: np.ndarray) -> np.ndarray:
        feats = self._features(x)
        total = np.zeros(feats.shape[0])
        for m in self.models:
            total += m.predict(feats)
        return total / len(self.models)


def fit_cate(
    exp: ExperimentalData,
    contrast: ContrastFit,
    folds_exp: int = 5,
    penalty: float | None = None,
    rng: RngStream | np.random.Generator = RngStream(0),
) -> CateFit:
    """Learn the effect function from the experimental rows.

    Features are the covariates augmented with the averaged contrast estimate;
    the ridge penalty comes from GCV unless given. folds_exp > 1 cross-fits
    the predictions on the experimental rows themselves.
    """
    if exp.n < 1:
        raise InsufficientDataError("no experimental rows")
    feats = np.column_stack([exp.x, contrast.averaged(exp.x)])
    if folds_exp <= 1 or folds_exp > exp.n:
        model = _ridge_gcv(feats, exp.d, penalty)
        return CateFit(
            models=(model,),
            contrast=contrast,
            exp_predictions=model.predict(feats),
            folds_exp=1,
        )
    folds = partition_folds(exp.n, folds_exp, rng)
    preds = np.empty(exp.n)
    models = []
    for fold in range(1, folds_exp + 1):
        rows = folds.complement(fold)
        model = _ridge_gcv(feats[rows], exp.d[rows], penalty)
        models.append(model)
        idx = folds.indices(fold)
        preds[idx] = model.predict(feats[idx])
    return CateFit(
        models=tuple(models),
        contrast=contrast,
        exp_predictions=preds,
        folds_exp=folds_exp,
    )


# ---------------------------------------------------------------------------
# logistic odds models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OddsFit:
    """Logistic model for membership odds, with clipped probabilities.

    `coefficients[0]` is the intercept. `prob` returns the (clipped)
    probability of the *experimental* class; `odds` returns the odds of being
    observational, (1-p)/p. An optional feature map lets callers evaluate from
    raw covariates.
    """

    coefficients: np.ndarray
    prob_clip: float
    converged: bool
    n_iter: int
    separation: bool
    feature_fn: Callable[[np.ndarray], np.ndarray] | None = None
    feature_tag: str = "identity"

    def linear(self, features: np.ndarray) -> np.ndarray:
        f = np.atleast_2d(np.asarray(features, dtype=float))
        return self.coefficients[0] + f @ self.coefficients[1:]

    def raw_prob(self, features: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-np.clip(self.linear(features), -700, 700)))

    def prob(self, features: np.ndarray) -> np.ndarray:
        return np.clip(self.raw_prob(features), self.prob_clip, 1.0 - self.prob_clip)

    def clip_count(self, features: np.ndarray) -> int:
        p = self.raw_prob(features)
        return int(np.sum((p < self.prob_clip) | (p > 1.0 - self.prob_clip)))

    def odds(self, features: np.ndarray) -> np.ndarray:
        p = self.prob(features)
        return (1.0 - p) / p

    def odds_of(self, x: np.ndarray) -> np.ndarray:
        if self.feature_fn is None:
            raise InvalidArgumentError("this odds fit has no feature map attached")
        return self.odds(self.feature_fn(x))


def fit_odds(
    features: np.ndarray,
    is_experimental: np.ndarray,
    clip: float = 1e-6,
    feature_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    feature_tag: str = "identity",
) -> OddsFit:
    """Penalized logistic regression by Newton/IRLS.

    Log-likelihood with a 1e-6 ridge on the non-intercept coefficients, at
    most 100 iterations, gradient-norm tolerance 1e-8, and step halving when
    a Newton step fails to improve the objective. Perfect separation is
    flagged (any |coefficient| > 30 at the convergence check) but the fit is
    still returned; clipping keeps the odds finite.
    """
    f = np.atleast_2d(np.asarray(features, dtype=float))
    if f.shape[0] != np.asarray(is_experimental).shape[0]:
        raise InvalidArgumentError("features and labels disagree on length")
    y = np.asarray(is_experimental, dtype=float)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise InvalidArgumentError("is_experimental must be binary")
    if y.sum() == 0 or y.sum() == y.shape[0]:
        raise InvalidArgumentError("both classes must be present")
    if not (0.0 < clip < 0.5):
        raise InvalidArgumentError("clip must lie in (0, 0.5)")
    m = f.shape[0]
    X = np.column_stack([np.ones(m), f])
    pen = 1e-6
    J = np.ones(X.shape[1])
    J[0] = 0.0
    b = np.zeros(X.shape[1])

    def objective(beta):
        eta = np.clip(X @ beta, -700, 700)
        # negative log-likelihood, numerically stable form
        nll = np.sum(np.logaddexp(0.0, eta) - y * eta)
        return nll + 0.5 * pen * float(np.sum(J * beta**2))

    converged = False
    it = 0
    for it in range(1, 101):
        eta = np.clip(X @ b, -700, 700)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p) - pen * J * b
        if np.max(np.abs(grad)) < 1e-8:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-12)
        hess = (X.T * w) @ X + pen * np.diag(J)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        obj0 = objective(b)
        scale = 1.0
        for _ in range(30):
            cand = b + scale * step
            if objective(cand) <= obj0 + 1e-15:
                break
            scale *= 0.5
        b = b + scale * step
    separation = bool(np.any(np.abs(b) > 30.0))
    return OddsFit(
        coefficients=b,
        prob_clip=clip,
        converged=converged,
        n_iter=it,
        separation=separation,
        feature_fn=feature_fn,
        feature_tag=feature_tag,
    )


# ---------------------------------------------------------------------------
# univariate kernel smoother
# ---------------------------------------------------------------------------

_NUMBA_NW = None


def _numba_nw():
    """Compile the batch kernel on first use; fall back to numpy if unavailable."""
    global _NUMBA_NW
    if _NUMBA_NW is not None:
        return _NUMBA_NW
    try:
        import numba

        numba.config.THREADING_LAYER = "workqueue"

        @numba.njit(parallel=True, fastmath=False)
        def kernel(q, u, v, h):  # pragma: no cover - exercised via predict
            nq = q.shape[0]
            m = u.shape[0]
            out = np.empty(nq)
            inv = 1.0 / h
            for i in numba.prange(nq):
                num = 0.0
                den = 0.0
                for j in range(m):
                    z = (q[i] - u[j]) * inv
                    w = np.exp(-0.5 * z * z)
                    num += w * v[j]
                    den += w
                if den > 0.0:
                    out[i] = num / den
                else:
                    # every weight underflowed: rescale by the largest one
                    zmin = 1e300
                    for j in range(m):
                        z = (q[i] - u[j]) * inv
                        z2 = z * z
                        if z2 < zmin:
                            zmin = z2
                    for j in range(m):
                        z = (q[i] - u[j]) * inv
                        w = np.exp(-0.5 * (z * z - zmin))
                        num += w * v[j]
                        den += w
                    out[i] = num / den
            return out

        kernel(np.zeros(1), np.zeros(2), np.zeros(2), 1.0)
        _NUMBA_NW = kernel
    except Exception:
        _NUMBA_NW = False
    return _NUMBA_NW


def _nw_numpy(q: np.ndarray, u: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty(q.shape[0])
    inv = 1.0 / h
    chunk = max(1, int(2**22 // max(u.shape[0], 1)))
    for start in range(0, q.shape[0], chunk):
        z = (q[start:start + chunk, None] - u[None, :]) * inv
        np.multiply(z, z, out=z)
        z *= -0.5
        z -= z.max(axis=1, keepdims=True)
        np.exp(z, out=z)
        out[start:start + chunk] = (z @ v) / z.sum(axis=1)
    return out


@dataclass(frozen=True)
class SmootherFit:
    """Gaussian-kernel regression of v on u with a fixed plug-in bandwidth.

    Predictions are convex combinations of the training v values, so they stay
    inside [min(v), max(v)]. A degenerate fit (constant u) predicts mean(v).
    """

    u: np.ndarray
    v: np.ndarray
    bandwidth: float
    degenerate: bool

    def predict(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.degenerate:
            return np.full(q.shape[0], float(self.v.mean()))
        kernel = _numba_nw()
        if kernel:
            return kernel(
                np.ascontiguousarray(q),
                np.ascontiguousarray(self.u),
                np.ascontiguousarray(self.v),
                self.bandwidth,
            )
        return _nw_numpy(q, self.u, self.v, self.bandwidth)


def fit_smoother(u: np.ndarray, v: np.ndarray) -> SmootherFit:
    """Kernel smoother with Silverman's rule bandwidth 1.06 sd(u) m^(-1/5)."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape[0] != v.shape[0]:
        raise InvalidArgumentError("u and v must have equal length")
    if u.shape[0] < 5:
        raise InvalidArgumentError("smoother needs at least 5 pairs")
    sd = float(u.std(ddof=1))
    if sd == 0.0:
        return SmootherFit(u=u, v=v, bandwidth=0.0, degenerate=True)
    h = 1.06 * sd * u.shape[0] ** (-0.2)
    return SmootherFit(u=u, v=v, bandwidth=h, degenerate=False)
