"""Shared data model, fold partitioning, basis expansions, RNG streams and
normal-distribution utilities.

Datasets live in two columnar containers (`ExperimentalData`, `ObservationalData`)
that validate on construction; single rows (`ExperimentalSample`,
`ObservationalSample`) exist for the CSV boundary and for building tiny
fixtures by hand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError, SchemaError

__all__ = [
    "ExperimentalSample",
    "ObservationalSample",
    "ExperimentalData",
    "ObservationalData",
    "FoldAssignment",
    "BasisExpansion",
    "RngStream",
    "partition_folds",
    "convert_unpaired",
    "normal_cdf",
    "normal_quantile",
    "make_basis",
    "read_experimental_csv",
    "read_observational_csv",
    "write_experimental_csv",
    "write_observational_csv",
]


# ---------------------------------------------------------------------------
# samples and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentalSample:
    """One experimental row: an effect measurement d and covariates x."""

    d: float
    x: tuple[float, ...]

    def __post_init__(self):
        if not math.isfinite(self.d):
            raise InvalidArgumentError("experimental d must be finite")
        if len(self.x) < 1 or not all(math.isfinite(v) for v in self.x):
            raise InvalidArgumentError("experimental x must be finite with dim >= 1")


@dataclass(frozen=True)
class ObservationalSample:
    """One observational row: outcome y, binary treatment z, covariates x."""

    y: float
    z: int
    x: tuple[float, ...]

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise InvalidArgumentError("observational y must be finite")
        if self.z not in (0, 1):
            raise InvalidArgumentError(f"z must be 0 or 1, got {self.z}")
        if len(self.x) < 1 or not all(math.isfinite(v) for v in self.x):
            raise InvalidArgumentError("observational x must be finite with dim >= 1")


def _as_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be (n, p) with p >= 1")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return x


@dataclass(frozen=True)
class ExperimentalData:
    """Columnar experimental dataset: d (n,) and x (n, p)."""

    d: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _as_matrix(self.x, "x"))
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 1 or d.shape[0] != self.x.shape[0]:
            raise InvalidArgumentError("d must be a vector matching x rows")
        if not np.all(np.isfinite(d)):
            raise InvalidArgumentError("d contains non-finite values")
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_rows(cls, rows: Sequence[ExperimentalSample]) -> "ExperimentalData":
        return cls(
            d=np.array([r.d for r in rows]), x=np.array([r.x for r in rows])
        )

    def rows(self) -> Iterator[ExperimentalSample]:
        for i in range(self.n):
            yield ExperimentalSample(float(self.d[i]), tuple(self.x[i]))


@dataclass(frozen=True)
class ObservationalData:
    """Columnar observational dataset: y (N,), z (N,) in {0,1}, x (N, p)."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _as_matrix(self.x, "x"))
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z)
        if y.ndim != 1 or y.shape[0] != self.x.shape[0]:
            raise InvalidArgumentError("y must be a vector matching x rows")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("y contains non-finite values")
        if z.shape != y.shape or not np.all(np.isin(z, (0, 1))):
            raise InvalidArgumentError("z must be a {0,1} vector matching y")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z.astype(int))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_rows(cls, rows: Sequence[ObservationalSample]) -> "ObservationalData":
        return cls(
            y=np.array([r.y for r in rows]),
            z=np.array([r.z for r in rows]),
            x=np.array([r.x for r in rows]),
        )

    def rows(self) -> Iterator[ObservationalSample]:
        for i in range(self.n):
            yield ObservationalSample(float(self.y[i]), int(self.z[i]), tuple(self.x[i]))


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (master_seed, stream_id).

    Distinct (master_seed, stream_id) pairs give statistically independent
    Philox streams; the same pair always reproduces the same sequence. One
    stream per replication / data-generation role; never share a generator
    across concurrent consumers.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array(
            [self.master_seed % (1 << 64), self.stream_id % (1 << 64)],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def derive(self, offset: int) -> "RngStream":
        """A sibling stream with a deterministic id offset (new role/rep)."""
        return RngStream(self.master_seed, (self.stream_id + offset) % (1 << 64))


def compose_stream_id(scenario: int, replication: int, role: int = 0) -> int:
    """Pack (scenario, replication, role) into one 64-bit stream id."""
    if not (0 <= scenario < (1 << 24) and 0 <= replication < (1 << 32) and 0 <= role < 256):
        raise InvalidArgumentError("stream id component out of range")
    return (scenario << 40) | (replication << 8) | role


# ---------------------------------------------------------------------------
# fold partitioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of {0..n-1} into k folds with sizes differing by at most 1."""

    fold_of: np.ndarray  # (n,) values in {1..k}
    k: int

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=int)
        object.__setattr__(self, "fold_of", fold_of)
        sizes = np.bincount(fold_of, minlength=self.k + 1)[1:]
        if sizes.sum() != fold_of.shape[0] or sizes.min() < 1:
            raise InvalidArgumentError("every index must land in exactly one fold")
        if sizes.max() - sizes.min() > 1:
            raise InvalidArgumentError("fold sizes must differ by at most 1")

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def indices(self, fold: int) -> np.ndarray:
        """Indices assigned to `fold` (1-based fold id)."""
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        """Indices outside `fold` (the fold's training set)."""
        return np.flatnonzero(self.fold_of != fold)


def partition_folds(n_obs: int, k: int, rng: RngStream | np.random.Generator) -> FoldAssignment:
    """Partition {0..n_obs-1} into k folds, randomly and as evenly as possible.

    A uniform shuffle followed by round-robin assignment, so fold sizes differ
    by at most one and the partition is deterministic given (n_obs, k, stream).
    """
    if k < 1 or k > n_obs:
        raise InvalidArgumentError(f"need 1 <= k <= n_obs, got k={k}, n_obs={n_obs}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    perm = gen.permutation(n_obs)
    fold_of = np.empty(n_obs, dtype=int)
    fold_of[perm] = np.arange(n_obs) % k + 1
    return FoldAssignment(fold_of=fold_of, k=k)


# ---------------------------------------------------------------------------
# paired conversion and normal utilities
# ---------------------------------------------------------------------------


def convert_unpaired(y: float, z: int, e: float) -> float:
    """Convert an unpaired (y, z) outcome into an effect measurement.

    Returns z*y/e - (1-z)*y/(1-e) for a known treatment probability e.
    """
    if not (0.0 < e < 1.0):
        raise InvalidArgumentError(f"e must lie in (0,1), got {e}")
    if z not in (0, 1):
        raise InvalidArgumentError(f"z must be 0 or 1, got {z}")
    return z * y / e - (1 - z) * y / (1 - e)


_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


# Rational approximation for the inverse normal CDF (Acklam), |error| < 1.2e-9
# before refinement.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF with absolute error below 1e-9.

    Acklam's rational approximation refined by one Halley step on the exact
    CDF (via erfc), which brings the error near machine precision.
    """
    if not (0.0 < p < 1.0):
        raise InvalidArgumentError(f"p must lie in (0,1), got {p}")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # one Halley refinement on Phi(x) - p
    e = normal_cdf(x) - p
    u = e * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# ---------------------------------------------------------------------------
# basis expansions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasisExpansion:
    """A basis delta -> R^p with an intercept in the first coordinate.

    `eval` is vectorized over numpy arrays; `eval_dot` is the elementwise
    derivative (needed by the influence-function code, which rejects bases
    without one).
    """

    p: int
    eval: Callable[[np.ndarray], np.ndarray]
    eval_dot: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    def __call__(self, delta) -> np.ndarray:
        delta = np.asarray(delta, dtype=float)
        out = self.eval(np.atleast_1d(delta))
        return out if delta.ndim else out[0]


def make_basis(name: str = "poly1") -> BasisExpansion:
    """Polynomial bases: poly1 = (1, d), poly2 = (1, d, d^2), poly3 adds d^3."""
    degrees = {"poly1": 1, "poly2": 2, "poly3": 3}
    if name not in degrees:
        raise InvalidArgumentError(f"unknown basis {name!r}; choose from {sorted(degrees)}")
    deg = degrees[name]

    def ev(d: np.ndarray) -> np.ndarray:
        return np.column_stack([d**j for j in range(deg + 1)])

    def ev_dot(d: np.ndarray) -> np.ndarray:
        return np.column_stack([j * d ** max(j - 1, 0) for j in range(deg + 1)])

    return BasisExpansion(p=deg + 1, eval=ev, eval_dot=ev_dot, name=name)


# ---------------------------------------------------------------------------
# CSV schemas
# ---------------------------------------------------------------------------
#
# experimental file:   d,x1,...,xp
# observational file:  y,z,x1,...,xp
# Numeric fields only, '.' decimal separator, header required. Rows with
# missing or non-numeric fields are rejected outright.


def _parse_float(token: str, row: int, col: str, path: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise SchemaError(f"{path}: row {row}, column {col!r}: not numeric: {token!r}") from None
    if not math.isfinite(v):
        raise SchemaError(f"{path}: row {row}, column {col!r}: non-finite value {token!r}")
    return v


def _x_header(p: int) -> list[str]:
    return [f"x{j}" for j in range(1, p + 1)]


def read_experimental_csv(path: str) -> ExperimentalData:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "d" or header[1:] != _x_header(len(header) - 1):
            raise SchemaError(f"{path}: expected header d,x1,...,xp, got {','.join(header)}")
        d, x = [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}: row {row_no}: expected {len(header)} fields, got {len(row)}")
            d.append(_parse_float(row[0], row_no, "d", path))
            x.append([_parse_float(v, row_no, h, path) for v, h in zip(row[1:], header[1:])])
    if not d:
        raise SchemaError(f"{path}: no data rows")
    return ExperimentalData(d=np.array(d), x=np.array(x))


def read_observational_csv(path: str) -> ObservationalData:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[:2] != ["y", "z"] or header[2:] != _x_header(len(header) - 2):
            raise SchemaError(f"{path}: expected header y,z,x1,...,xp, got {','.join(header)}")
        y, z, x = [], [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}: row {row_no}: expected {len(header)} fields, got {len(row)}")
            y.append(_parse_float(row[0], row_no, "y", path))
            zv = _parse_float(row[1], row_no, "z", path)
            if zv not in (0.0, 1.0):
                raise SchemaError(f"{path}: row {row_no}, column 'z': must be 0 or 1, got {row[1]!r}")
            z.append(int(zv))
            x.append([_parse_float(v, row_no, h, path) for v, h in zip(row[2:], header[2:])])
    if not y:
        raise SchemaError(f"{path}: no data rows")
    return ObservationalData(y=np.array(y), z=np.array(z), x=np.array(x))


def write_experimental_csv(path: str, data: ExperimentalData) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d"] + _x_header(data.p_x))
        for i in range(data.n):
            writer.writerow([repr(float(data.d[i]))] + [repr(float(v)) for v in data.x[i]])


def write_observational_csv(path: str, data: ObservationalData) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "z"] + _x_header(data.p_x))
        for i in range(data.n):
            writer.writerow(
                [repr(float(data.y[i])), str(int(data.z[i]))]
                + [repr(float(v)) for v in data.x[i]]
            )
