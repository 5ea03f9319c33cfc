"""Gaussian exponential-family algebra in natural parameters.

Everything downstream (EP updates, forgetting dynamics, scoring) is built on
Gaussians stored as ``(precision, precision_mean)`` rather than moments:
multiplication and division of densities are then just addition and
subtraction of parameters, and an improper "uniform" factor is the zero
vector.  Moment access goes through Cholesky solves and raises on
non-positive-definite precision instead of silently producing garbage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Numerical guard rails: variances are floored and precisions are ceilinged.
# Clamping rescales (precision, precision_mean) together so means survive.
VARIANCE_FLOOR = 1e-10
PRECISION_CEILING = 1e10


class GaussianError(ValueError):
    """Base class for Gaussian-algebra failures."""


class ImproperGaussianError(GaussianError):
    """Moments were requested from a Gaussian with non-PD precision."""


class NotPositiveDefiniteError(GaussianError):
    """A matrix that must be positive definite is not.

    Raised by ``mgf_bilinear`` when the tilted bilinear integral diverges
    (precision minus partner covariance loses positive definiteness) and by
    ``project_mixture`` when the moment-matched covariance degenerates.
    """


def _expit(x):
    # scipy.special.expit without the import cost in hot paths
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True, eq=False)
class Gaussian1D:
    """Scalar Gaussian in natural parameters.

    ``precision == 0`` encodes the uniform (fully improper) factor, which is
    a legal message but has no moments.
    """

    precision: float
    precision_mean: float

    @classmethod
    def from_moments(cls, mean: float, variance: float) -> "Gaussian1D":
        if variance <= 0.0:
            raise ImproperGaussianError(f"variance must be > 0, got {variance}")
        p = 1.0 / variance
        return cls(precision=p, precision_mean=p * mean)

    @classmethod
    def uniform(cls) -> "Gaussian1D":
        return cls(0.0, 0.0)

    @property
    def is_proper(self) -> bool:
        return self.precision > 0.0

    @property
    def mean(self) -> float:
        if not self.is_proper:
            raise ImproperGaussianError("improper Gaussian1D has no mean")
        return self.precision_mean / self.precision

    @property
    def variance(self) -> float:
        if not self.is_proper:
            raise ImproperGaussianError("improper Gaussian1D has no variance")
        return 1.0 / self.precision

    def __repr__(self) -> str:  # moments are what you want when debugging
        if self.is_proper:
            return f"Gaussian1D(mean={self.mean:.6g}, var={self.variance:.6g})"
        return f"Gaussian1D(precision={self.precision:.6g}, improper)"


@dataclass(frozen=True, eq=False)
class GaussianD:
    """d-dimensional Gaussian in natural parameters (precision, precision@mean)."""

    precision: np.ndarray
    precision_mean: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.precision, dtype=float)
        pm = np.asarray(self.precision_mean, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise GaussianError(f"precision must be square, got shape {P.shape}")
        if pm.shape != (P.shape[0],):
            raise GaussianError(
                f"precision_mean shape {pm.shape} does not match dim {P.shape[0]}"
            )
        object.__setattr__(self, "precision", P)
        object.__setattr__(self, "precision_mean", pm)

    @classmethod
    def from_moments(cls, mean, cov) -> "GaussianD":
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ImproperGaussianError(f"covariance not PD: {exc}") from exc
        eye = np.eye(len(mean))
        cov_inv = np.linalg.solve(L.T, np.linalg.solve(L, eye))
        cov_inv = 0.5 * (cov_inv + cov_inv.T)
        return cls(precision=cov_inv, precision_mean=cov_inv @ mean)

    @classmethod
    def uniform(cls, dim: int) -> "GaussianD":
        return cls(np.zeros((dim, dim)), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    def _chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.precision)
        except np.linalg.LinAlgError as exc:
            raise ImproperGaussianError(f"precision not PD: {exc}") from exc

    @property
    def is_proper(self) -> bool:
        try:
            self._chol()
            return True
        except ImproperGaussianError:
            return False

    @property
    def mean(self) -> np.ndarray:
        L = self._chol()
        return np.linalg.solve(L.T, np.linalg.solve(L, self.precision_mean))

    @property
    def cov(self) -> np.ndarray:
        L = self._chol()
        eye = np.eye(self.dim)
        S = np.linalg.solve(L.T, np.linalg.solve(L, eye))
        return 0.5 * (S + S.T)

    def __repr__(self) -> str:
        if self.is_proper:
            return f"GaussianD(dim={self.dim}, mean={np.array2string(self.mean, precision=4)})"
        return f"GaussianD(dim={self.dim}, improper)"


@dataclass(frozen=True, eq=False)
class Mixture2:
    """Two-component Gaussian mixture ``base + c * shifted`` (c in log space).

    This is the tilted-distribution form produced by a single +/-1 logistic
    observation under the exponential lower-bound trick: the cavity Gaussian
    plus a mean-shifted Gaussian weighted by c.  ``log_weight`` may be any
    real (or -inf for "no shifted mass").
    """

    base: "Gaussian1D | GaussianD"
    shifted: "Gaussian1D | GaussianD"
    log_weight: float


# ---------------------------------------------------------------------------
# density arithmetic


def multiply(a, b):
    """Product of two Gaussian factors of matching kind/dimension."""
    if isinstance(a, Gaussian1D) and isinstance(b, Gaussian1D):
        return Gaussian1D(a.precision + b.precision, a.precision_mean + b.precision_mean)
    if isinstance(a, GaussianD) and isinstance(b, GaussianD):
        if a.dim != b.dim:
            raise GaussianError(f"dimension mismatch: {a.dim} vs {b.dim}")
        return GaussianD(a.precision + b.precision, a.precision_mean + b.precision_mean)
    raise GaussianError(f"cannot multiply {type(a).__name__} with {type(b).__name__}")


def divide(a, b):
    """Ratio a/b of Gaussian factors; the result may be improper (that is fine
    for cavity computations, the caller decides whether moments are needed)."""
    if isinstance(a, Gaussian1D) and isinstance(b, Gaussian1D):
        return Gaussian1D(a.precision - b.precision, a.precision_mean - b.precision_mean)
    if isinstance(a, GaussianD) and isinstance(b, GaussianD):
        if a.dim != b.dim:
            raise GaussianError(f"dimension mismatch: {a.dim} vs {b.dim}")
        return GaussianD(a.precision - b.precision, a.precision_mean - b.precision_mean)
    raise GaussianError(f"cannot divide {type(a).__name__} by {type(b).__name__}")


# ---------------------------------------------------------------------------
# moment-generating-function pieces for a +/-1 logistic observation


def mgf_scalar(g: Gaussian1D, y: int) -> float:
    """log E[exp(-y * theta)] for theta ~ g and y in {-1, +1}.

    Equals ``-y*mean + variance/2``; diverges only if g is improper.
    """
    if y not in (-1, 1):
        raise GaussianError(f"y must be +/-1, got {y}")
    if not g.is_proper:
        raise ImproperGaussianError("mgf_scalar needs a proper Gaussian")
    m = g.mean
    return -y * m + 0.5 * g.variance


def mgf_bilinear(gu: GaussianD, gv: GaussianD, y: int) -> float:
    """log E[exp(-y * u.v)] for independent u ~ gu, v ~ gv, y in {-1, +1}.

    Integrating out v then u gives

        -1/2 logdet(Pv - Su) + 1/2 logdet(Pv) - 1/2 mv.pmv + 1/2 h.(Pv - Su)^-1 h

    with h = pmv - y*mu and Su = cov(u).  The integral exists iff
    ``Pv - Su`` is PD, which is symmetric in (u, v) because it is equivalent
    to the spectral radius of Su@Sv being < 1.
    """
    if y not in (-1, 1):
        raise GaussianError(f"y must be +/-1, got {y}")
    if gu.dim != gv.dim:
        raise GaussianError(f"dimension mismatch: {gu.dim} vs {gv.dim}")
    Su = gu.cov  # raises ImproperGaussianError if gu is not proper
    mu = gu.mean
    Pv = gv.precision
    pmv = gv.precision_mean
    Lv = gv._chol()

    A = Pv - Su
    try:
        La = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "bilinear MGF diverges: precision minus partner covariance is not PD"
        ) from exc

    h = pmv - y * mu
    x = np.linalg.solve(La, h)
    logdet_A = 2.0 * float(np.sum(np.log(np.diag(La))))
    logdet_Pv = 2.0 * float(np.sum(np.log(np.diag(Lv))))
    mv = np.linalg.solve(Lv.T, np.linalg.solve(Lv, pmv))
    return -0.5 * logdet_A + 0.5 * logdet_Pv - 0.5 * float(mv @ pmv) + 0.5 * float(x @ x)


# ---------------------------------------------------------------------------
# mixture projection (moment matching) and the logistic-Gaussian expectation


def _log_weights(log_c: float) -> tuple[float, float]:
    """Normalized weights (w_base, w_shifted) of ``base + exp(log_c)*shifted``."""
    if math.isnan(log_c):
        raise GaussianError("mixture log-weight is NaN")
    if log_c == math.inf:
        return 0.0, 1.0
    if log_c == -math.inf:
        return 1.0, 0.0
    w_shift = float(_expit(log_c))
    return 1.0 - w_shift, w_shift


def project_mixture(mix: Mixture2):
    """Moment-match a two-component mixture back to a single Gaussian.

    Works for both scalar and d-dimensional components; both components must
    be proper.  Raises ``NotPositiveDefiniteError`` if the matched covariance
    degenerates (possible only through numerical cancellation).
    """
    b, s = mix.base, mix.shifted
    if type(b) is not type(s):
        raise GaussianError("mixture components must have matching kind")
    w1, w2 = _log_weights(mix.log_weight)

    if isinstance(b, Gaussian1D):
        m1, v1 = b.mean, b.variance  # raises if improper
        m2, v2 = s.mean, s.variance
        m = w1 * m1 + w2 * m2
        v = w1 * (v1 + (m1 - m) ** 2) + w2 * (v2 + (m2 - m) ** 2)
        if v <= 0.0 or not math.isfinite(v):
            raise NotPositiveDefiniteError(f"projected variance degenerate: {v}")
        return Gaussian1D.from_moments(m, v)

    if b.dim != s.dim:
        raise GaussianError(f"dimension mismatch: {b.dim} vs {s.dim}")
    m1, S1 = b.mean, b.cov
    m2, S2 = s.mean, s.cov
    m = w1 * m1 + w2 * m2
    d1 = m1 - m
    d2 = m2 - m
    S = w1 * (S1 + np.outer(d1, d1)) + w2 * (S2 + np.outer(d2, d2))
    try:
        return GaussianD.from_moments(m, S)
    except ImproperGaussianError as exc:
        raise NotPositiveDefiniteError(f"projected covariance degenerate: {exc}") from exc


def expit_gauss(mean, variance):
    """E[sigmoid(x)] for x ~ N(mean, variance), probit-style approximation.

    Uses ``sigmoid(mean / sqrt(1 + pi*variance/8))``; exact at variance 0,
    within ~0.02 absolute elsewhere.  Accepts scalars or arrays and
    broadcasts; variance must be >= 0.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0.0):
        raise GaussianError("negative variance passed to expit_gauss")
    out = _expit(mean / np.sqrt(1.0 + (math.pi / 8.0) * variance))
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# numerical guards


def clamp(g):
    """Clamp a Gaussian's scale into [VARIANCE_FLOOR, 1/VARIANCE_FLOOR].

    Rescales precision and precision_mean together, so the mean is exactly
    preserved while the variance is pushed inside the legal band.  Returns
    ``(clamped, changed)``.  Multivariate clamping acts on the eigenvalue
    range of the precision via uniform rescaling (cheap, mean-preserving).
    """
    if isinstance(g, Gaussian1D):
        p = g.precision
        if p > PRECISION_CEILING:
            f = PRECISION_CEILING / p
            return Gaussian1D(PRECISION_CEILING, g.precision_mean * f), True
        if 0.0 < p < 1.0 / PRECISION_CEILING:
            f = (1.0 / PRECISION_CEILING) / p
            return Gaussian1D(1.0 / PRECISION_CEILING, g.precision_mean * f), True
        return g, False

    if isinstance(g, GaussianD):
        if not g.is_proper:
            return g, False
        ev = np.linalg.eigvalsh(g.precision)
        hi, lo = float(ev[-1]), float(ev[0])
        if hi > PRECISION_CEILING:
            f = PRECISION_CEILING / hi
            return GaussianD(g.precision * f, g.precision_mean * f), True
        if lo < 1.0 / PRECISION_CEILING:
            f = (1.0 / PRECISION_CEILING) / lo
            return GaussianD(g.precision * f, g.precision_mean * f), True
        return g, False

    raise GaussianError(f"cannot clamp {type(g).__name__}")
