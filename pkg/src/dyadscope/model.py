"""Model state, priors, and the logit mean function.

The observation model for a directed dyad (i, j) in one time bucket is

    P(y_ij = 1) = sigmoid(psi_ij),   psi_ij = mu + offset + alpha_i + beta_j + u_i . v_j

with independent Gaussian beliefs over mu (baseline rate), alpha/beta
(sender/receiver popularity), and u/v (latent positions).  ``offset`` is a
deterministic periodicity shift (time-of-day/day-of-week), not a parameter.

Beliefs are stored array-backed in natural parameters so the fitter can run
over flat buffers; `Gaussian1D`/`GaussianD` views are materialized on access.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gaussians import (
    Gaussian1D,
    GaussianD,
    GaussianError,
    expit_gauss,
)

MAX_LATENT_DIM = 8  # beyond this the closed-form updates stop being cheap


class ConfigError(ValueError):
    """A ModelConfig or sampling policy fails validation."""


@dataclass(frozen=True)
class SamplingPolicy:
    """How non-edges are subsampled for fitting (case-control scheme).

    mode:
      * ``"full"``        — every non-edge becomes a factor (q = 1).
      * ``"proportion"``  — a fixed proportion q of non-edges, drawn uniformly
                            without replacement, fresh each period.
      * ``"count"``       — a fixed target count of non-edges.
      * ``"edge_multiple"`` — target count = multiple * (number of edges this
                            period); matches "a few observed edges' worth".
    """

    mode: str = "full"
    proportion: float = 1.0
    count: int = 0
    edge_multiple: float = 3.3

    def validate(self) -> None:
        if self.mode not in ("full", "proportion", "count", "edge_multiple"):
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if self.mode == "proportion" and not (0.0 < self.proportion <= 1.0):
            raise ConfigError(f"proportion must be in (0, 1], got {self.proportion}")
        if self.mode == "count" and self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.mode == "edge_multiple" and self.edge_multiple <= 0:
            raise ConfigError(f"edge_multiple must be > 0, got {self.edge_multiple}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "proportion": self.proportion,
                "count": self.count, "edge_multiple": self.edge_multiple}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPolicy":
        return cls(**d)


def _default_tau_grid() -> tuple[float, ...]:
    return (1.0, 1.01, 1.1, 2.0)


@dataclass(frozen=True)
class ModelConfig:
    """All fitting knobs in one place.

    Note on latent priors: the closed-form bilinear update only exists while
    the spectral radius of ``cov_u @ cov_v`` stays below 1 (the tilted
    integral diverges otherwise), so keep prior latent covariances inside
    that ball — e.g. the 0.5*I default, or 0.75 on the diagonal with small
    off-diagonals.  Exactly-unit priors sit on the boundary: a state built
    from them is legal, but every first-visit factor update will be
    PD-skipped and the latent space will never activate.
    """

    latent_dim: int = 2
    prior_mean_mu: float = -6.5
    prior_var_mu: float = 0.1
    prior_var_alpha: float = 1.0
    prior_var_beta: float = 1.0
    prior_cov_u: np.ndarray | None = None  # default: identity(latent_dim)
    prior_cov_v: np.ndarray | None = None
    damping_epsilon: float = 2.0
    convergence_tol: float = 1e-4
    max_sweeps: int = 50
    cc_sampling: SamplingPolicy = field(default_factory=SamplingPolicy)
    tau_grid: tuple[float, ...] = field(default_factory=_default_tau_grid)

    def resolved_cov_u(self) -> np.ndarray:
        return self._resolve_cov(self.prior_cov_u)

    def resolved_cov_v(self) -> np.ndarray:
        return self._resolve_cov(self.prior_cov_v)

    def _resolve_cov(self, cov) -> np.ndarray:
        d = self.latent_dim
        if cov is None:
            return 0.5 * np.eye(d)
        out = np.asarray(cov, dtype=float)
        if np.ndim(out) == 0:
            return float(out) * np.eye(d)
        if out.shape != (d, d):
            raise ConfigError(f"latent covariance shape {out.shape} != ({d}, {d})")
        return out

    def validate(self) -> None:
        if not (0 <= self.latent_dim <= MAX_LATENT_DIM):
            raise ConfigError(f"latent_dim must be in [0, {MAX_LATENT_DIM}]")
        for name in ("prior_var_mu", "prior_var_alpha", "prior_var_beta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.latent_dim > 0:
            for cov, name in ((self.resolved_cov_u(), "prior_cov_u"),
                              (self.resolved_cov_v(), "prior_cov_v")):
                if not np.allclose(cov, cov.T):
                    raise ConfigError(f"{name} must be symmetric")
                try:
                    np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    raise ConfigError(f"{name} must be positive definite") from None
        if self.convergence_tol <= 0:
            raise ConfigError("convergence_tol must be > 0")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be >= 1")
        if not self.tau_grid or any(t < 1.0 for t in self.tau_grid):
            raise ConfigError("tau_grid entries must be >= 1")
        if 1.0 not in self.tau_grid:
            raise ConfigError("tau_grid must contain 1.0 (the no-forgetting choice)")
        self.cc_sampling.validate()

    def to_dict(self) -> dict:
        """JSON-ready representation (arrays become nested lists)."""
        def cov(x):
            return None if x is None else np.asarray(x, dtype=float).tolist()

        return {
            "latent_dim": self.latent_dim,
            "prior_mean_mu": self.prior_mean_mu,
            "prior_var_mu": self.prior_var_mu,
            "prior_var_alpha": self.prior_var_alpha,
            "prior_var_beta": self.prior_var_beta,
            "prior_cov_u": cov(self.prior_cov_u),
            "prior_cov_v": cov(self.prior_cov_v),
            "damping_epsilon": self.damping_epsilon,
            "convergence_tol": self.convergence_tol,
            "max_sweeps": self.max_sweeps,
            "cc_sampling": self.cc_sampling.to_dict(),
            "tau_grid": list(self.tau_grid),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("prior_cov_u", "prior_cov_v"):
            if d.get(key) is not None:
                d[key] = np.asarray(d[key], dtype=float)
        if isinstance(d.get("cc_sampling"), dict):
            d["cc_sampling"] = SamplingPolicy.from_dict(d["cc_sampling"])
        if "tau_grid" in d:
            d["tau_grid"] = tuple(d["tau_grid"])
        return cls(**d)


@dataclass(frozen=True)
class DyadObservation:
    sender: int
    receiver: int
    label: int  # +1 presence, -1 absence

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise GaussianError(f"label must be +/-1, got {self.label}")


@dataclass
class ParamState:
    """Array-backed beliefs for one period, natural parameters throughout.

    ``cc_log_q`` is log of the non-edge sampling proportion the current fit
    used; the fitted mu rides ``-log q`` high and scoring subtracts it back.
    """

    mu_precision: float
    mu_precision_mean: float
    alpha_precision: np.ndarray       # (n_senders,)
    alpha_precision_mean: np.ndarray
    beta_precision: np.ndarray        # (n_receivers,)
    beta_precision_mean: np.ndarray
    u_precision: np.ndarray           # (n_senders, d, d)
    u_precision_mean: np.ndarray      # (n_senders, d)
    v_precision: np.ndarray           # (n_receivers, d, d)
    v_precision_mean: np.ndarray      # (n_receivers, d)
    period_index: int = 0
    cc_log_q: float = 0.0

    # -- shape accessors ----------------------------------------------------

    @property
    def n_senders(self) -> int:
        return self.alpha_precision.shape[0]

    @property
    def n_receivers(self) -> int:
        return self.beta_precision.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.u_precision.shape[1]

    # -- belief views -------------------------------------------------------

    def mu(self) -> Gaussian1D:
        return Gaussian1D(self.mu_precision, self.mu_precision_mean)

    def alpha(self, i: int) -> Gaussian1D:
        return Gaussian1D(float(self.alpha_precision[i]), float(self.alpha_precision_mean[i]))

    def beta(self, j: int) -> Gaussian1D:
        return Gaussian1D(float(self.beta_precision[j]), float(self.beta_precision_mean[j]))

    def u(self, i: int) -> GaussianD:
        return GaussianD(self.u_precision[i].copy(), self.u_precision_mean[i].copy())

    def v(self, j: int) -> GaussianD:
        return GaussianD(self.v_precision[j].copy(), self.v_precision_mean[j].copy())

    def copy(self) -> "ParamState":
        return ParamState(
            mu_precision=self.mu_precision,
            mu_precision_mean=self.mu_precision_mean,
            alpha_precision=self.alpha_precision.copy(),
            alpha_precision_mean=self.alpha_precision_mean.copy(),
            beta_precision=self.beta_precision.copy(),
            beta_precision_mean=self.beta_precision_mean.copy(),
            u_precision=self.u_precision.copy(),
            u_precision_mean=self.u_precision_mean.copy(),
            v_precision=self.v_precision.copy(),
            v_precision_mean=self.v_precision_mean.copy(),
            period_index=self.period_index,
            cc_log_q=self.cc_log_q,
        )

    def _check_ids(self, i: int, j: int) -> None:
        if not (0 <= i < self.n_senders):
            raise KeyError(f"unknown sender id {i}")
        if not (0 <= j < self.n_receivers):
            raise KeyError(f"unknown receiver id {j}")

    def moments(self) -> "StateMoments":
        """Batch-convert all beliefs to moments (used by scoring/tuning)."""
        a_var = 1.0 / self.alpha_precision
        b_var = 1.0 / self.beta_precision
        d = self.latent_dim
        if d > 0:
            u_cov = np.linalg.inv(self.u_precision)
            v_cov = np.linalg.inv(self.v_precision)
            u_mean = np.einsum("nij,nj->ni", u_cov, self.u_precision_mean)
            v_mean = np.einsum("nij,nj->ni", v_cov, self.v_precision_mean)
        else:
            u_cov = np.zeros((self.n_senders, 0, 0))
            v_cov = np.zeros((self.n_receivers, 0, 0))
            u_mean = np.zeros((self.n_senders, 0))
            v_mean = np.zeros((self.n_receivers, 0))
        return StateMoments(
            mu_mean=self.mu_precision_mean / self.mu_precision,
            mu_var=1.0 / self.mu_precision,
            alpha_mean=self.alpha_precision_mean * a_var,
            alpha_var=a_var,
            beta_mean=self.beta_precision_mean * b_var,
            beta_var=b_var,
            u_mean=u_mean,
            u_cov=u_cov,
            v_mean=v_mean,
            v_cov=v_cov,
            cc_log_q=self.cc_log_q,
        )


@dataclass
class StateMoments:
    """Moment-space snapshot of a ParamState (means and (co)variances)."""

    mu_mean: float
    mu_var: float
    alpha_mean: np.ndarray
    alpha_var: np.ndarray
    beta_mean: np.ndarray
    beta_var: np.ndarray
    u_mean: np.ndarray
    u_cov: np.ndarray
    v_mean: np.ndarray
    v_cov: np.ndarray
    cc_log_q: float = 0.0

    def psi_block(self, senders, receivers, offset: float = 0.0):
        """Vectorized psi moments for paired index arrays."""
        i = np.asarray(senders, dtype=np.int64)
        j = np.asarray(receivers, dtype=np.int64)
        mean = self.mu_mean + offset + self.alpha_mean[i] + self.beta_mean[j]
        var = self.mu_var + self.alpha_var[i] + self.beta_var[j]
        if self.u_mean.shape[1] > 0:
            mu_i = self.u_mean[i]
            mv_j = self.v_mean[j]
            Su_i = self.u_cov[i]
            Sv_j = self.v_cov[j]
            mean = mean + np.einsum("nd,nd->n", mu_i, mv_j)
            var = var + np.einsum("nd,nde,ne->n", mu_i, Sv_j, mu_i)
            var = var + np.einsum("nd,nde,ne->n", mv_j, Su_i, mv_j)
            var = var + np.einsum("nde,ned->n", Su_i, Sv_j)
        return mean, var


# ---------------------------------------------------------------------------
# operations


def init_priors(config: ModelConfig, n_senders: int, n_receivers: int) -> ParamState:
    """Fresh state in which every marginal equals its prior."""
    config.validate()
    if n_senders < 1 or n_receivers < 1:
        raise ConfigError("node counts must be positive")
    d = config.latent_dim
    pu = np.linalg.inv(config.resolved_cov_u()) if d else np.zeros((0, 0))
    pv = np.linalg.inv(config.resolved_cov_v()) if d else np.zeros((0, 0))
    pu = 0.5 * (pu + pu.T)
    pv = 0.5 * (pv + pv.T)
    return ParamState(
        mu_precision=1.0 / config.prior_var_mu,
        mu_precision_mean=config.prior_mean_mu / config.prior_var_mu,
        alpha_precision=np.full(n_senders, 1.0 / config.prior_var_alpha),
        alpha_precision_mean=np.zeros(n_senders),
        beta_precision=np.full(n_receivers, 1.0 / config.prior_var_beta),
        beta_precision_mean=np.zeros(n_receivers),
        u_precision=np.broadcast_to(pu, (n_senders, d, d)).copy(),
        u_precision_mean=np.zeros((n_senders, d)),
        v_precision=np.broadcast_to(pv, (n_receivers, d, d)).copy(),
        v_precision_mean=np.zeros((n_receivers, d)),
        period_index=0,
        cc_log_q=0.0,
    )


def jitter_latent_means(state: ParamState, rng: np.random.Generator,
                        scale: float = 0.5) -> ParamState:
    """Symmetry-breaking initialization of the latent means.

    With exactly-zero latent means the bilinear term is a fixed point of the
    message-passing updates (every shifted component keeps mean zero), so the
    latent space never activates.  Drawing small means from the prior shape
    (scaled by ``scale``) once at stream start breaks the tie; scale 0 is a
    no-op.  Popularity and baseline beliefs are untouched.
    """
    if scale < 0:
        raise ConfigError("jitter scale must be >= 0")
    out = state.copy()
    d = state.latent_dim
    if d == 0 or scale == 0.0:
        return out
    for prec, pm, n in (
        (out.u_precision, out.u_precision_mean, state.n_senders),
        (out.v_precision, out.v_precision_mean, state.n_receivers),
    ):
        z = rng.standard_normal((n, d))
        for k in range(n):
            cov = np.linalg.inv(prec[k])
            L = np.linalg.cholesky(0.5 * (cov + cov.T))
            mean = scale * (L @ z[k])
            pm[k] = prec[k] @ mean
    return out


def psi_moments(state: ParamState, i: int, j: int,
                periodicity_offset: float = 0.0) -> tuple[float, float]:
    """Mean and variance of psi_ij under the current independent beliefs.

    var(u.v) for independent Gaussians is
    m_u' S_v m_u + m_v' S_u m_v + tr(S_u S_v).
    """
    state._check_ids(i, j)
    mean = (state.mu().mean + periodicity_offset
            + state.alpha(i).mean + state.beta(j).mean)
    var = state.mu().variance + state.alpha(i).variance + state.beta(j).variance
    if state.latent_dim > 0:
        gu, gv = state.u(i), state.v(j)
        mu_, Su = gu.mean, gu.cov
        mv_, Sv = gv.mean, gv.cov
        mean += float(mu_ @ mv_)
        var += float(mu_ @ Sv @ mu_ + mv_ @ Su @ mv_ + np.trace(Su @ Sv))
    return float(mean), float(var)


def predictive_prob(state: ParamState, i: int, j: int,
                    periodicity_offset: float = 0.0) -> float:
    """Predictive edge probability with the case-control correction applied."""
    mean, var = psi_moments(state, i, j, periodicity_offset)
    return float(expit_gauss(mean + state.cc_log_q, var))


def cc_mean_correction(state: ParamState) -> float:
    """Scoring-scale mu mean: fitted mean + log q (undoes subsampling inflation)."""
    if not math.isfinite(state.cc_log_q):
        raise GaussianError(f"cc_log_q must be finite, got {state.cc_log_q}")
    return float(state.mu().mean + state.cc_log_q)


def rebase_mu_for_log_q(state: ParamState, new_log_q: float) -> ParamState:
    """Shift the carried mu belief from one sampling scale to another.

    The fitted mu absorbs ``-log q``; if the next period will be fitted at a
    different realized q, the prior that carries over must move by
    ``(log q_old - log q_new)`` so it stays centered on the new scale.  The
    variance is untouched.  Returns a new state with cc_log_q updated.
    """
    if not math.isfinite(new_log_q) or new_log_q > 0:
        raise GaussianError(f"log q must be finite and <= 0, got {new_log_q}")
    out = state.copy()
    shift = state.cc_log_q - new_log_q
    out.mu_precision_mean = out.mu_precision_mean + out.mu_precision * shift
    out.cc_log_q = new_log_q
    return out
