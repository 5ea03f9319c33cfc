"""Between-period dynamics: forgetting-multiplier inflation and its autotuner.

Carrying a posterior across a period boundary as the next prior would freeze
the model; instead each parameter group's (co)variance is multiplied by a
forgetting factor tau >= 1 (means untouched), which is the collapsed form of
an implicit Gaussian random walk.  Three groups share multipliers: mu alone,
all popularity effects (alpha, beta), and all latent positions (u, v).

``tune_forgetting`` grid-searches the three multipliers against the average
predictive likelihood of the next period's labels, estimated over the
period's edges plus the case-control non-edge sample (importance weight 1/q
on the non-edges) and normalized by the total dyad count.  Evaluation uses
the sigmoid-of-Gaussian approximation, whose per-dyad variance decomposes as

    var(tau) = tau_mu * v_mu + tau_pop * v_pop + tau_lat * a + tau_lat^2 * b

with a = m_u' S_v m_u + m_v' S_u m_v and b = tr(S_u S_v), so the 4^3 = 64
combinations reuse cached per-dyad scalars.  Ties break toward smaller tau
(lexicographic), making stationary data prefer (1, 1, 1) deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import NonCaseSample
from .gaussians import expit_gauss
from .model import ParamState


class TuningError(ValueError):
    pass


@dataclass(frozen=True)
class TauAssignment:
    tau_mu: float = 1.0
    tau_popularity: float = 1.0
    tau_latent: float = 1.0

    def validate(self, grid) -> None:
        for t in (self.tau_mu, self.tau_popularity, self.tau_latent):
            if t < 1.0:
                raise TuningError(f"tau must be >= 1, got {t}")
            if grid is not None and t not in grid:
                raise TuningError(f"tau {t} not in grid {grid}")


def inflate_priors(state: ParamState, taus: TauAssignment) -> ParamState:
    """Scale each group's (co)variances by its tau; means unchanged.

    Natural parameters divide by tau (precision and precision-mean together,
    so the implied mean survives; exactly so for dyadic taus like 1 and 2,
    to an ulp otherwise).  The returned state is the next period's prior.
    """
    taus.validate(None)
    out = state.copy()
    c_mu = 1.0 / taus.tau_mu
    c_pop = 1.0 / taus.tau_popularity
    c_lat = 1.0 / taus.tau_latent
    if taus.tau_mu != 1.0:
        out.mu_precision *= c_mu
        out.mu_precision_mean *= c_mu
    if taus.tau_popularity != 1.0:
        out.alpha_precision *= c_pop
        out.alpha_precision_mean *= c_pop
        out.beta_precision *= c_pop
        out.beta_precision_mean *= c_pop
    if taus.tau_latent != 1.0 and state.latent_dim > 0:
        out.u_precision *= c_lat
        out.u_precision_mean *= c_lat
        out.v_precision *= c_lat
        out.v_precision_mean *= c_lat
    out.period_index = state.period_index + 1
    return out


def _dyad_components(state: ParamState, senders, receivers, offset: float):
    """Cached pieces of the psi moments for a dyad list, pre-tau."""
    mom = state.moments()
    i = np.asarray(senders, dtype=np.int64)
    j = np.asarray(receivers, dtype=np.int64)
    mean = (mom.mu_mean + offset + state.cc_log_q
            + mom.alpha_mean[i] + mom.beta_mean[j])
    v_pop = mom.alpha_var[i] + mom.beta_var[j]
    d = state.latent_dim
    if d > 0:
        mu_i = mom.u_mean[i]
        mv_j = mom.v_mean[j]
        Su_i = mom.u_cov[i]
        Sv_j = mom.v_cov[j]
        mean = mean + np.einsum("nd,nd->n", mu_i, mv_j)
        a = (np.einsum("nd,nde,ne->n", mu_i, Sv_j, mu_i)
             + np.einsum("nd,nde,ne->n", mv_j, Su_i, mv_j))
        b = np.einsum("nde,ned->n", Su_i, Sv_j)
    else:
        a = np.zeros(len(i))
        b = np.zeros(len(i))
    return mean, float(mom.mu_var), v_pop, a, b


def tune_forgetting(state: ParamState, observations, noncases,
                    grid, *, n_total_dyads: int | None = None,
                    offset: float = 0.0) -> TauAssignment:
    """Pick the tau triple maximizing the next period's predictive likelihood.

    ``observations`` are the next period's edges; ``noncases`` the non-edge
    sample drawn for that period (a NonCaseSample, so the importance weight
    is known) or a plain array for an exhaustive evaluation set.
    """
    grid = tuple(sorted(set(float(g) for g in grid)))
    if not grid:
        raise TuningError("grid must be non-empty")
    if 1.0 not in grid:
        raise TuningError("grid must contain 1")

    edges = np.asarray(observations, dtype=np.int64).reshape(-1, 2)
    if isinstance(noncases, NonCaseSample):
        non = noncases.dyads
        weight = float(np.exp(-noncases.log_q))
    else:
        non = np.asarray(noncases if noncases is not None else [],
                         dtype=np.int64).reshape(-1, 2)
        weight = 1.0
    n_eval = len(edges) + len(non)
    if n_eval == 0:
        raise TuningError("evaluation set is empty")
    if n_total_dyads is None:
        n_total_dyads = n_eval

    senders = np.concatenate([edges[:, 0], non[:, 0]])
    receivers = np.concatenate([edges[:, 1], non[:, 1]])
    is_edge = np.zeros(len(senders), dtype=bool)
    is_edge[: len(edges)] = True

    mean, v_mu, v_pop, a, b = _dyad_components(state, senders, receivers, offset)

    best: TauAssignment | None = None
    best_score = -np.inf
    for t_mu in grid:
        for t_pop in grid:
            base_var = t_mu * v_mu + t_pop * v_pop
            for t_lat in grid:
                var = base_var + t_lat * a + (t_lat * t_lat) * b
                p = expit_gauss(mean, var)
                score = float(np.sum(p[is_edge]))
                if len(non):
                    score += weight * float(np.sum(1.0 - p[~is_edge]))
                score /= n_total_dyads
                if score > best_score:
                    best_score = score
                    best = TauAssignment(t_mu, t_pop, t_lat)
    assert best is not None
    return best
