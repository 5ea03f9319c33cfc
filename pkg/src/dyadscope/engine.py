"""Power message-passing fitter for one time bucket.

Each observed dyad (and each sampled non-edge) is one factor touching five
variables: mu, alpha_i, beta_j, u_i, v_j.  A sweep visits all factors in a
seeded-shuffled order and for each one:

1. forms the inclusive density g = q * m for every touched variable
   (the divergence index is fixed at -1, which turns the usual cavity
   division into a multiplication),
2. assembles the mixture weight  log c = -y*offset + sum of the scalar
   log-MGFs + the bilinear log-MGF — the tilted density is then
   ``g + c * shifted`` for every variable simultaneously,
3. moment-matches each two-component mixture,
4. takes the damped/extrapolated step  q_new = q^eps * (proj)^(1-eps)
   in natural parameters (eps=2 is the canonical step for this divergence;
   eps=1 is a no-op),
5. updates the factor's stored message by  m_new = q_new * m / q.

Pathologies (improper g, diverging bilinear integral, improper q_new) skip
the offending update and bump a counter — never fatal.

Two interchangeable backends: ``update_factor`` below is the readable
reference built on the public gaussian ops; ``_kernel.sweep`` is the
compiled production path.  Tests pin them together.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .gaussians import (
    Gaussian1D,
    GaussianD,
    ImproperGaussianError,
    Mixture2,
    NotPositiveDefiniteError,
    clamp,
    mgf_bilinear,
    mgf_scalar,
    multiply,
    project_mixture,
)
from .model import ModelConfig, ParamState, SamplingPolicy

# Cells in a dense boolean dyad mask we are willing to allocate when a policy
# asks for (nearly) every non-edge.
_ENUMERATION_CELL_LIMIT = 200_000_000


class SamplingError(ValueError):
    """Non-edge sampling cannot satisfy the policy at this scale."""


@dataclass(frozen=True)
class FactorRef:
    """Reference to one factor: a dyadic observation or a (fixed) prior."""

    sender: int
    receiver: int
    label: int
    kind: str = "dyad"  # "dyad" | "prior"


@dataclass
class SweepStats:
    max_natural_param_delta: float = 0.0
    pd_skips: int = 0
    improper_skips: int = 0
    clamp_events: int = 0
    factors_processed: int = 0
    sweeps: int = 0
    converged: bool = False
    wall_time_s: float = 0.0

    def merge_counters(self, counters: np.ndarray) -> None:
        self.pd_skips += int(counters[_kernel.PD_SKIPS])
        self.improper_skips += int(counters[_kernel.IMPROPER_SKIPS])
        self.clamp_events += int(counters[_kernel.CLAMP_EVENTS])
        self.factors_processed += int(counters[_kernel.FACTORS_PROCESSED])


@dataclass
class NonCaseSample:
    """A drawn set of non-edges plus the realized sampling proportion."""

    dyads: np.ndarray  # (m, 2) int64
    log_q: float
    n_nonedges: int

    def __len__(self) -> int:
        return len(self.dyads)


class MessageStore:
    """Per-factor messages in flat natural-parameter arrays.

    Invariant maintained by the update rule: the belief over any variable
    equals its prior times the product of all stored messages into it —
    verified by ``message_consistency_gap``.  Storage is O(active factors).
    """

    def __init__(self, senders, receivers, labels, latent_dim: int):
        self.senders = np.ascontiguousarray(senders, dtype=np.int64)
        self.receivers = np.ascontiguousarray(receivers, dtype=np.int64)
        self.labels = np.ascontiguousarray(labels, dtype=np.float64)
        if self.senders.shape != self.receivers.shape or self.senders.shape != self.labels.shape:
            raise ValueError("senders/receivers/labels must align")
        if not np.all(np.abs(self.labels) == 1.0):
            raise ValueError("labels must be +/-1")
        nf = len(self.senders)
        d = latent_dim
        self.m_mu_p = np.zeros(nf)
        self.m_mu_pm = np.zeros(nf)
        self.m_a_p = np.zeros(nf)
        self.m_a_pm = np.zeros(nf)
        self.m_b_p = np.zeros(nf)
        self.m_b_pm = np.zeros(nf)
        self.m_u_p = np.zeros((nf, d, d))
        self.m_u_pm = np.zeros((nf, d))
        self.m_v_p = np.zeros((nf, d, d))
        self.m_v_pm = np.zeros((nf, d))

    @classmethod
    def build(cls, observations, noncases, latent_dim: int) -> "MessageStore":
        """Assemble the factor list: observed edges (+1) then non-cases (-1)."""
        obs = _as_dyad_array(observations)
        non = _as_dyad_array(noncases)
        senders = np.concatenate([obs[:, 0], non[:, 0]])
        receivers = np.concatenate([obs[:, 1], non[:, 1]])
        labels = np.concatenate([np.ones(len(obs)), -np.ones(len(non))])
        return cls(senders, receivers, labels, latent_dim)

    @property
    def n_factors(self) -> int:
        return len(self.senders)

    def factor_ref(self, k: int) -> FactorRef:
        return FactorRef(int(self.senders[k]), int(self.receivers[k]),
                         int(self.labels[k]), "dyad")

    def message(self, k: int, variable: str):
        """Stored message from factor k into one of its five variables."""
        if variable == "mu":
            return Gaussian1D(float(self.m_mu_p[k]), float(self.m_mu_pm[k]))
        if variable == "alpha":
            return Gaussian1D(float(self.m_a_p[k]), float(self.m_a_pm[k]))
        if variable == "beta":
            return Gaussian1D(float(self.m_b_p[k]), float(self.m_b_pm[k]))
        if variable == "u":
            return GaussianD(self.m_u_p[k].copy(), self.m_u_pm[k].copy())
        if variable == "v":
            return GaussianD(self.m_v_p[k].copy(), self.m_v_pm[k].copy())
        raise KeyError(variable)


def _as_dyad_array(x) -> np.ndarray:
    if x is None:
        return np.zeros((0, 2), dtype=np.int64)
    if isinstance(x, NonCaseSample):
        return np.asarray(x.dyads, dtype=np.int64).reshape(-1, 2)
    arr = np.asarray(x, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return arr.reshape(-1, 2)


# ---------------------------------------------------------------------------
# reference per-factor update (pure Python, mirrors _kernel.sweep)


def update_factor(state: ParamState, store: MessageStore, k: int,
                  epsilon: float, offset: float = 0.0,
                  stats: SweepStats | None = None) -> float:
    """Apply one factor's five-variable update in place; returns max delta."""
    if stats is None:
        stats = SweepStats()
    stats.factors_processed += 1
    i = int(store.senders[k])
    j = int(store.receivers[k])
    y = int(store.labels[k])
    d = state.latent_dim

    q_mu = state.mu()
    q_a = state.alpha(i)
    q_b = state.beta(j)
    g_mu = multiply(q_mu, store.message(k, "mu"))
    g_a = multiply(q_a, store.message(k, "alpha"))
    g_b = multiply(q_b, store.message(k, "beta"))

    try:
        log_c = -y * offset
        log_c += mgf_scalar(g_mu, y) + mgf_scalar(g_a, y) + mgf_scalar(g_b, y)
        if d > 0:
            q_u = state.u(i)
            q_v = state.v(j)
            g_u = multiply(q_u, store.message(k, "u"))
            g_v = multiply(q_v, store.message(k, "v"))
            log_c += mgf_bilinear(g_u, g_v, y)
    except ImproperGaussianError:
        stats.improper_skips += 1
        return 0.0
    except NotPositiveDefiniteError:
        stats.pd_skips += 1
        return 0.0
    if not math.isfinite(log_c):
        stats.improper_skips += 1
        return 0.0

    max_delta = 0.0

    def commit_scalar(q: Gaussian1D, g: Gaussian1D, set_q, msg_p, msg_pm):
        nonlocal max_delta
        shifted = Gaussian1D(g.precision, g.precision_mean - y)
        proj = project_mixture(Mixture2(g, shifted, log_c))
        p_new = epsilon * q.precision + (1 - epsilon) * proj.precision
        pm_new = epsilon * q.precision_mean + (1 - epsilon) * proj.precision_mean
        if p_new <= 0.0 or not math.isfinite(p_new) or not math.isfinite(pm_new):
            stats.improper_skips += 1
            return
        cand, changed = clamp(Gaussian1D(p_new, pm_new))
        if changed:
            stats.clamp_events += 1
        max_delta = max(max_delta, abs(cand.precision - q.precision),
                        abs(cand.precision_mean - q.precision_mean))
        msg_p[k] += cand.precision - q.precision
        msg_pm[k] += cand.precision_mean - q.precision_mean
        set_q(cand)

    def set_mu(g):
        state.mu_precision, state.mu_precision_mean = g.precision, g.precision_mean

    def set_a(g):
        state.alpha_precision[i], state.alpha_precision_mean[i] = g.precision, g.precision_mean

    def set_b(g):
        state.beta_precision[j], state.beta_precision_mean[j] = g.precision, g.precision_mean

    commit_scalar(q_mu, g_mu, set_mu, store.m_mu_p, store.m_mu_pm)
    commit_scalar(q_a, g_a, set_a, store.m_a_p, store.m_a_pm)
    commit_scalar(q_b, g_b, set_b, store.m_b_p, store.m_b_pm)

    if d > 0:
        def commit_latent(q: GaussianD, g: GaussianD, partner: GaussianD,
                          q_p_arr, q_pm_arr, idx, msg_p, msg_pm):
            nonlocal max_delta
            shifted = GaussianD(g.precision - partner.cov,
                                g.precision_mean - y * partner.mean)
            if not shifted.is_proper:
                stats.pd_skips += 1
                return
            try:
                proj = project_mixture(Mixture2(g, shifted, log_c))
            except (ImproperGaussianError, NotPositiveDefiniteError):
                stats.improper_skips += 1  # degenerate moment match
                return
            P_new = epsilon * q.precision + (1 - epsilon) * proj.precision
            pm_new = epsilon * q.precision_mean + (1 - epsilon) * proj.precision_mean
            cand = GaussianD(P_new, pm_new)
            if not cand.is_proper or not np.all(np.isfinite(pm_new)):
                stats.improper_skips += 1
                return
            cand, changed = clamp(cand)
            if changed:
                stats.clamp_events += 1
            max_delta = max(
                max_delta,
                float(np.max(np.abs(cand.precision - q.precision))),
                float(np.max(np.abs(cand.precision_mean - q.precision_mean))),
            )
            msg_p[k] += cand.precision - q.precision
            msg_pm[k] += cand.precision_mean - q.precision_mean
            q_p_arr[idx] = cand.precision
            q_pm_arr[idx] = cand.precision_mean

        commit_latent(q_u, g_u, g_v, state.u_precision, state.u_precision_mean,
                      i, store.m_u_p, store.m_u_pm)
        commit_latent(q_v, g_v, g_u, state.v_precision, state.v_precision_mean,
                      j, store.m_v_p, store.m_v_pm)

    stats.max_natural_param_delta = max(stats.max_natural_param_delta, max_delta)
    return max_delta


# ---------------------------------------------------------------------------
# non-edge sampling


def sample_noncases(n_senders: int, n_receivers: int, edges,
                    policy: SamplingPolicy, seed,
                    allow_self_loops: bool = False) -> NonCaseSample:
    """Uniform without-replacement sample of this period's non-edges.

    Deterministic for a fixed seed.  A target larger than the available
    non-edge count clamps to "all of them" (q = 1).
    """
    policy.validate()
    edges = _as_dyad_array(edges)
    codes = edges[:, 0].astype(np.int64) * n_receivers + edges[:, 1]
    edge_codes = set(codes.tolist())
    n_cells = n_senders * n_receivers
    n_self = 0 if allow_self_loops else min(n_senders, n_receivers)
    n_dyads = n_cells - n_self
    n_edges = len(edge_codes)
    n_non = n_dyads - n_edges
    if n_non < 0:
        raise SamplingError("more edges than dyad cells; duplicate or invalid edges")

    if policy.mode == "full":
        target = n_non
    elif policy.mode == "proportion":
        target = int(round(policy.proportion * n_non))
    elif policy.mode == "count":
        target = policy.count
    else:  # edge_multiple
        target = int(round(policy.edge_multiple * max(n_edges, 1)))
    target = min(max(target, 1), n_non) if n_non > 0 else 0

    rng = np.random.default_rng(seed)
    if n_non == 0:
        return NonCaseSample(np.zeros((0, 2), dtype=np.int64), 0.0, 0)

    if target >= n_non or target > 0.25 * n_dyads:
        # dense path: enumerate, then choose
        if n_cells > _ENUMERATION_CELL_LIMIT:
            raise SamplingError(
                f"{n_cells} dyad cells is too large to enumerate; "
                "use a sparser sampling policy"
            )
        mask = np.zeros((n_senders, n_receivers), dtype=bool)
        mask[edges[:, 0], edges[:, 1]] = True
        if not allow_self_loops:
            k = min(n_senders, n_receivers)
            mask[np.arange(k), np.arange(k)] = True
        non = np.argwhere(~mask).astype(np.int64)
        if target < n_non:
            pick = rng.choice(n_non, size=target, replace=False)
            non = non[np.sort(pick)]
    else:
        # sparse path: rejection sampling of cell codes until target reached
        chosen: set[int] = set()
        out = np.empty(target, dtype=np.int64)
        have = 0
        while have < target:
            batch = rng.integers(0, n_cells, size=int((target - have) * 1.4) + 16)
            for code in batch:
                c = int(code)
                if c in chosen or c in edge_codes:
                    continue
                if not allow_self_loops and (c // n_receivers) == (c % n_receivers):
                    continue
                chosen.add(c)
                out[have] = c
                have += 1
                if have == target:
                    break
        out.sort()
        non = np.stack([out // n_receivers, out % n_receivers], axis=1)

    log_q = math.log(len(non)) - math.log(n_non)
    return NonCaseSample(non, log_q, n_non)


# ---------------------------------------------------------------------------
# the per-period fit


def fit_period(state: ParamState, observations, noncases,
               config: ModelConfig, *, offset: float = 0.0,
               seed=0, backend: str = "auto") -> tuple[ParamState, SweepStats]:
    """Sweep all factors to convergence; returns (new state, stats).

    ``state`` carries this period's (possibly inflated) priors.  Messages
    always start from scratch here — carrying them across periods would
    double-count old data once the priors have moved.  Non-convergence after
    ``max_sweeps`` is reported via ``stats.converged``, not an exception.
    """
    config.validate()
    if backend == "auto":
        backend = "numba" if _kernel.NUMBA_AVAILABLE else "python"
    if backend not in ("numba", "python"):
        raise ValueError(f"unknown backend {backend!r}")

    new_state = state.copy()
    if isinstance(noncases, NonCaseSample):
        new_state.cc_log_q = noncases.log_q
    store = MessageStore.build(observations, noncases, state.latent_dim)
    stats = SweepStats()
    t0 = time.perf_counter()
    nf = store.n_factors
    if nf == 0:
        stats.converged = True
        stats.wall_time_s = time.perf_counter() - t0
        return new_state, stats

    rng = np.random.default_rng(seed)
    mu_p = np.array([new_state.mu_precision])
    mu_pm = np.array([new_state.mu_precision_mean])
    counters = np.zeros(4, dtype=np.int64)

    for sweep_idx in range(config.max_sweeps):
        order = rng.permutation(nf)
        stats.sweeps += 1
        if backend == "numba":
            delta = _kernel.sweep(
                order, store.senders, store.receivers, store.labels,
                offset, config.damping_epsilon,
                mu_p, mu_pm,
                new_state.alpha_precision, new_state.alpha_precision_mean,
                new_state.beta_precision, new_state.beta_precision_mean,
                new_state.u_precision, new_state.u_precision_mean,
                new_state.v_precision, new_state.v_precision_mean,
                store.m_mu_p, store.m_mu_pm, store.m_a_p, store.m_a_pm,
                store.m_b_p, store.m_b_pm,
                store.m_u_p, store.m_u_pm, store.m_v_p, store.m_v_pm,
                counters,
            )
            new_state.mu_precision = float(mu_p[0])
            new_state.mu_precision_mean = float(mu_pm[0])
        else:
            delta = 0.0
            for k in order:
                delta = max(delta, update_factor(
                    new_state, store, int(k), config.damping_epsilon,
                    offset=offset, stats=stats))
            mu_p[0] = new_state.mu_precision
            mu_pm[0] = new_state.mu_precision_mean
        stats.max_natural_param_delta = float(delta)
        if delta < config.convergence_tol:
            stats.converged = True
            break

    if backend == "numba":
        stats.merge_counters(counters)
    stats.wall_time_s = time.perf_counter() - t0
    # expose the store for diagnostics / invariant checks
    stats.store = store  # type: ignore[attr-defined]
    return new_state, stats


def message_consistency_gap(prior_state: ParamState, fitted_state: ParamState,
                            store: MessageStore) -> float:
    """Max |prior + sum(messages) - belief| over all natural parameters.

    The update rule maintains this identity exactly (commits move the belief
    and the message by the same delta), so the gap is rounding noise only.
    """
    gap = 0.0
    gap = max(gap, abs(prior_state.mu_precision + store.m_mu_p.sum()
                       - fitted_state.mu_precision))
    gap = max(gap, abs(prior_state.mu_precision_mean + store.m_mu_pm.sum()
                       - fitted_state.mu_precision_mean))

    a_p = prior_state.alpha_precision.copy()
    a_pm = prior_state.alpha_precision_mean.copy()
    b_p = prior_state.beta_precision.copy()
    b_pm = prior_state.beta_precision_mean.copy()
    np.add.at(a_p, store.senders, store.m_a_p)
    np.add.at(a_pm, store.senders, store.m_a_pm)
    np.add.at(b_p, store.receivers, store.m_b_p)
    np.add.at(b_pm, store.receivers, store.m_b_pm)
    gap = max(gap, float(np.max(np.abs(a_p - fitted_state.alpha_precision))),
              float(np.max(np.abs(a_pm - fitted_state.alpha_precision_mean))),
              float(np.max(np.abs(b_p - fitted_state.beta_precision))),
              float(np.max(np.abs(b_pm - fitted_state.beta_precision_mean))))

    if prior_state.latent_dim > 0:
        u_p = prior_state.u_precision.copy()
        u_pm = prior_state.u_precision_mean.copy()
        v_p = prior_state.v_precision.copy()
        v_pm = prior_state.v_precision_mean.copy()
        np.add.at(u_p, store.senders, store.m_u_p)
        np.add.at(u_pm, store.senders, store.m_u_pm)
        np.add.at(v_p, store.receivers, store.m_v_p)
        np.add.at(v_pm, store.receivers, store.m_v_pm)
        gap = max(gap, float(np.max(np.abs(u_p - fitted_state.u_precision))),
                  float(np.max(np.abs(u_pm - fitted_state.u_precision_mean))),
                  float(np.max(np.abs(v_p - fitted_state.v_precision))),
                  float(np.max(np.abs(v_pm - fitted_state.v_precision_mean))))
    return gap
