"""Synthetic dynamic-network generators used for validation.

Two streams:

* ``gen_bilinear`` — data drawn from the model family itself: parameters from
  the priors at t=0, then a slow Gaussian random walk (per-step variance a
  small multiple of the prior variance), edges Bernoulli(sigmoid(psi)).
  Ground-truth parameters are retained so fits can be scored against the
  generating process.

* ``gen_dcsbm`` — a degree-corrected stochastic block model with a mid-stream
  shift: Pareto degree propensities (normalized to mean 1 within each
  community), Poisson dyad counts thinned to binary presence, and the first
  community's internal rate jumping at a configured period.  Misspecified
  with respect to the detector on purpose.

Periods are 0-indexed everywhere in code; configs use 0-based indices too
(``shift_period=50`` means the 51st bucket is the first shifted one).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .gaussians import _expit


def _default_latent_cov() -> np.ndarray:
    return np.array([[0.75, 0.15], [0.15, 0.75]])


@dataclass(frozen=True)
class BilinearSimConfig:
    n_nodes: int = 500
    n_periods: int = 100
    latent_dim: int = 2
    mu_mean: float = -6.5
    mu_var: float = 0.1
    pop_var: float = 1.0  # alpha and beta prior variance
    latent_cov: np.ndarray = field(default_factory=_default_latent_cov)
    rw_scale: float = 0.001  # per-period walk variance = rw_scale * prior
    seed: int = 0

    def validate(self) -> None:
        if self.n_nodes < 2 or self.n_periods < 1:
            raise ValueError("need at least 2 nodes and 1 period")
        if self.rw_scale < 0:
            raise ValueError("rw_scale must be >= 0")
        cov = np.asarray(self.latent_cov, dtype=float)
        if self.latent_dim and cov.shape != (self.latent_dim, self.latent_dim):
            raise ValueError("latent_cov shape mismatch")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latent_cov"] = np.asarray(self.latent_cov, dtype=float).tolist()
        d["kind"] = "bilinear"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BilinearSimConfig":
        d = {k: v for k, v in d.items() if k != "kind"}
        if "latent_cov" in d:
            d["latent_cov"] = np.asarray(d["latent_cov"], dtype=float)
        return cls(**d)


@dataclass(frozen=True)
class DcsbmConfig:
    n_nodes: int = 500
    n_communities: int = 20
    n_periods: int = 100
    p_within: float = 0.2
    p_between: float = 0.1
    shift_period: int = 50       # first shifted period, 0-based
    p_within_shifted: float = 0.5
    shifted_community: int = 0   # "the first community"
    # degree propensities: theta' ~ Pareto, survival (scale/x)^shape on
    # [scale, inf), then normalized to mean 1 within each community.  The
    # heavy shape-1 tail is what gives hub nodes their pull; a light tail
    # (shape ~3) makes degrees nearly homogeneous and caps how well *any*
    # edge-probability ranking can do on this generator near AUC 0.66.
    pareto_scale: float = 3.0
    pareto_shape: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        for p in (self.p_within, self.p_between, self.p_within_shifted):
            if not (0.0 < p <= 1.0):
                raise ValueError("rate parameters must lie in (0, 1]")
        if self.pareto_scale <= 0 or self.pareto_shape <= 0:
            raise ValueError("Pareto scale and shape must be > 0")
        if not (0 <= self.shift_period <= self.n_periods):
            raise ValueError("shift_period out of range")
        if not (0 <= self.shifted_community < self.n_communities):
            raise ValueError("shifted_community out of range")
        if self.n_nodes < self.n_communities:
            raise ValueError("need at least one node per community")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "dcsbm"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DcsbmConfig":
        return cls(**{k: v for k, v in d.items() if k != "kind"})


@dataclass
class BilinearDataset:
    config: BilinearSimConfig
    mu: np.ndarray          # (T,)
    alpha: np.ndarray       # (T, n)
    beta: np.ndarray        # (T, n)
    u: np.ndarray           # (T, n, d)
    v: np.ndarray           # (T, n, d)
    edges_by_period: list[np.ndarray]

    @property
    def n_nodes(self) -> int:
        return self.config.n_nodes

    @property
    def n_periods(self) -> int:
        return self.config.n_periods

    def psi_matrix(self, t: int) -> np.ndarray:
        """True (n, n) logit matrix at period t (diagonal is meaningless)."""
        return (self.mu[t]
                + self.alpha[t][:, None]
                + self.beta[t][None, :]
                + self.u[t] @ self.v[t].T)

    def prob_matrix(self, t: int) -> np.ndarray:
        return _expit(self.psi_matrix(t))

    def offdiag_mask(self) -> np.ndarray:
        return ~np.eye(self.n_nodes, dtype=bool)


@dataclass
class DcsbmDataset:
    config: DcsbmConfig
    communities: np.ndarray  # (n,) int
    theta: np.ndarray        # (n,)
    edges_by_period: list[np.ndarray]

    @property
    def n_nodes(self) -> int:
        return self.config.n_nodes

    @property
    def n_periods(self) -> int:
        return self.config.n_periods

    def rate_matrix(self, t: int) -> np.ndarray:
        """Poisson intensity lambda_ij = theta_i theta_j P[r_i, r_j] at t."""
        c = self.config
        P = np.full((c.n_communities, c.n_communities), c.p_between)
        np.fill_diagonal(P, c.p_within)
        if t >= c.shift_period:
            P[c.shifted_community, c.shifted_community] = c.p_within_shifted
        block = P[self.communities[:, None], self.communities[None, :]]
        return np.outer(self.theta, self.theta) * block

    def prob_matrix(self, t: int) -> np.ndarray:
        """True edge-presence probability 1 - exp(-lambda)."""
        return -np.expm1(-self.rate_matrix(t))


def _draw_edges(rng: np.random.Generator, prob: np.ndarray) -> np.ndarray:
    n = prob.shape[0]
    hit = rng.random((n, n)) < prob
    np.fill_diagonal(hit, False)
    return np.argwhere(hit).astype(np.int64)


def gen_bilinear(config: BilinearSimConfig) -> BilinearDataset:
    config.validate()
    n, T, d = config.n_nodes, config.n_periods, config.latent_dim
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x815]))
    cov = np.asarray(config.latent_cov, dtype=float)

    mu = np.empty(T)
    alpha = np.empty((T, n))
    beta = np.empty((T, n))
    u = np.empty((T, n, d))
    v = np.empty((T, n, d))

    L = np.linalg.cholesky(cov) if d else np.zeros((0, 0))
    mu[0] = rng.normal(config.mu_mean, np.sqrt(config.mu_var))
    alpha[0] = rng.normal(0.0, np.sqrt(config.pop_var), size=n)
    beta[0] = rng.normal(0.0, np.sqrt(config.pop_var), size=n)
    u[0] = rng.standard_normal((n, d)) @ L.T
    v[0] = rng.standard_normal((n, d)) @ L.T

    s = np.sqrt(config.rw_scale)
    for t in range(1, T):
        mu[t] = mu[t - 1] + rng.normal(0.0, s * np.sqrt(config.mu_var))
        alpha[t] = alpha[t - 1] + rng.normal(0.0, s * np.sqrt(config.pop_var), size=n)
        beta[t] = beta[t - 1] + rng.normal(0.0, s * np.sqrt(config.pop_var), size=n)
        u[t] = u[t - 1] + s * (rng.standard_normal((n, d)) @ L.T)
        v[t] = v[t - 1] + s * (rng.standard_normal((n, d)) @ L.T)

    ds = BilinearDataset(config, mu, alpha, beta, u, v, [])
    for t in range(T):
        ds.edges_by_period.append(_draw_edges(rng, ds.prob_matrix(t)))
    return ds


def gen_dcsbm(config: DcsbmConfig) -> DcsbmDataset:
    config.validate()
    n, T = config.n_nodes, config.n_periods
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD5B]))

    communities = rng.integers(0, config.n_communities, size=n)
    # make sure no community is empty (tiny n edge case): steal a node from
    # a community that can spare one, so the donor never becomes empty
    for r in range(config.n_communities):
        if not np.any(communities == r):
            counts = np.bincount(communities, minlength=config.n_communities)
            donors = np.nonzero(counts[communities] > 1)[0]
            communities[donors[rng.integers(0, len(donors))]] = r

    # Pareto(scale m, shape s): m * (1 + standard_pareto(s))
    theta = config.pareto_scale * (1.0 + rng.pareto(config.pareto_shape, size=n))
    # normalize to mean 1 within each community
    for r in range(config.n_communities):
        members = communities == r
        theta[members] *= members.sum() / theta[members].sum()

    ds = DcsbmDataset(config, communities, theta, [])
    for t in range(T):
        lam = ds.rate_matrix(t)
        counts = rng.poisson(lam)
        np.fill_diagonal(counts, 0)
        ds.edges_by_period.append(np.argwhere(counts > 0).astype(np.int64))
    return ds


def write_events(path, edges_by_period, bucket_hours: float = 4.0,
                 node_names=None, start_ts: float = 0.0) -> None:
    """Dump a dataset in the event format the ingester reads.

    Every edge of period t becomes one event inside bucket t; events are
    spread across the bucket (first at the bucket start, last one second
    before its end) so a round trip through the bucketizer reproduces every
    period, including the first and final ones.  A bucket with a single edge
    writes it twice -- at the start and at the end -- since presence
    semantics deduplicate but the bucketizer's partial-boundary rule needs
    both ends of the bucket witnessed.
    """
    width = bucket_hours * 3600.0
    with open(path, "w") as fh:
        fh.write("time,src,dst\n")
        for t, edges in enumerate(edges_by_period):
            base = start_ts + t * width
            rows = [(i, j) for i, j in edges]
            if len(rows) == 1:
                rows = rows * 2
            m = len(rows)
            step = (width - 1.0) / max(m - 1, 1)
            for k, (i, j) in enumerate(rows):
                ts = base + k * step
                a = node_names[i] if node_names else f"n{int(i):05d}"
                b = node_names[j] if node_names else f"n{int(j):05d}"
                fh.write(f"{ts:.3f},{a},{b}\n")
