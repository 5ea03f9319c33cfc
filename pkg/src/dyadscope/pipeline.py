"""The online replay loop and its run-level configuration.

Each period: observe the bucket's edges, draw the non-edge sample, tune the
forgetting multipliers on the carried-in posterior, widen it accordingly (it
becomes the period's prior), score edges and enumerate subgraph alarms
against that prior, optionally drop flagged edges from the observation set,
re-base the baseline belief onto the period's realized sampling proportion,
and fit.  Period 0 only fits.  Empty buckets (no observed edges) are carried
through untouched: no tuning, no scoring, no fit.

All randomness is derived statelessly from (base seed, period, stream), so a
replay resumed from a checkpoint is bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, checkpoint_load, checkpoint_save
from .dynamics import TauAssignment, inflate_priors, tune_forgetting
from .engine import fit_period, sample_noncases
from .gaussians import expit_gauss
from .ingest import PeriodicityTable, periodicity_shifts
from .metrics import MetricError, auc_roc
from .model import ConfigError, ModelConfig, init_priors, jitter_latent_means, rebase_mu_for_log_q
from .scoring import SubgraphAlarm, enumerate_subgraphs, rank_alarms, score_edges

__all__ = [
    "RunConfig",
    "PeriodMetrics",
    "ReplayResult",
    "replay",
    "snapshots_from_arrays",
    "write_period_metrics",
    "METRIC_COLUMNS",
]

# streams for per-period seed derivation
_STREAM_NONCASE = 1
_STREAM_FIT = 2
_STREAM_JITTER = 3

_KIND_CODES = {"path3": 0, "star3": 1, "fork": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def derive_seed(base_seed: int, period: int, stream: int) -> int:
    """Deterministic per-(period, stream) seed; independent of replay order."""
    return int(np.random.SeedSequence([base_seed, period, stream]).generate_state(1)[0])


@dataclass(frozen=True)
class RunConfig:
    """Everything a replay needs besides the data itself."""

    model: ModelConfig = field(default_factory=ModelConfig)
    bucket_width_hours: float = 4.0
    edge_score_threshold: float = -10.0
    top_k_alarms: int = 200
    remove_anomalies: bool = False
    periodicity_mode: str = "none"      # none | offline | burnin
    periodicity_burnin: int = 42
    seed: int = 0
    checkpoint_every: int = 0           # 0 disables periodic checkpoints
    jitter_scale: float = 0.5
    score_noncases: bool = False        # also export log(1-p) for sampled non-edges
    node_policy: str = "all"            # all | senders
    allow_self_loops: bool = False
    scan_window: int = 6
    scan_z_threshold: float = 3.0

    def validate(self) -> None:
        self.model.validate()
        if self.edge_score_threshold > 0:
            raise ConfigError("edge_score_threshold must be <= 0")
        if self.periodicity_mode not in ("none", "offline", "burnin"):
            raise ConfigError(f"unknown periodicity mode {self.periodicity_mode!r}")
        if self.periodicity_burnin < 1:
            raise ConfigError("periodicity_burnin must be >= 1")
        if self.top_k_alarms < 0:
            raise ConfigError("top_k_alarms must be >= 0")
        if self.node_policy not in ("all", "senders"):
            raise ConfigError(f"unknown node policy {self.node_policy!r}")
        if self.jitter_scale < 0:
            raise ConfigError("jitter_scale must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.scan_window < 2:
            raise ConfigError("scan_window must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


METRIC_COLUMNS = (
    "period", "n_edges", "n_noncases", "n_factors", "sweeps", "converged",
    "max_delta", "predictive_auc", "mean_edge_log_score", "tau_mu",
    "tau_popularity", "tau_latent", "offset", "pd_skips", "improper_skips",
    "clamp_events", "wall_time_s",
)


@dataclass
class PeriodMetrics:
    period: int
    n_edges: int = 0
    n_noncases: int = 0
    n_factors: int = 0
    sweeps: int = 0
    converged: bool = True
    max_delta: float = 0.0
    predictive_auc: float = float("nan")
    mean_edge_log_score: float = float("nan")
    tau_mu: float = 1.0
    tau_popularity: float = 1.0
    tau_latent: float = 1.0
    offset: float = 0.0
    pd_skips: int = 0
    improper_skips: int = 0
    clamp_events: int = 0
    wall_time_s: float = 0.0

    def to_row(self) -> list:
        return [getattr(self, c) for c in METRIC_COLUMNS]


def write_period_metrics(rows, path) -> None:
    """Per-period replay metrics as delimited text with a fixed header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for r in rows:
            vals = r.to_row()
            fh.write(",".join(str(int(v)) if isinstance(v, bool) else repr(v)
                              if isinstance(v, float) else str(v)
                              for v in vals) + "\n")


def _metrics_to_array(rows) -> np.ndarray:
    return np.array([[float(v) for v in r.to_row()] for r in rows],
                    dtype=np.float64).reshape(len(rows), len(METRIC_COLUMNS))


def _metrics_from_array(arr) -> list:
    rows = []
    for raw in np.asarray(arr, dtype=np.float64).reshape(-1, len(METRIC_COLUMNS)):
        kw = {c: float(v) for c, v in zip(METRIC_COLUMNS, raw)}
        for k in ("period", "n_edges", "n_noncases", "n_factors", "sweeps",
                  "pd_skips", "improper_skips", "clamp_events"):
            kw[k] = int(kw[k])
        kw["converged"] = bool(kw["converged"])
        rows.append(PeriodMetrics(**kw))
    return rows


def _alarms_to_arrays(alarms) -> dict:
    k = len(alarms)
    kinds = np.zeros(k, dtype=np.int8)
    nodes = np.zeros((k, 4), dtype=np.int64)
    periods = np.zeros(k, dtype=np.int64)
    scores = np.zeros(k, dtype=np.float64)
    for idx, a in enumerate(alarms):
        kinds[idx] = _KIND_CODES[a.kind]
        nodes[idx] = a.nodes
        periods[idx] = a.period
        scores[idx] = a.log_score
    return {"alarm_kinds": kinds, "alarm_nodes": nodes,
            "alarm_periods": periods, "alarm_scores": scores}


def _alarms_from_arrays(extras) -> list:
    out = []
    for kind, nodes, period, score in zip(extras["alarm_kinds"],
                                          extras["alarm_nodes"],
                                          extras["alarm_periods"],
                                          extras["alarm_scores"]):
        out.append(SubgraphAlarm(_KIND_NAMES[int(kind)], tuple(int(n) for n in nodes),
                                 int(period), float(score)))
    return out


@dataclass
class ReplayResult:
    state: object
    metrics: list
    alarms: list                 # ranked top-k, ascending log_score
    periodicity: PeriodicityTable | None
    counters: dict
    n_nodes: int
    n_periods: int


def snapshots_from_arrays(edges_by_period, width_hours: float = 4.0,
                          start_ts: float = 0.0):
    """Wrap in-memory per-period edge arrays as PeriodSnapshots.

    The in-memory twin of write_events -> ingest -> bucketize, for feeding
    simulator output straight into :func:`replay`.
    """
    from .ingest import PeriodSnapshot, day_of_week

    width = width_hours * 3600.0
    slots_per_day = round(86400.0 / width)
    out = []
    for t, edges in enumerate(edges_by_period):
        start = start_ts + t * width
        arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        slot = int(round((start % 86400.0) / width)) % slots_per_day
        out.append(PeriodSnapshot(t, start, start + width, arr, slot,
                                  day_of_week(start), n_events=arr.shape[0]))
    return out


def _alarm_member_edges(alarm: SubgraphAlarm):
    a, b, c, d = alarm.nodes
    if alarm.kind == "path3":
        return [(a, b), (b, c), (c, d)]
    if alarm.kind == "fork":
        return [(a, b), (b, c), (b, d)]
    return [(a, b), (a, c), (a, d)]


def _periodicity_table(snapshots, n_nodes, config):
    if config.periodicity_mode == "none" or not snapshots:
        return None
    if config.periodicity_mode == "offline":
        subset = snapshots
    else:
        subset = snapshots[:config.periodicity_burnin]
        if len(subset) < config.periodicity_burnin:
            warnings.warn("burn-in prefix longer than the data; using all of it")
    return periodicity_shifts(subset, n_nodes,
                              allow_self_loops=config.allow_self_loops)


def _predictive_auc(state, edges, non, offset):
    """AUC of 'was this dyad active' from the period-prior predictive."""
    pairs = np.concatenate([edges, non.dyads]) if len(non.dyads) else edges
    if not len(edges) or not len(non.dyads):
        return float("nan")
    mom = state.moments()
    mean, var = mom.psi_block(pairs[:, 0], pairs[:, 1], offset)
    probs = expit_gauss(mean + state.cc_log_q, var)
    labels = np.concatenate([np.ones(len(edges)), np.zeros(len(non.dyads))])
    try:
        return auc_roc(probs, labels)
    except MetricError:
        return float("nan")


def replay(snapshots, n_nodes, config: RunConfig, *, resume_from=None,
           checkpoint_path=None, backend="auto", score=True) -> ReplayResult:
    """Run the online loop over bucketized snapshots.

    ``resume_from`` may be a checkpoint path or Checkpoint object; the run
    continues at its ``period_index`` and must use a RunConfig whose model
    matches the checkpointed one.  ``checkpoint_path`` (with
    ``config.checkpoint_every``) enables periodic saves; a final checkpoint
    is always written when the path is given.  ``score=False`` skips scoring
    and alarms (the `fit` subcommand's mode).
    """
    config.validate()
    snapshots = list(snapshots)
    grid = config.model.tau_grid
    table = _periodicity_table(snapshots, n_nodes, config)

    counters = {"pd_skips": 0, "improper_skips": 0, "clamp_events": 0,
                "factors_processed": 0}
    if resume_from is not None:
        cp = resume_from if isinstance(resume_from, Checkpoint) else checkpoint_load(resume_from)
        if cp.config.to_dict() != config.model.to_dict():
            raise CheckpointError("checkpoint model config differs from the run config")
        state = cp.state
        start = cp.period_index
        counters.update(cp.counters)
        rows = _metrics_from_array(cp.extras["metric_rows"]) if "metric_rows" in cp.extras else []
        pool = _alarms_from_arrays(cp.extras) if "alarm_kinds" in cp.extras else []
    else:
        state = init_priors(config.model, n_nodes, n_nodes)
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 0, _STREAM_JITTER]))
        state = jitter_latent_means(state, rng, config.jitter_scale)
        start = 0
        rows = []
        pool = []

    def save_ckpt(next_period):
        extras = {"metric_rows": _metrics_to_array(rows)}
        extras.update(_alarms_to_arrays(pool))
        cp = Checkpoint(config=config.model, state=state, period_index=next_period,
                        base_seed=config.seed, counters=dict(counters), extras=extras)
        checkpoint_save(checkpoint_path, cp)

    for t in range(start, len(snapshots)):
        snap = snapshots[t]
        offset = table.for_snapshot(snap) if table is not None else 0.0
        edges = np.asarray(snap.edges, dtype=np.int64).reshape(-1, 2)
        row = PeriodMetrics(period=t, n_edges=len(edges), offset=offset)

        if len(edges) == 0:
            rows.append(row)
            if checkpoint_path and config.checkpoint_every and (t + 1) % config.checkpoint_every == 0:
                save_ckpt(t + 1)
            continue

        t0 = time.perf_counter()
        non = sample_noncases(n_nodes, n_nodes, edges, config.model.cc_sampling,
                              seed=derive_seed(config.seed, t, _STREAM_NONCASE),
                              allow_self_loops=config.allow_self_loops)
        row.n_noncases = len(non)

        taus = TauAssignment(1.0, 1.0, 1.0)
        if t > 0 and len(grid) > 1:
            taus = tune_forgetting(state, edges, non, grid, offset=offset)
            state = inflate_priors(state, taus)
        row.tau_mu, row.tau_popularity, row.tau_latent = (
            taus.tau_mu, taus.tau_popularity, taus.tau_latent)

        fit_edges = edges
        if t > 0 and score:
            scores = score_edges(state, edges, t, offset=offset,
                                 noncases=non if config.score_noncases else None)
            edge_scores = [s for s in scores if s.observed]
            row.mean_edge_log_score = float(
                np.mean([s.log_score for s in edge_scores]))
            row.predictive_auc = _predictive_auc(state, edges, non, offset)
            alarms_t = enumerate_subgraphs(edge_scores, config.edge_score_threshold)
            if alarms_t:
                pool = [a for a in rank_alarms(pool + alarms_t,
                                               max(config.top_k_alarms, 1))]
            if config.remove_anomalies and alarms_t:
                flagged = {e for a in alarms_t for e in _alarm_member_edges(a)}
                keep = [k for k in range(len(edges))
                        if (int(edges[k, 0]), int(edges[k, 1])) not in flagged]
                fit_edges = edges[keep]

        state = rebase_mu_for_log_q(state, non.log_q)
        state, stats = fit_period(state, fit_edges, non, config.model,
                                  offset=offset,
                                  seed=derive_seed(config.seed, t, _STREAM_FIT),
                                  backend=backend)
        counters["pd_skips"] += stats.pd_skips
        counters["improper_skips"] += stats.improper_skips
        counters["clamp_events"] += stats.clamp_events
        counters["factors_processed"] += stats.factors_processed

        row.n_factors = len(fit_edges) + len(non)
        row.sweeps = stats.sweeps
        row.converged = stats.converged
        row.max_delta = stats.max_natural_param_delta
        row.pd_skips = stats.pd_skips
        row.improper_skips = stats.improper_skips
        row.clamp_events = stats.clamp_events
        row.wall_time_s = time.perf_counter() - t0
        rows.append(row)

        if checkpoint_path and config.checkpoint_every and (t + 1) % config.checkpoint_every == 0:
            save_ckpt(t + 1)

    if checkpoint_path:
        save_ckpt(len(snapshots))

    ranked = rank_alarms(pool, config.top_k_alarms) if score else []
    return ReplayResult(state=state, metrics=rows, alarms=ranked,
                        periodicity=table, counters=counters,
                        n_nodes=n_nodes, n_periods=len(snapshots))
