"""Edge surprise scores, anomalous-subgraph alarms, and a scan baseline.

Edges observed in a period are scored by the log of their predictive
probability under the state carried in from previous periods; very negative
scores mean "this edge was not expected".  Low-scoring edges are assembled
into three directed shapes -- a 3-path ``a -> b -> c -> d``, a 3-star
``h -> {x, y, z}`` and a fork ``a -> c -> {x, y}`` -- whose score is the sum
of the member edge scores.  Overlapping shapes are deduplicated so that only
the lowest-scoring 3-path per middle edge, fork per center node, and 3-star
per hub survive.

A node-level scan-statistic baseline is included for comparison: it counts
edges in each node's radius-limited neighbourhood and flags nodes whose count
is a z-score outlier against a trailing window.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .model import ParamState

__all__ = [
    "ScoringError",
    "EdgeScore",
    "SubgraphAlarm",
    "ScanResult",
    "score_edges",
    "enumerate_subgraphs",
    "rank_alarms",
    "export_alarms",
    "export_edge_scores",
    "scan_stat_baseline",
]


class ScoringError(ValueError):
    """Raised for invalid scoring inputs (bad threshold, short history...)."""


@dataclass(frozen=True)
class EdgeScore:
    """Log predictive probability of one observed outcome on one dyad.

    ``log_score`` is log(p_hat) when ``observed`` is 1 and log(1 - p_hat)
    when it is 0, so it is always <= 0 and more negative means more
    surprising.
    """

    sender: int
    receiver: int
    period: int
    observed: int
    log_score: float


@dataclass(frozen=True)
class SubgraphAlarm:
    """A scored candidate anomaly built from observed low-probability edges.

    ``kind`` is one of ``"path3"`` (a -> b -> c -> d), ``"star3"``
    (h -> t1, h -> t2, h -> t3) or ``"fork"`` (a -> c, c -> x, c -> y).
    ``nodes`` lists the members in that order; interchangeable positions
    (star targets, fork out-targets) are sorted ascending.  ``log_score`` is
    the exact sum of the member edge log-scores in member order.  ``rank`` is
    filled in by :func:`rank_alarms` (1-based; 0 means unranked).
    """

    kind: str
    nodes: tuple[int, ...]
    period: int
    log_score: float
    rank: int = 0


def score_edges(state: ParamState, edges, period, *, offset=0.0, noncases=None):
    """Score observed edges (and optionally sampled non-edges) for a period.

    ``state`` is the carried-forward posterior fitted through the previous
    period; ``edges`` is an (m, 2) integer array of observed sender ->
    receiver pairs.  Each edge gets log(p_hat), where p_hat includes the
    state's case-control mean correction and the scalar ``offset`` (e.g. a
    periodicity shift for this period's bucket class).  If ``noncases`` is
    given (a NonCaseSample or an (k, 2) array) those dyads are additionally
    scored with log(1 - p_hat) and observed=0.

    Returns a list of :class:`EdgeScore`.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    mom = state.moments()

    def logit_args(pairs):
        mean, var = mom.psi_block(pairs[:, 0], pairs[:, 1], offset)
        mean = mean + state.cc_log_q
        return mean / np.sqrt(1.0 + np.pi * var / 8.0)

    out = []
    if edges.shape[0]:
        z = logit_args(edges)
        logs = -np.logaddexp(0.0, -z)  # log sigmoid(z)
        for (i, j), ls in zip(edges, logs):
            out.append(EdgeScore(int(i), int(j), int(period), 1, float(ls)))
    if noncases is not None:
        pairs = getattr(noncases, "dyads", noncases)
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.shape[0]:
            z = logit_args(pairs)
            logs = -np.logaddexp(0.0, z)  # log(1 - sigmoid(z))
            for (i, j), ls in zip(pairs, logs):
                out.append(EdgeScore(int(i), int(j), int(period), 0, float(ls)))
    return out


# ---------------------------------------------------------------------------
# subgraph enumeration


def _best_candidate(cands):
    """Min by (score, nodes); cands yields (score, nodes_tuple) pairs."""
    best = None
    for item in cands:
        if best is None or item < best:
            best = item
    return best


def enumerate_subgraphs(scores, threshold):
    """Assemble deduplicated 3-path / 3-star / fork alarms from edge scores.

    Only observed edges with ``log_score <= threshold`` participate.  All
    four (three, for stars) member nodes must be distinct.  Within a dedup
    class -- 3-paths sharing a middle edge, forks sharing a center, 3-stars
    sharing a hub -- only the lowest-scoring shape is kept, ties broken by
    lexicographically smallest node tuple.  Scores are recomputed as the sum
    of member edge scores in member order, so alarm scores are bit-exact
    sums of the input scores.
    """
    if not threshold <= 0.0:
        raise ScoringError(f"threshold must be <= 0, got {threshold!r}")

    by_period = {}
    for s in scores:
        if s.observed and s.log_score <= threshold:
            by_period.setdefault(s.period, []).append(s)

    alarms = []
    for period in sorted(by_period):
        sub = by_period[period]
        val = {}
        out_adj = {}
        in_adj = {}
        for s in sub:
            val[(s.sender, s.receiver)] = s.log_score
            out_adj.setdefault(s.sender, []).append((s.log_score, s.receiver))
            in_adj.setdefault(s.receiver, []).append((s.log_score, s.sender))
        for lst in out_adj.values():
            lst.sort()
        for lst in in_adj.values():
            lst.sort()

        def firstk(lst, banned, k):
            picked = []
            for sc, node in lst:
                if node not in banned:
                    picked.append((sc, node))
                    if len(picked) == k:
                        break
            return picked

        # 3-paths, one per middle edge b -> c.  The in-choice a and the
        # out-choice d interact only through a != d, so the per-class best
        # lies within the top few candidates on each side.
        for (b, c), s_mid in sorted(val.items()):
            ins = firstk(in_adj.get(b, ()), {b, c}, 3)
            outs = firstk(out_adj.get(c, ()), {b, c}, 3)
            if not ins or not outs:
                continue
            best = _best_candidate(
                (sa + s_mid + sd, (a, b, c, d))
                for sa, a in ins
                for sd, d in outs
                if a != d
            )
            if best is not None:
                _, nodes = best
                a, _, _, d = nodes
                total = val[(a, b)] + val[(b, c)] + val[(c, d)]
                alarms.append(SubgraphAlarm("path3", nodes, period, total))

        # forks, one per center c: edges a -> c, c -> x, c -> y.  The
        # in-source a may collide with at most two chosen out-targets, so
        # top-4 per side is enough to contain the optimum.
        for c in sorted(in_adj):
            outs_all = out_adj.get(c)
            if not outs_all or len(outs_all) < 2:
                continue
            ins = firstk(in_adj[c], {c}, 4)
            outs = firstk(outs_all, {c}, 4)
            best = _best_candidate(
                (sa + sx + sy, (a, c) + tuple(sorted((x, y))))
                for sa, a in ins
                for (sx, x), (sy, y) in itertools.combinations(outs, 2)
                if a != x and a != y
            )
            if best is not None:
                _, nodes = best
                a, _, x, y = nodes
                total = val[(a, c)] + val[(c, x)] + val[(c, y)]
                alarms.append(SubgraphAlarm("fork", nodes, period, total))

        # 3-stars, one per hub h: top-4 out-edges, all 3-subsets.
        for h in sorted(out_adj):
            outs = firstk(out_adj[h], {h}, 4)
            if len(outs) < 3:
                continue
            best = _best_candidate(
                (s1 + s2 + s3, (h,) + tuple(sorted((t1, t2, t3))))
                for (s1, t1), (s2, t2), (s3, t3) in itertools.combinations(outs, 3)
            )
            _, nodes = best
            h_, t1, t2, t3 = nodes
            total = val[(h_, t1)] + val[(h_, t2)] + val[(h_, t3)]
            alarms.append(SubgraphAlarm("star3", nodes, period, total))

    return alarms


def rank_alarms(alarms, top_k):
    """Sort alarms ascending by score and return the ``top_k`` most anomalous.

    Ties break deterministically by (period, kind, nodes).  Ranks are
    assigned 1-based in sorted order.
    """
    if top_k < 0:
        raise ScoringError(f"top_k must be >= 0, got {top_k!r}")
    ordered = sorted(alarms, key=lambda a: (a.log_score, a.period, a.kind, a.nodes))
    return [replace(a, rank=r) for r, a in enumerate(ordered[:top_k], start=1)]


def export_edge_scores(scores, path):
    """Write edge scores as delimited text: period,sender,receiver,observed,log_score."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("period,sender,receiver,observed,log_score\n")
        for s in scores:
            fh.write(f"{s.period},{s.sender},{s.receiver},"
                     f"{int(s.observed)},{s.log_score!r}\n")


def export_alarms(alarms, path):
    """Write ranked alarms as delimited text: period,kind,nodes,log_score,rank."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("period,kind,nodes,log_score,rank\n")
        for a in alarms:
            nodes = "-".join(str(n) for n in a.nodes)
            fh.write(f"{a.period},{a.kind},{nodes},{a.log_score!r},{a.rank}\n")


# ---------------------------------------------------------------------------
# scan-statistic baseline


@dataclass(frozen=True)
class ScanResult:
    """Node z-scores and the edges incident to flagged nodes for one period.

    ``edge_scores[k]`` is the larger endpoint z of the k-th current-period
    edge; because scores are node-level, at most ``n_nodes`` distinct values
    occur.  Flagging is all-or-nothing per node: every current-period edge
    touching a flagged node lands in ``flagged_edges``.
    """

    period: int
    z: np.ndarray
    flagged_nodes: np.ndarray
    flagged_edges: np.ndarray
    edge_scores: np.ndarray


def _scan_counts(edges, n_nodes, max_intermediates):
    """Per-node directed edge count of the <= (max_intermediates + 1)-hop
    undirected neighbourhood's induced subgraph."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    data = np.ones(edges.shape[0], dtype=np.int8)
    m = sp.csr_matrix((data, (edges[:, 0], edges[:, 1])), shape=(n_nodes, n_nodes))
    und = ((m + m.T) > 0).astype(np.int8) + sp.identity(n_nodes, dtype=np.int8, format="csr")
    reach = und
    for _ in range(max_intermediates):
        reach = (reach @ und) > 0
        reach = reach.astype(np.int8)
    # count_k = sum_{(i,j) in E} reach[k,i] * reach[k,j]
    return np.asarray((reach @ m.astype(np.int64)).multiply(reach).sum(axis=1)).ravel()


def scan_stat_baseline(edges_by_period, n_nodes, *, window, z_threshold=3.0,
                       max_intermediates=2):
    """Node-neighbourhood edge-count z-scores for the last supplied period.

    For each node, count the directed edges among nodes reachable from it by
    at most ``max_intermediates`` intermediate nodes (undirected hops), per
    period.  The last period's count is z-scored against the mean/sd of the
    previous ``window`` periods (sample sd; if the sd is zero the z is 0 when
    the count equals the window mean and +/-inf otherwise).  Nodes with
    z > z_threshold are flagged and all their incident current-period edges
    are returned.
    """
    if window < 2:
        raise ScoringError(f"window must be >= 2, got {window!r}")
    if len(edges_by_period) < window + 1:
        raise ScoringError(
            f"need at least window + 1 = {window + 1} periods of history, "
            f"got {len(edges_by_period)}")

    tail = edges_by_period[-(window + 1):]
    counts = np.stack([_scan_counts(e, n_nodes, max_intermediates) for e in tail])
    hist, cur = counts[:-1], counts[-1]
    mean = hist.mean(axis=0)
    sd = hist.std(axis=0, ddof=1)
    diff = cur - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0),
                     np.where(diff == 0, 0.0, np.sign(diff) * np.inf))

    flagged_nodes = np.flatnonzero(z > z_threshold)
    cur_edges = np.asarray(tail[-1], dtype=np.int64).reshape(-1, 2)
    if cur_edges.shape[0]:
        edge_scores = np.maximum(z[cur_edges[:, 0]], z[cur_edges[:, 1]])
        hit = np.isin(cur_edges[:, 0], flagged_nodes) | np.isin(cur_edges[:, 1], flagged_nodes)
        flagged_edges = cur_edges[hit]
        order = np.lexsort((flagged_edges[:, 1], flagged_edges[:, 0]))
        flagged_edges = flagged_edges[order]
    else:
        edge_scores = np.zeros(0)
        flagged_edges = np.zeros((0, 2), dtype=np.int64)
    return ScanResult(len(edges_by_period) - 1, z, flagged_nodes, flagged_edges,
                      edge_scores)
