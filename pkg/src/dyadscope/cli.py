"""Command-line front end.

Subcommands:
  simulate   write a synthetic event stream (bilinear random-walk or block model)
  fit        run the online fit over bucketized events, persist a checkpoint
  score      score one period against a checkpointed posterior, export alarms
  evaluate   ROC / histogram / truth-comparison exports from scores or checkpoints
  replay     the full online loop: tune, score, flag, fit, every period

Every subcommand prints one line of JSON to stdout on success.  Failures
print ``{"error": <type>, "message": ...}`` to stderr and exit nonzero.
Relative paths resolve against ``$DYADSCOPE_DATA_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import re
import sys

import numpy as np

from .checkpoint import checkpoint_load
from .dynamics import TauAssignment, inflate_priors, tune_forgetting
from .engine import sample_noncases
from .gaussians import expit_gauss
from .ingest import (IngestStats, BucketStats, build_node_table, bucketize,
                     ingest, periodicity_shifts)
from .metrics import (auc_roc, logit_corr, never_observed_mask, roc_export,
                      score_histograms_export)
from .pipeline import (RunConfig, derive_seed, replay, write_period_metrics,
                       _STREAM_NONCASE)
from .scoring import (enumerate_subgraphs, export_alarms, export_edge_scores,
                      rank_alarms, score_edges)
from .simulate import (BilinearSimConfig, DcsbmConfig, gen_bilinear, gen_dcsbm,
                       write_events)

__all__ = ["main"]


class CliError(ValueError):
    pass


def _resolve(path):
    if path is None:
        return None
    base = os.environ.get("DYADSCOPE_DATA_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# shared plumbing


def _run_config(args) -> RunConfig:
    """Config file (if any) with flag overrides on top."""
    cfg = RunConfig.load_json(_resolve(args.config)) if getattr(args, "config", None) \
        else RunConfig()
    overrides = {}
    for flag, field in (("seed", "seed"), ("width_hours", "bucket_width_hours"),
                        ("threshold", "edge_score_threshold"),
                        ("top_k", "top_k_alarms"), ("node_policy", "node_policy"),
                        ("periodicity", "periodicity_mode"),
                        ("checkpoint_every", "checkpoint_every")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[field] = val
    if getattr(args, "remove_anomalies", False):
        overrides["remove_anomalies"] = True
    if getattr(args, "allow_self_loops", False):
        overrides["allow_self_loops"] = True
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _load_snapshots(events_path, cfg: RunConfig):
    """Two passes over the event file: roster, then buckets.

    The node universe is fixed before any bucket is formed, so nodes that
    only ever appear as receivers are dropped (with a counter) under the
    "senders" policy instead of growing the roster mid-replay.
    """
    path = _resolve(events_path)
    table = build_node_table(ingest(path, allow_self_loops=cfg.allow_self_loops),
                             policy=cfg.node_policy)
    if not len(table):
        raise CliError(f"no usable events in {path}")
    istats = IngestStats()
    bstats = BucketStats()
    snaps = list(bucketize(ingest(path, allow_self_loops=cfg.allow_self_loops,
                                  stats=istats),
                           cfg.bucket_width_hours, node_table=table,
                           extend_roster=False, stats=bstats))
    diag = {"n_records": istats.n_records, "n_malformed": istats.n_malformed,
            "n_self_loops": istats.n_self_loops,
            "n_out_of_order": bstats.n_out_of_order,
            "n_unknown_nodes": bstats.n_unknown_nodes,
            "dropped_leading": bstats.dropped_leading,
            "dropped_trailing": bstats.dropped_trailing}
    return snaps, table, diag


def _replay_summary(command, out, cfg, diag, extra=None) -> dict:
    payload = {"command": command, "seed": cfg.seed, "n_nodes": out.n_nodes,
               "n_periods": out.n_periods, "n_alarms": len(out.alarms),
               "counters": out.counters, "ingest": diag}
    tail = [r.predictive_auc for r in out.metrics if not np.isnan(r.predictive_auc)]
    payload["mean_predictive_auc"] = float(np.mean(tail)) if tail else None
    if extra:
        payload.update(extra)
    return payload


# ---------------------------------------------------------------------------
# subcommands


def _sim_config(kind, seed, args):
    sim = BilinearSimConfig(seed=seed) if kind == "bilinear" else DcsbmConfig(seed=seed)
    overrides = {}
    if getattr(args, "nodes", None):
        overrides["n_nodes"] = args.nodes
    if getattr(args, "periods", None):
        overrides["n_periods"] = args.periods
    if kind == "bilinear":
        if getattr(args, "latent_dim", None) is not None:
            overrides["latent_dim"] = args.latent_dim
        if getattr(args, "base_rate", None) is not None:
            overrides["mu_mean"] = args.base_rate
    else:
        if getattr(args, "shift_period", None) is not None:
            overrides["shift_period"] = args.shift_period
        elif "n_periods" in overrides and sim.shift_period > overrides["n_periods"]:
            # short run with the stock config: push the block shift past the end
            overrides["shift_period"] = overrides["n_periods"]
    return dataclasses.replace(sim, **overrides) if overrides else sim


def _gen_dataset(sim):
    return gen_bilinear(sim) if isinstance(sim, BilinearSimConfig) else gen_dcsbm(sim)


def _cmd_simulate(args) -> dict:
    out = _resolve(args.out)
    sim = _sim_config(args.kind, args.seed, args)
    ds = _gen_dataset(sim)
    write_events(out, ds.edges_by_period, bucket_hours=args.width_hours)
    if args.out_config:
        with open(_resolve(args.out_config), "w", encoding="utf-8") as fh:
            json.dump(sim.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    n_edges = int(sum(len(e) for e in ds.edges_by_period))
    return {"command": "simulate", "kind": args.kind, "out": out,
            "seed": args.seed, "n_nodes": ds.n_nodes, "n_periods": ds.n_periods,
            "n_edges": n_edges}


def _cmd_fit(args) -> dict:
    cfg = _run_config(args)
    snaps, table, diag = _load_snapshots(args.events, cfg)
    if args.periods is not None:
        snaps = snaps[:args.periods]
    out = replay(snaps, len(table), cfg,
                 resume_from=_resolve(args.resume),
                 checkpoint_path=_resolve(args.checkpoint), score=False)
    if args.out_metrics:
        write_period_metrics(out.metrics, _resolve(args.out_metrics))
    return _replay_summary("fit", out, cfg, diag,
                           {"checkpoint": _resolve(args.checkpoint),
                            "periods_processed": len(snaps)})


def _cmd_score(args) -> dict:
    cp = checkpoint_load(_resolve(args.checkpoint))
    cfg = _run_config(args)
    cfg = dataclasses.replace(cfg, model=cp.config)
    snaps, table, diag = _load_snapshots(args.events, cfg)
    if len(table) != len(cp.state.alpha_precision):
        raise CliError(f"event roster has {len(table)} nodes but the checkpoint "
                       f"was fit on {len(cp.state.alpha_precision)}")

    period = args.period if args.period is not None else cp.period_index
    matches = [s for s in snaps if s.period_index == period]
    if not matches:
        raise CliError(f"no bucket with period index {period} in the event file")
    snap = matches[0]
    edges = np.asarray(snap.edges, dtype=np.int64).reshape(-1, 2)
    if not len(edges):
        raise CliError(f"period {period} has no edges to score")

    offset = 0.0
    if cfg.periodicity_mode == "offline":
        offset = periodicity_shifts(snaps, len(table),
                                    allow_self_loops=cfg.allow_self_loops
                                    ).for_snapshot(snap)

    seed = args.seed if args.seed is not None else cp.base_seed
    state = cp.state
    non = sample_noncases(len(table), len(table), edges, cp.config.cc_sampling,
                          seed=derive_seed(seed, period, _STREAM_NONCASE),
                          allow_self_loops=cfg.allow_self_loops)
    taus = TauAssignment(1.0, 1.0, 1.0)
    if period > 0 and len(cp.config.tau_grid) > 1:
        taus = tune_forgetting(state, edges, non, cp.config.tau_grid, offset=offset)
        state = inflate_priors(state, taus)
    scores = score_edges(state, edges, period, offset=offset,
                         noncases=non if cfg.score_noncases else None)
    observed = [s for s in scores if s.observed]
    alarms = rank_alarms(enumerate_subgraphs(observed, cfg.edge_score_threshold),
                         cfg.top_k_alarms)

    outputs = []
    if args.out_edges:
        export_edge_scores(scores, _resolve(args.out_edges))
        outputs.append(_resolve(args.out_edges))
    if args.out_alarms:
        export_alarms(alarms, _resolve(args.out_alarms))
        outputs.append(_resolve(args.out_alarms))
    if args.out_nodes:
        with open(_resolve(args.out_nodes), "w", encoding="utf-8") as fh:
            fh.write("node,name\n")
            for k in range(len(table)):
                fh.write(f"{k},{table.name(k)}\n")
        outputs.append(_resolve(args.out_nodes))
    return {"command": "score", "period": period, "n_edges": int(len(edges)),
            "n_noncases": len(non), "n_alarms": len(alarms),
            "tau": [taus.tau_mu, taus.tau_popularity, taus.tau_latent],
            "mean_edge_log_score": float(np.mean([s.log_score for s in observed])),
            "outputs": outputs, "ingest": diag}


def _cmd_replay(args) -> dict:
    cfg = _run_config(args)
    snaps, table, diag = _load_snapshots(args.events, cfg)
    if args.periods is not None:
        snaps = snaps[:args.periods]
    out = replay(snaps, len(table), cfg,
                 resume_from=_resolve(args.resume),
                 checkpoint_path=_resolve(args.checkpoint))
    outputs = []
    if args.out_metrics:
        write_period_metrics(out.metrics, _resolve(args.out_metrics))
        outputs.append(_resolve(args.out_metrics))
    if args.out_alarms:
        export_alarms(out.alarms, _resolve(args.out_alarms))
        outputs.append(_resolve(args.out_alarms))
    return _replay_summary("replay", out, cfg, diag, {"outputs": outputs})


def _read_score_table(path, score_col, label_col):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or score_col not in reader.fieldnames:
            raise CliError(f"column {score_col!r} not found in {path}")
        if label_col not in reader.fieldnames:
            raise CliError(f"column {label_col!r} not found in {path}; "
                           "supply --label-col or use --truth-kind")
        scores, labels = [], []
        for rec in reader:
            scores.append(float(rec[score_col]))
            labels.append(int(float(rec[label_col])))
    return np.array(scores), np.array(labels)


def _sim_node_ids(args, cp, n_truth) -> np.ndarray:
    """Map the fitted roster back to simulator node indices.

    The fit interned node names in first-seen order, so checkpoint index k
    is not simulator index k.  Recover the permutation from the event file
    (names written by `simulate` end in the node number).
    """
    k = len(cp.state.alpha_precision)
    if not args.events:
        if k != n_truth:
            raise CliError(f"checkpoint has {k} nodes, truth has {n_truth}; "
                           "pass --events to recover the node mapping")
        return np.arange(n_truth)
    policy = args.node_policy or "all"
    table = build_node_table(ingest(_resolve(args.events)), policy=policy)
    if len(table) != k:
        raise CliError(f"event roster has {len(table)} nodes under policy "
                       f"{policy!r} but the checkpoint was fit on {k}")
    ids = np.empty(k, dtype=np.int64)
    for idx in range(k):
        name = table.name(idx)
        digits = re.search(r"(\d+)\s*$", name)
        if not digits:
            raise CliError(f"node name {name!r} carries no simulator index; "
                           "truth comparison only works on simulated streams")
        ids[idx] = int(digits.group(1))
    if len(np.unique(ids)) != k or ids.max() >= n_truth:
        raise CliError("event node names do not map onto the simulated roster")
    return ids


def _cmd_evaluate(args) -> dict:
    outputs = []
    if args.truth_kind or args.truth_config:
        # regenerate the synthetic truth and compare a checkpointed posterior
        if not args.checkpoint:
            raise CliError("truth comparison needs --checkpoint to evaluate")
        cp = checkpoint_load(_resolve(args.checkpoint))
        if args.truth_config:
            with open(_resolve(args.truth_config), "r", encoding="utf-8") as fh:
                raw = json.load(fh)
            kind = raw.get("kind")
            if kind == "bilinear":
                sim = BilinearSimConfig.from_dict(raw)
            elif kind == "dcsbm":
                sim = DcsbmConfig.from_dict(raw)
            else:
                raise CliError(f"unknown simulation kind {kind!r} in config")
        else:
            kind = args.truth_kind
            sim = _sim_config(kind, args.truth_seed, args)
        ds = _gen_dataset(sim)
        n = ds.n_nodes
        sim_ids = _sim_node_ids(args, cp, n)
        k = len(sim_ids)
        t = args.period if args.period is not None else cp.period_index - 1
        if not (0 <= t < ds.n_periods):
            raise CliError(f"period {t} outside the simulated range")
        # everything below is indexed by the fitted roster; the truth
        # matrices are permuted into that order via sim_ids
        mask = ~np.eye(k, dtype=bool)
        ii, jj = np.nonzero(mask)
        mom = cp.state.moments()
        mean, var = mom.psi_block(ii, jj, 0.0)
        est = expit_gauss(mean + cp.state.cc_log_q, var)
        est = np.clip(est, 1e-12, 1.0 - 1e-12)
        sub = np.ix_(sim_ids, sim_ids)
        true_p = np.clip(ds.prob_matrix(t)[sub][mask], 1e-12, 1.0 - 1e-12)
        adj = np.zeros((n, n), dtype=bool)
        e = ds.edges_by_period[t]
        if len(e):
            adj[e[:, 0], e[:, 1]] = True
        labels = adj[sub][mask].astype(int)
        never = never_observed_mask(ds.edges_by_period, n)[sub][mask]
        payload = {
            "command": "evaluate", "period": int(t), "kind": kind,
            "logit_corr": logit_corr(true_p, est),
            "logit_corr_never_observed": logit_corr(true_p[never], est[never]),
            "auc_est": auc_roc(est, labels),
            "auc_truth": auc_roc(true_p, labels),
        }
        scores, labels = est, labels
    else:
        if not args.scores:
            raise CliError("evaluate needs --scores or a truth source")
        scores, labels = _read_score_table(_resolve(args.scores),
                                           args.score_col, args.label_col)
        payload = {"command": "evaluate", "n": int(len(scores)),
                   "n_pos": int(labels.sum()),
                   "auc": auc_roc(scores, labels)}
    if args.out_roc:
        roc_export(_resolve(args.out_roc), scores, labels)
        outputs.append(_resolve(args.out_roc))
    if args.out_hist:
        score_histograms_export(_resolve(args.out_hist), scores, labels,
                                bins=args.bins)
        outputs.append(_resolve(args.out_hist))
    payload["outputs"] = outputs
    return payload


# ---------------------------------------------------------------------------
# argument wiring


def _add_run_flags(p, checkpointing=True):
    p.add_argument("--config", help="run-config JSON; flags override its fields")
    p.add_argument("--seed", type=int, help="base seed for all per-period draws")
    p.add_argument("--width-hours", type=float, dest="width_hours",
                   help="bucket width (must divide 24)")
    p.add_argument("--node-policy", choices=("all", "senders"))
    p.add_argument("--periodicity", choices=("none", "offline", "burnin"))
    p.add_argument("--allow-self-loops", action="store_true", default=None)
    p.add_argument("--periods", type=int, help="process only the first K buckets")
    if checkpointing:
        p.add_argument("--resume", help="checkpoint to continue from")
        p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dyadscope",
        description="Online dyadic-network modeling and anomaly flagging.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic event stream")
    p.add_argument("--kind", choices=("bilinear", "dcsbm"), default="bilinear")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--base-rate", type=float, dest="base_rate",
                   help="prior mean of the global log-odds")
    p.add_argument("--shift-period", type=int, dest="shift_period",
                   help="first period of the block-model density shift")
    p.add_argument("--width-hours", type=float, dest="width_hours", default=4.0)
    p.add_argument("--out-config", dest="out_config",
                   help="also write the generator settings as JSON")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="online fit only; no scoring")
    p.add_argument("--events", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-metrics", dest="out_metrics")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("score", help="score one period from a checkpoint")
    p.add_argument("--events", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--period", type=int,
                   help="bucket to score (default: the checkpoint's next)")
    p.add_argument("--out-edges", dest="out_edges")
    p.add_argument("--out-alarms", dest="out_alarms")
    p.add_argument("--out-nodes", dest="out_nodes",
                   help="write the node-id/name table")
    p.add_argument("--threshold", type=float,
                   help="edge log-score threshold (<= 0)")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--config", help="run-config JSON; flags override its fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--width-hours", type=float, dest="width_hours")
    p.add_argument("--node-policy", choices=("all", "senders"))
    p.add_argument("--periodicity", choices=("none", "offline"))
    p.add_argument("--allow-self-loops", action="store_true", default=None)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("evaluate", help="ROC/histogram exports and truth checks")
    p.add_argument("--scores", help="delimited scores file")
    p.add_argument("--score-col", default="log_score", dest="score_col")
    p.add_argument("--label-col", default="label", dest="label_col")
    p.add_argument("--checkpoint", help="posterior to compare against truth")
    p.add_argument("--truth-kind", choices=("bilinear", "dcsbm"),
                   dest="truth_kind")
    p.add_argument("--truth-seed", type=int, default=0, dest="truth_seed")
    p.add_argument("--truth-config", dest="truth_config",
                   help="generator JSON written by `simulate --out-config`")
    p.add_argument("--events", help="event file the checkpoint was fit on "
                                    "(recovers the node-id mapping)")
    p.add_argument("--node-policy", choices=("all", "senders"))
    p.add_argument("--nodes", type=int)
    p.add_argument("--periods", type=int)
    p.add_argument("--period", type=int)
    p.add_argument("--out-roc", dest="out_roc")
    p.add_argument("--out-hist", dest="out_hist")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("replay", help="full online loop with scoring")
    p.add_argument("--events", required=True)
    p.add_argument("--checkpoint", help="write checkpoints here")
    p.add_argument("--out-metrics", dest="out_metrics")
    p.add_argument("--out-alarms", dest="out_alarms")
    p.add_argument("--threshold", type=float,
                   help="edge log-score threshold (<= 0)")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--remove-anomalies", action="store_true", default=None,
                   help="drop flagged subgraph edges before each fit")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        payload = args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__,
                                     "message": str(exc)}) + "\n")
        return 1
    _emit(payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
