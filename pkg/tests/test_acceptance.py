"""Acceptance gate: ten end-to-end checks with pinned tolerances.

One test per numbered criterion.  Each finishes by printing a single
``[criterion N] PASS/FAIL`` line with the measured values, so ``pytest -s``
on this file doubles as a report.  The two N=500 replication studies behind
criteria 1-4 and 6 take a few minutes each; everything else runs in seconds.
"""

from __future__ import annotations

import dataclasses
import time
import warnings

import numpy as np
import pytest

from dyadscope.dynamics import inflate_priors, tune_forgetting
from dyadscope.engine import fit_period, sample_noncases
from dyadscope.gaussians import (
    Gaussian1D,
    GaussianD,
    Mixture2,
    expit_gauss,
    mgf_bilinear,
    project_mixture,
)
from dyadscope.ingest import (
    IngestStats,
    bucketize,
    build_node_table,
    ingest,
    periodicity_shifts,
)
from dyadscope.metrics import auc_roc, logit_corr
from dyadscope.model import (
    ModelConfig,
    SamplingPolicy,
    init_priors,
    jitter_latent_means,
    rebase_mu_for_log_q,
)
from dyadscope.pipeline import RunConfig, derive_seed, replay
from dyadscope.simulate import (
    BilinearSimConfig,
    DcsbmConfig,
    gen_bilinear,
    gen_dcsbm,
)

STUDY_COV = np.array([[0.75, 0.15], [0.15, 0.75]])

# criterion windows, quoted 1-based inclusive, as 0-based slices of a T=100 run
PERIODS_60_100 = slice(59, 100)
PERIODS_40_100 = slice(39, 100)
PERIODS_30_100 = slice(29, 100)


def report(num: int, ok: bool, detail: str) -> None:
    print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------
# shared replication studies (criteria 1-4 and 6)


def study_model() -> ModelConfig:
    return ModelConfig(latent_dim=2, prior_mean_mu=-6.5, prior_var_mu=0.1,
                       prior_cov_u=STUDY_COV.copy(), prior_cov_v=STUDY_COV.copy())


def run_online_study(ds, model, policy, n, n_periods, *, seed=0):
    """Online loop: sample noncases, tune forgetting, inflate, rebase the
    intercept for the sampling rate, fit, then compare the fitted edge
    probabilities against the generator's.

    The wall clock covers the fit call only, so full and subsampled runs are
    compared on the work the subsampling is meant to cut.
    """
    mask = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(mask)
    corr = np.full(n_periods, np.nan)
    auc_est = np.full(n_periods, np.nan)
    auc_true = np.full(n_periods, np.nan)
    wall = np.full(n_periods, np.nan)

    state = init_priors(model, n, n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0, 3]))
    state = jitter_latent_means(state, rng, 0.5)
    for t in range(n_periods):
        edges = np.asarray(ds.edges_by_period[t], dtype=np.int64)
        non = sample_noncases(n, n, edges, policy, seed=derive_seed(seed, t, 1))
        if t > 0:
            taus = tune_forgetting(state, edges, non, model.tau_grid)
            state = inflate_priors(state, taus)
        state = rebase_mu_for_log_q(state, non.log_q)
        t0 = time.perf_counter()
        state, _ = fit_period(state, edges, non, model,
                              seed=derive_seed(seed, t, 2))
        wall[t] = time.perf_counter() - t0

        mom = state.moments()
        mean, var = mom.psi_block(ii, jj, 0.0)
        est = np.clip(expit_gauss(mean + state.cc_log_q, var), 1e-12, 1 - 1e-12)
        truth = np.clip(ds.prob_matrix(t)[mask], 1e-12, 1 - 1e-12)
        hit = np.zeros((n, n), dtype=bool)
        hit[edges[:, 0], edges[:, 1]] = True
        y = hit[mask].astype(np.int64)
        corr[t] = logit_corr(truth, est)
        auc_est[t] = auc_roc(est, y)
        auc_true[t] = auc_roc(truth, y)
    return {"corr": corr, "auc_est": auc_est, "auc_true": auc_true,
            "wall": wall, "state": state}


@pytest.fixture(scope="module")
def bilinear_study():
    ds = gen_bilinear(BilinearSimConfig())  # 500 nodes, 100 periods
    model = study_model()
    full = run_online_study(ds, model, SamplingPolicy("full"), 500, 100)
    cc = run_online_study(
        ds, model, SamplingPolicy("proportion", proportion=0.025), 500, 100)
    return {"full": full, "cc": cc}


@pytest.fixture(scope="module")
def dcsbm_study():
    ds = gen_dcsbm(DcsbmConfig())  # 500 nodes, 100 periods, rate shift at 50
    return run_online_study(
        ds, study_model(), SamplingPolicy("proportion", proportion=0.05),
        500, 100)


# ---------------------------------------------------------------------------
# criteria 1-3: bilinear replication


def test_criterion_01_full_fit_recovers_edge_probabilities(bilinear_study):
    corr = bilinear_study["full"]["corr"][PERIODS_60_100]
    report(1, float(corr.mean()) >= 0.85,
           f"full-fit logit correlation over periods 60-100: "
           f"mean={corr.mean():.4f} min={corr.min():.4f} (floor 0.85)")


def test_criterion_02_fitted_auc_tracks_generating_model(bilinear_study):
    est = bilinear_study["full"]["auc_est"][PERIODS_40_100]
    truth = bilinear_study["full"]["auc_true"][PERIODS_40_100]
    gap = abs(float(est.mean()) - float(truth.mean()))
    report(2, gap <= 0.01,
           f"AUC over periods 40-100: fitted mean={est.mean():.4f} vs "
           f"generator mean={truth.mean():.4f}, gap={gap:.4f} (cap 0.01)")


def test_criterion_03_case_control_speed_and_accuracy(bilinear_study):
    # period 0 is excluded: the first fit also pays one-off JIT compilation
    full_wall = bilinear_study["full"]["wall"][1:]
    cc_wall = bilinear_study["cc"]["wall"][1:]
    speedup = float(np.median(full_wall) / np.median(cc_wall))
    corr = bilinear_study["cc"]["corr"][PERIODS_60_100]
    ok = speedup >= 5.0 and float(corr.mean()) >= 0.80
    report(3, ok,
           f"2.5% noncase sampling: median fit speedup x{speedup:.1f} "
           f"(floor x5); logit correlation over periods 60-100 "
           f"mean={corr.mean():.4f} (floor 0.80)")


# ---------------------------------------------------------------------------
# criterion 4: posterior-variance inflation under subsampling


def _class_variances(state):
    mom = state.moments()
    out = {"mu": float(mom.mu_var),
           "alpha": float(mom.alpha_var.mean()),
           "beta": float(mom.beta_var.mean())}
    if state.latent_dim:
        out["u"] = float(np.einsum("ndd->nd", mom.u_cov).mean())
        out["v"] = float(np.einsum("ndd->nd", mom.v_cov).mean())
    return out


def test_criterion_04_posterior_variance_inflation(bilinear_study):
    vf = _class_variances(bilinear_study["full"]["state"])
    vc = _class_variances(bilinear_study["cc"]["state"])
    ratios = {k: vc[k] / vf[k] for k in vf}
    ok = all(1.2 <= r <= 8.0 for r in ratios.values())
    detail = " ".join(f"{k}=x{r:.2f}" for k, r in ratios.items())
    report(4, ok,
           f"variance inflation at the final period per parameter class: "
           f"{detail} (window [1.2, 8.0])")


# ---------------------------------------------------------------------------
# criterion 5: intercept correction after noncase subsampling


def test_criterion_05_mu_correction_under_subsampling():
    # Popularity-only instance: the correction being measured is a property
    # of the noncase-sampling bookkeeping, and the latent-interaction terms
    # only add identifiability noise on top of it.  Sparsity matches the big
    # study so the subsampled fit stays in the same response regime.
    n = 200
    ds = gen_bilinear(BilinearSimConfig(n_nodes=n, n_periods=1, latent_dim=0,
                                        mu_mean=-6.5, seed=11))
    edges = np.asarray(ds.edges_by_period[0], dtype=np.int64)
    model = ModelConfig(latent_dim=0, prior_mean_mu=-6.5, prior_var_mu=0.1,
                        max_sweeps=80, convergence_tol=1e-8)

    def one_fit(policy):
        state = init_priors(model, n, n)
        non = sample_noncases(n, n, edges, policy, seed=3)
        state = rebase_mu_for_log_q(state, non.log_q)
        state, _ = fit_period(state, edges, non, model, seed=1)
        mom = state.moments()
        return float(mom.mu_mean) + state.cc_log_q, float(np.sqrt(mom.mu_var))

    mu_full, _ = one_fit(SamplingPolicy("full"))
    ok, parts = True, []
    for q in (0.05, 0.1):
        mu_corr, sd = one_fit(SamplingPolicy("proportion", proportion=q))
        z = abs(mu_corr - mu_full) / sd
        ok = ok and z <= 2.0
        parts.append(f"q={q}: corrected {mu_corr:.3f} is {z:.2f} sd from "
                     f"full {mu_full:.3f}")
    report(5, ok, "; ".join(parts) + " (cap 2.0 sd, n_edges=%d)" % len(edges))


# ---------------------------------------------------------------------------
# criterion 6: block-model run


def test_criterion_06_dcsbm_auc(dcsbm_study):
    auc = dcsbm_study["auc_est"][PERIODS_30_100]
    report(6, float(auc.mean()) >= 0.85,
           f"block-model edge-probability AUC over periods 30-100: "
           f"mean={auc.mean():.4f} min={auc.min():.4f} (floor 0.85)")


# ---------------------------------------------------------------------------
# criterion 7: numeric oracle suite


def test_criterion_07_oracle_suite():
    errs = {}

    # 1-D mixture projection vs dense trapezoid quadrature (cap 1e-6)
    base = Gaussian1D.from_moments(0.3, 0.8)
    shifted = Gaussian1D.from_moments(-0.9, 1.7)
    proj = project_mixture(Mixture2(base, shifted, -0.4))
    xs = np.linspace(-30.0, 30.0, 400_001)
    dens = (np.exp(-0.5 * (xs - 0.3) ** 2 / 0.8) / np.sqrt(2 * np.pi * 0.8)
            + np.exp(-0.4)
            * np.exp(-0.5 * (xs + 0.9) ** 2 / 1.7) / np.sqrt(2 * np.pi * 1.7))
    z = np.trapezoid(dens, xs)
    q_mean = float(np.trapezoid(xs * dens, xs) / z)
    q_var = float(np.trapezoid((xs - q_mean) ** 2 * dens, xs) / z)
    errs["proj1d"] = max(abs(proj.mean - q_mean), abs(proj.variance - q_var))
    assert errs["proj1d"] <= 1e-6

    # d-D mixture projection vs 1e6-sample Monte Carlo (cap 3 standard errors)
    rng = np.random.default_rng(123)
    mb, cb = np.array([0.2, -0.1]), np.array([[0.9, 0.2], [0.2, 1.4]])
    ms, cs = np.array([-0.5, 0.7]), np.array([[1.2, -0.3], [-0.3, 0.8]])
    lw = -0.7
    proj_d = project_mixture(Mixture2(GaussianD.from_moments(mb, cb),
                                      GaussianD.from_moments(ms, cs), lw))
    n_mc = 1_000_000
    pick = rng.random(n_mc) < np.exp(lw) / (1.0 + np.exp(lw))
    draws = np.where(pick[:, None],
                     rng.multivariate_normal(ms, cs, size=n_mc),
                     rng.multivariate_normal(mb, cb, size=n_mc))
    mc_mean = draws.mean(axis=0)
    mc_se_mean = draws.std(axis=0, ddof=1) / np.sqrt(n_mc)
    dev = draws - mc_mean
    mc_var = (dev ** 2).mean(axis=0)
    mc_se_var = (dev ** 2).std(axis=0, ddof=1) / np.sqrt(n_mc)
    cov_d = np.linalg.inv(proj_d.precision)
    mean_d = cov_d @ proj_d.precision_mean
    z_mean = np.abs(mean_d - mc_mean) / mc_se_mean
    z_var = np.abs(np.diag(cov_d) - mc_var) / mc_se_var
    errs["projdd_z"] = float(max(z_mean.max(), z_var.max()))
    assert errs["projdd_z"] <= 3.0

    # bilinear log-MGF closed form for d=1 zero-mean factors (cap 1e-9)
    worst = 0.0
    for a in (0.2, 0.7, 1.3, 2.0):
        for ab in (0.05, 0.25, 0.5, 0.75, 0.95):
            gu = GaussianD.from_moments([0.0], [[a]])
            gv = GaussianD.from_moments([0.0], [[ab / a]])
            want = -0.5 * np.log1p(-ab)
            for y in (-1, 1):
                worst = max(worst, abs(mgf_bilinear(gu, gv, y) - want))
    errs["mgf1d"] = worst
    assert errs["mgf1d"] <= 1e-9

    # sigmoid-Gaussian convolution vs Monte Carlo on |mean|<=10, var<=25
    zdraw = rng.standard_normal(400_000)
    worst = 0.0
    for m in (-10.0, -6.5, -3.0, -1.0, 0.0, 2.0, 10.0):
        for v in (0.0, 0.5, 2.0, 8.0, 25.0):
            mc = float(np.mean(1.0 / (1.0 + np.exp(-(m + np.sqrt(v) * zdraw)))))
            worst = max(worst, abs(expit_gauss(m, v) - mc))
    errs["expit"] = worst
    assert errs["expit"] <= 0.02

    # EP posterior means vs exhaustive quadrature on the 2-node model
    # (1 edge, 1 non-edge, 5 standard-normal parameters; cap 0.05)
    from numpy.polynomial.hermite_e import hermegauss
    cfg = ModelConfig(latent_dim=0, prior_mean_mu=0.0, prior_var_mu=1.0,
                      convergence_tol=1e-10, max_sweeps=300)
    st = init_priors(cfg, 2, 2)
    out, stats = fit_period(st, np.array([[0, 1]]), np.array([[1, 0]]),
                            cfg, seed=7)
    assert stats.converged
    nodes, wts = hermegauss(15)
    wts = wts / np.sqrt(2 * np.pi)
    grids = np.meshgrid(*([nodes] * 5), indexing="ij")
    w = np.ones_like(grids[0])
    for g in np.meshgrid(*([wts] * 5), indexing="ij"):
        w = w * g
    mu, a0, a1, b0, b1 = (g.ravel() for g in grids)
    w = w.ravel()
    lik = (1.0 / (1.0 + np.exp(-(mu + a0 + b1)))
           * (1.0 - 1.0 / (1.0 + np.exp(-(mu + a1 + b0)))))
    zq = np.sum(w * lik)
    got = [out.mu().mean, out.alpha(0).mean, out.alpha(1).mean,
           out.beta(0).mean, out.beta(1).mean]
    want = [float(np.sum(w * lik * x) / zq) for x in (mu, a0, a1, b0, b1)]
    errs["ep2node"] = float(np.max(np.abs(np.array(got) - np.array(want))))
    assert errs["ep2node"] <= 0.05

    report(7, True,
           "projection 1-D err={proj1d:.2e} (cap 1e-6), d-D {projdd_z:.2f} se "
           "(cap 3), bilinear mgf err={mgf1d:.2e} (cap 1e-9), sigmoid "
           "convolution err={expit:.4f} (cap 0.02), 2-node posterior-mean "
           "err={ep2node:.4f} (cap 0.05)".format(**errs))


# ---------------------------------------------------------------------------
# criterion 8: subgraph scoring vs brute force


def test_criterion_08_subgraph_scores_match_bruteforce():
    # reuses the randomized oracle from the scoring module tests
    from test_scoring import brute_force_alarms, canon, make_scores, random_scores

    from dyadscope.scoring import enumerate_subgraphs

    threshold, bad = -6.0, []
    for g in range(50):
        rng = np.random.default_rng(1000 + g)
        _, pairs = random_scores(rng, hub_biased=bool(g % 2))
        got = canon(enumerate_subgraphs(make_scores(pairs), threshold))
        want = canon(brute_force_alarms(pairs, threshold))
        if got != want:
            bad.append(g)
    report(8, not bad,
           "alarm kinds, members, and scores identical to brute-force "
           f"enumeration on {50 - len(bad)}/50 random graphs"
           + (f" (mismatches: {bad})" if bad else ""))


# ---------------------------------------------------------------------------
# criterion 9: large-roster ingestion, deterministic replay, resume


N_IDS = 27_436
N_SERVERS = 400
N_BUCKETS = 84  # two weeks of 4-hour buckets
BUCKET_S = 4 * 3600
T0 = 17_000 * 86_400  # an exact midnight


@pytest.fixture(scope="module")
def lanl_shaped_file(tmp_path_factory):
    """Two weeks of synthetic flow records shaped like an enterprise log:
    27,436 node ids (every one with outgoing traffic), four-hour buckets
    across 14 days, a header, an extra column, duplicates, malformed lines.
    Week one doubles as the periodicity burn-in when replayed."""
    path = tmp_path_factory.mktemp("flows") / "flows.csv"
    names = [f"C{k + 1}" for k in range(N_IDS)]
    rng = np.random.default_rng(7)
    recs = []

    for k in range(N_IDS):
        b = k % N_BUCKETS
        ts = T0 + b * BUCKET_S + (k * 37) % BUCKET_S
        r = (k * 13) % N_SERVERS
        if names[r] == names[k]:
            r = (r + 1) % N_SERVERS
        recs.append((ts, f"{ts},{names[k]},{names[r]},tcp"))
        if k < 100:
            recs.append(recs[-1])  # same dyad, same bucket: must deduplicate
    for b in range(N_BUCKETS):
        senders = rng.integers(0, 2000, size=400)
        receivers = rng.integers(0, N_SERVERS, size=400)
        offsets = rng.integers(0, BUCKET_S, size=400)
        for s, r, o in zip(senders, receivers, offsets):
            if s == r:
                r = (r + 1) % N_SERVERS
            ts = T0 + b * BUCKET_S + int(o)
            recs.append((ts, f"{ts},{names[s]},{names[r]},udp"))
    # last second of the fortnight, so the trailing bucket counts as covered
    ts = T0 + N_BUCKETS * BUCKET_S - 1
    recs.append((ts, f"{ts},{names[500]},{names[0]},tcp"))

    lines = [line for _, line in sorted(recs, key=lambda r: r[0])]
    for pos, junk in ((1000, "garbage"), (2000, "123,only-one-field"),
                      (3000, "notatime,C1,C2,tcp")):
        lines.insert(pos, junk)
    lines.insert(0, "time,src,dst,proto")
    path.write_text("\n".join(lines) + "\n")
    return path


def _rows_no_wall(result):
    out = []
    for row in result.metrics:
        d = dataclasses.asdict(row)
        d.pop("wall_time_s")
        out.append({k: repr(v) for k, v in d.items()})
    return out


def _alarm_tuples(result):
    return [(a.kind, a.nodes, a.period, a.log_score) for a in result.alarms]


def _states_equal(a, b):
    scalars = ("mu_precision", "mu_precision_mean", "cc_log_q", "period_index")
    arrays = ("alpha_precision", "alpha_precision_mean", "beta_precision",
              "beta_precision_mean", "u_precision", "u_precision_mean",
              "v_precision", "v_precision_mean")
    return (all(getattr(a, f) == getattr(b, f) for f in scalars)
            and all(np.array_equal(getattr(a, f), getattr(b, f))
                    for f in arrays))


def test_criterion_09_enterprise_scale_ingestion_and_replay(
        lanl_shaped_file, tmp_path):
    stats = IngestStats()
    events = list(ingest(lanl_shaped_file, stats=stats))
    assert stats.header_skipped
    assert stats.n_malformed == 3
    table = build_node_table(events, policy="senders")
    assert len(table) == N_IDS

    snaps = list(bucketize(events, 4.0, node_table=table, extend_roster=False))
    assert len(snaps) == N_BUCKETS
    assert all(len(s.edges) > 0 for s in snaps)
    assert snaps[0].n_events > len(snaps[0].edges)  # duplicates collapsed
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # any empty periodicity class warns
        ptable = periodicity_shifts(snaps, len(table))
    assert ptable.shifts.shape == (6, 7)

    # burn-in mode learns the 6x7 shift table from week one, so a prefix
    # replay and the full replay see the identical table
    cfg = RunConfig(
        model=ModelConfig(cc_sampling=SamplingPolicy("edge_multiple")),
        node_policy="senders", periodicity_mode="burnin", seed=20)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r1 = replay(snaps, len(table), cfg)
    r2 = replay(snaps, len(table), cfg)
    same_run = (_rows_no_wall(r1) == _rows_no_wall(r2)
                and _alarm_tuples(r1) == _alarm_tuples(r2)
                and _states_equal(r1.state, r2.state))

    ckpt = tmp_path / "mid.ckpt"
    replay(snaps[:63], len(table), cfg, checkpoint_path=ckpt)
    r3 = replay(snaps, len(table), cfg, resume_from=ckpt)
    resumed = (_rows_no_wall(r3) == _rows_no_wall(r1)
               and _alarm_tuples(r3) == _alarm_tuples(r1)
               and _states_equal(r3.state, r1.state))

    report(9, same_run and resumed,
           f"roster {len(table)} ids, {N_BUCKETS} four-hour buckets, 6x7 "
           f"periodicity classes all populated, {stats.n_malformed} "
           f"malformed lines skipped; repeat replay identical: {same_run}; "
           f"resume from a period-63 checkpoint bit-exact: {resumed}")


# ---------------------------------------------------------------------------
# criterion 10: forgetting-multiplier tuning behavior


def test_criterion_10_forgetting_tuner_selections():
    # the module tests own these scenarios; the gate re-runs them verbatim
    from test_dynamics import (
        test_mu_jump_selects_largest_tau_mu as jump_check,
        test_stationary_data_prefers_no_forgetting as stationary_check,
    )

    stationary_check()
    jump_check()
    report(10, True,
           "stationary draws vote tau=(1,1,1) by majority; a +3 intercept "
           "jump selects tau_mu=2 with the latent group tie-broken to 1")
