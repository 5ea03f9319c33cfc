"""Compiled inner loop of the message-passing fitter.

One sweep visits every dyad factor once (in a caller-supplied order) and
applies the five-variable update in-place on flat natural-parameter buffers.
The algebra mirrors ``engine.update_factor`` exactly; that pure-Python
version is the readable reference and the two are cross-checked in tests.

Everything here is hand-rolled loops (Cholesky, solves, inverses) because
latent dimensions are tiny (d <= 8) and per-factor numpy dispatch would
dominate the runtime.  Must live in a real module file for numba's on-disk
cache to work.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


VARIANCE_FLOOR = 1e-10
PRECISION_CEILING = 1e10

# counter slots in the stats array
PD_SKIPS = 0
IMPROPER_SKIPS = 1
CLAMP_EVENTS = 2
FACTORS_PROCESSED = 3


@njit(cache=True)
def _chol(A, L):
    """Lower Cholesky of symmetric A into L (lower triangle only).

    Returns False when A is not positive definite.
    """
    d = A.shape[0]
    for i in range(d):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0 or not np.isfinite(s):
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@njit(cache=True)
def _chol_solve(L, b, x, work):
    """Solve (L L') x = b given the Cholesky factor L."""
    d = L.shape[0]
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * work[k]
        work[i] = s / L[i, i]
    for i in range(d - 1, -1, -1):
        s = work[i]
        for k in range(i + 1, d):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]


@njit(cache=True)
def _chol_inv(L, out, col, x, work):
    """Inverse of (L L') into out, column by column."""
    d = L.shape[0]
    for j in range(d):
        for i in range(d):
            col[i] = 1.0 if i == j else 0.0
        _chol_solve(L, col, x, work)
        for i in range(d):
            out[i, j] = x[i]
    # enforce symmetry against rounding drift
    for i in range(d):
        for j in range(i):
            s = 0.5 * (out[i, j] + out[j, i])
            out[i, j] = s
            out[j, i] = s


@njit(cache=True)
def _logdet_from_chol(L):
    d = L.shape[0]
    s = 0.0
    for i in range(d):
        s += np.log(L[i, i])
    return 2.0 * s


@njit(cache=True)
def sweep(
    order,
    senders,
    receivers,
    labels,
    offset,
    epsilon,
    # state (natural params); mu passed as 1-element views
    mu_p,
    mu_pm,
    a_p,
    a_pm,
    b_p,
    b_pm,
    u_p,
    u_pm,
    v_p,
    v_pm,
    # per-factor messages
    m_mu_p,
    m_mu_pm,
    m_a_p,
    m_a_pm,
    m_b_p,
    m_b_pm,
    m_u_p,
    m_u_pm,
    m_v_p,
    m_v_pm,
    counters,
):
    """One in-place sweep over all factors; returns max natural-param change."""
    d = u_p.shape[1]
    # scratch
    Gu = np.empty((d, d))
    Gv = np.empty((d, d))
    Lu = np.zeros((d, d))
    Lv = np.zeros((d, d))
    La = np.zeros((d, d))
    Su = np.empty((d, d))
    Sv = np.empty((d, d))
    Ssh = np.empty((d, d))
    Sbar = np.empty((d, d))
    Pt = np.empty((d, d))
    Pnew = np.empty((d, d))
    Ltmp = np.zeros((d, d))
    g_u_pm = np.empty(d)
    g_v_pm = np.empty(d)
    mean_u = np.empty(d)
    mean_v = np.empty(d)
    h = np.empty(d)
    z = np.empty(d)
    msh = np.empty(d)
    mbar = np.empty(d)
    pm_t = np.empty(d)
    pm_new = np.empty(d)
    col = np.empty(d)
    xwork = np.empty(d)
    work = np.empty(d)

    eps1 = 1.0 - epsilon
    max_delta = 0.0

    for idx in range(order.shape[0]):
        k = order[idx]
        i = senders[k]
        j = receivers[k]
        y = labels[k]
        counters[FACTORS_PROCESSED] += 1

        # ---- inclusive densities g = q * m (natural params add)
        g_mu_p = mu_p[0] + m_mu_p[k]
        g_mu_pm = mu_pm[0] + m_mu_pm[k]
        g_a_p = a_p[i] + m_a_p[k]
        g_a_pm = a_pm[i] + m_a_pm[k]
        g_b_p = b_p[j] + m_b_p[k]
        g_b_pm = b_pm[j] + m_b_pm[k]
        if g_mu_p <= 0.0 or g_a_p <= 0.0 or g_b_p <= 0.0:
            counters[IMPROPER_SKIPS] += 1
            continue

        log_mgf_uv = 0.0
        if d > 0:
            for r in range(d):
                g_u_pm[r] = u_pm[i, r] + m_u_pm[k, r]
                g_v_pm[r] = v_pm[j, r] + m_v_pm[k, r]
                for c in range(d):
                    Gu[r, c] = u_p[i, r, c] + m_u_p[k, r, c]
                    Gv[r, c] = v_p[j, r, c] + m_v_p[k, r, c]
            if not _chol(Gu, Lu) or not _chol(Gv, Lv):
                counters[IMPROPER_SKIPS] += 1
                continue
            _chol_inv(Lu, Su, col, xwork, work)
            _chol_inv(Lv, Sv, col, xwork, work)
            _chol_solve(Lu, g_u_pm, mean_u, work)
            _chol_solve(Lv, g_v_pm, mean_v, work)

            # log E[exp(-y u.v)] via integrating v out: needs Gv - Su > 0
            for r in range(d):
                for c in range(d):
                    La[r, c] = Gv[r, c] - Su[r, c]
            if not _chol(La, Ltmp):
                counters[PD_SKIPS] += 1
                continue
            for r in range(d):
                h[r] = g_v_pm[r] - y * mean_u[r]
            # z = Ltmp^{-1} h (forward substitution); h' A^{-1} h = ||z||^2
            for r in range(d):
                s = h[r]
                for c in range(r):
                    s -= Ltmp[r, c] * z[c]
                z[r] = s / Ltmp[r, r]
            zz = 0.0
            mv_dot = 0.0
            for r in range(d):
                zz += z[r] * z[r]
                mv_dot += mean_v[r] * g_v_pm[r]
            log_mgf_uv = (
                -0.5 * _logdet_from_chol(Ltmp)
                + 0.5 * _logdet_from_chol(Lv)
                - 0.5 * mv_dot
                + 0.5 * zz
            )

        # ---- mixture weight c across all factor terms, in log space
        log_c = -y * offset
        log_c += -y * (g_mu_pm / g_mu_p) + 0.5 / g_mu_p
        log_c += -y * (g_a_pm / g_a_p) + 0.5 / g_a_p
        log_c += -y * (g_b_pm / g_b_p) + 0.5 / g_b_p
        log_c += log_mgf_uv
        if not np.isfinite(log_c):
            counters[IMPROPER_SKIPS] += 1
            continue
        if log_c >= 0.0:
            w2 = 1.0 / (1.0 + np.exp(-log_c))
        else:
            e = np.exp(log_c)
            w2 = e / (1.0 + e)
        w1 = 1.0 - w2

        # ---- scalar variables: mu, alpha_i, beta_j
        for which in range(3):
            if which == 0:
                q_p = mu_p[0]
                q_pm = mu_pm[0]
                g_p = g_mu_p
                g_pm = g_mu_pm
            elif which == 1:
                q_p = a_p[i]
                q_pm = a_pm[i]
                g_p = g_a_p
                g_pm = g_a_pm
            else:
                q_p = b_p[j]
                q_pm = b_pm[j]
                g_p = g_b_p
                g_pm = g_b_pm

            s2 = 1.0 / g_p
            mg = g_pm * s2
            mean_bar = mg - w2 * y * s2
            var_bar = s2 * (1.0 + w1 * w2 * s2)
            p_t = 1.0 / var_bar
            pmt = p_t * mean_bar
            p_new = epsilon * q_p + eps1 * p_t
            pm_new_s = epsilon * q_pm + eps1 * pmt
            if p_new <= 0.0 or not np.isfinite(p_new) or not np.isfinite(pm_new_s):
                counters[IMPROPER_SKIPS] += 1
                continue
            if p_new > PRECISION_CEILING:
                f = PRECISION_CEILING / p_new
                p_new = PRECISION_CEILING
                pm_new_s *= f
                counters[CLAMP_EVENTS] += 1
            elif p_new < VARIANCE_FLOOR:
                f = VARIANCE_FLOOR / p_new
                p_new = VARIANCE_FLOOR
                pm_new_s *= f
                counters[CLAMP_EVENTS] += 1
            dp = abs(p_new - q_p)
            dpm = abs(pm_new_s - q_pm)
            if dp > max_delta:
                max_delta = dp
            if dpm > max_delta:
                max_delta = dpm
            if which == 0:
                m_mu_p[k] += p_new - q_p
                m_mu_pm[k] += pm_new_s - q_pm
                mu_p[0] = p_new
                mu_pm[0] = pm_new_s
            elif which == 1:
                m_a_p[k] += p_new - q_p
                m_a_pm[k] += pm_new_s - q_pm
                a_p[i] = p_new
                a_pm[i] = pm_new_s
            else:
                m_b_p[k] += p_new - q_p
                m_b_pm[k] += pm_new_s - q_pm
                b_p[j] = p_new
                b_pm[j] = pm_new_s

        # ---- latent blocks
        if d > 0:
            for side in range(2):
                # side 0: u_i shifted by v's moments; side 1: v_j
                if side == 0:
                    # shifted precision A = Gu - Sv, pm h = g_u_pm - y mean_v
                    for r in range(d):
                        h[r] = g_u_pm[r] - y * mean_v[r]
                        for c in range(d):
                            La[r, c] = Gu[r, c] - Sv[r, c]
                else:
                    for r in range(d):
                        h[r] = g_v_pm[r] - y * mean_u[r]
                        for c in range(d):
                            La[r, c] = Gv[r, c] - Su[r, c]
                if not _chol(La, Ltmp):
                    counters[PD_SKIPS] += 1
                    continue
                _chol_inv(Ltmp, Ssh, col, xwork, work)
                _chol_solve(Ltmp, h, msh, work)
                if side == 0:
                    gm = mean_u
                    GS = Su
                else:
                    gm = mean_v
                    GS = Sv
                for r in range(d):
                    mbar[r] = w1 * gm[r] + w2 * msh[r]
                for r in range(d):
                    d1r = gm[r] - mbar[r]
                    d2r = msh[r] - mbar[r]
                    for c in range(d):
                        d1c = gm[c] - mbar[c]
                        d2c = msh[c] - mbar[c]
                        Sbar[r, c] = w1 * (GS[r, c] + d1r * d1c) + w2 * (
                            Ssh[r, c] + d2r * d2c
                        )
                if not _chol(Sbar, Ltmp):
                    counters[IMPROPER_SKIPS] += 1
                    continue
                _chol_inv(Ltmp, Pt, col, xwork, work)
                _chol_solve(Ltmp, mbar, pm_t, work)
                # damped/extrapolated new belief
                if side == 0:
                    for r in range(d):
                        pm_new[r] = epsilon * u_pm[i, r] + eps1 * pm_t[r]
                        for c in range(d):
                            Pnew[r, c] = epsilon * u_p[i, r, c] + eps1 * Pt[r, c]
                else:
                    for r in range(d):
                        pm_new[r] = epsilon * v_pm[j, r] + eps1 * pm_t[r]
                        for c in range(d):
                            Pnew[r, c] = epsilon * v_p[j, r, c] + eps1 * Pt[r, c]
                if not _chol(Pnew, Ltmp):
                    counters[IMPROPER_SKIPS] += 1
                    continue
                maxdiag = 0.0
                for r in range(d):
                    if Pnew[r, r] > maxdiag:
                        maxdiag = Pnew[r, r]
                if maxdiag > PRECISION_CEILING:
                    f = PRECISION_CEILING / maxdiag
                    for r in range(d):
                        pm_new[r] *= f
                        for c in range(d):
                            Pnew[r, c] *= f
                    counters[CLAMP_EVENTS] += 1
                # deltas + commit state and message
                if side == 0:
                    for r in range(d):
                        dpm = abs(pm_new[r] - u_pm[i, r])
                        if dpm > max_delta:
                            max_delta = dpm
                        for c in range(d):
                            dp = abs(Pnew[r, c] - u_p[i, r, c])
                            if dp > max_delta:
                                max_delta = dp
                    for r in range(d):
                        m_u_pm[k, r] += pm_new[r] - u_pm[i, r]
                        u_pm[i, r] = pm_new[r]
                        for c in range(d):
                            m_u_p[k, r, c] += Pnew[r, c] - u_p[i, r, c]
                            u_p[i, r, c] = Pnew[r, c]
                else:
                    for r in range(d):
                        dpm = abs(pm_new[r] - v_pm[j, r])
                        if dpm > max_delta:
                            max_delta = dpm
                        for c in range(d):
                            dp = abs(Pnew[r, c] - v_p[j, r, c])
                            if dp > max_delta:
                                max_delta = dp
                    for r in range(d):
                        m_v_pm[k, r] += pm_new[r] - v_pm[j, r]
                        v_pm[j, r] = pm_new[r]
                        for c in range(d):
                            m_v_p[k, r, c] += Pnew[r, c] - v_p[j, r, c]
                            v_p[j, r, c] = Pnew[r, c]

    return max_delta
