"""numba kernels for the collapsed Metropolis-within-Gibbs sampler.

Layout conventions shared by every kernel:

    X (N, P), Y (N,)        cases being explained; Y[i] < 0 means no label term
    Xp (S, P), Yp (S,)      parent set
    z (N, S), w (N, S, P)   uint8 indicators
    cnt (N, P, Vmax)        vote counts behind g, weighted by 1 (model1) or kappa (model2)
    tot (N, P)              cnt summed over outcomes
    hc (N, M), htot (N,)    vote counts behind h
    col (S, P)              number of cases with w_ibj = 1
    wsum (N, S)             sum_j w_ibj, ungated by z

``hp`` packs (alpha, gamma, sigma1, sigma2, lambda0, lambda, mu0, mu).

Every log in the hot loops depends on an integer count, so they are read
from tables (see :func:`make_tables`):

    LA[c]     log(lambda0 + lambda*c + 1)
    LB[j, t]  log(V_j*lambda0 + lambda*t + 1)
    HA[c]     log(mu0 + mu*c + 1)
    HB[t]     log(M*mu0 + mu*t + 1)
    PA[j, c]  log(q'_j + c)             refreshed whenever q_j moves
    PB[c]     log(sigma2 + n_other - c)

Random numbers come from numba's internal generator, seeded on entry.
"""

from math import exp, lgamma, log, log1p

import numpy as np
from numba import njit

# Helpers called per update never allocate. Compiling them without the
# runtime's reference counting drops an atomic incref/decref per array
# argument per call, which otherwise dominates the sweep.
_hot = njit(cache=True, _nrt=False)

ALPHA, GAMMA, SIGMA1, SIGMA2, LAM0, LAM, MU0, MU, OFF = range(9)
Q_LO = 1e-9
Q_HI = 1.0 - 1e-9


@_hot
def _lbeta(a, b):
    return lgamma(a) + lgamma(b) - lgamma(a + b)


@_hot
def _sigmoid(d):
    if d >= 0:
        return 1.0 / (1.0 + exp(-d))
    e = exp(d)
    return e / (1.0 + e)


@_hot
def refresh_prior_row(PA, j, qj, hp):
    qp = hp[SIGMA2] * qj / (1.0 - qj)
    for c in range(PA.shape[1]):
        PA[j, c] = log(qp + c)


@njit(cache=True)
def make_tables(card, M, S, variant, hp, q, n_other):
    P = card.shape[0]
    cmax = S if variant == 1 else S * P
    LA = np.empty(cmax + 1)
    HA = np.empty(cmax + 1)
    HB = np.empty(cmax + 1)
    LB = np.empty((P, cmax + 1))
    for c in range(cmax + 1):
        LA[c] = log(hp[LAM0] + hp[LAM] * c + hp[OFF])
        HA[c] = log(hp[MU0] + hp[MU] * c + hp[OFF])
        HB[c] = log(M * hp[MU0] + hp[MU] * c + hp[OFF])
        for j in range(P):
            LB[j, c] = log(card[j] * hp[LAM0] + hp[LAM] * c + hp[OFF])
    PA = np.empty((P, n_other + 1))
    for j in range(P):
        refresh_prior_row(PA, j, q[j], hp)
    PB = np.empty(n_other + 1)
    for c in range(n_other + 1):
        PB[c] = log(hp[SIGMA2] + n_other - c)
    return LA, LB, HA, HB, PA, PB


@_hot
def _weight(i, b, z, wsum, variant):
    if z[i, b] == 0:
        return 0
    if variant == 1:
        return 1
    return wsum[i, b]


@_hot
def _apply(i, b, e, X, Xp, Yp, w, cnt, tot, hc, htot):
    """Add e votes from parent b to case i over its currently active features."""
    if e == 0:
        return
    P = X.shape[1]
    for j in range(P):
        if w[i, b, j]:
            cnt[i, j, Xp[b, j]] += e
            tot[i, j] += e
    if Yp[b] >= 0:
        hc[i, Yp[b]] += e
        htot[i] += e


@_hot
def z_logodds(i, b, X, Y, Xp, Yp, hp, variant, use_label,
              z, w, wsum, cnt, tot, hc, htot, tabs):
    """log Pr(z_ib=1 | rest) - log Pr(z_ib=0 | rest), for 0 < alpha < 1."""
    LA, LB, HA, HB, PA, PB = tabs
    P = X.shape[1]
    e1 = 1 if variant == 1 else wsum[i, b]
    d = log(hp[ALPHA]) - log1p(-hp[ALPHA])
    if e1 == 0:
        return d
    ecur = z[i, b] * e1
    for j in range(P):
        if w[i, b, j]:
            xv = X[i, j]
            m = 1 if Xp[b, j] == xv else 0
            bx = cnt[i, j, xv] - ecur * m
            bt = tot[i, j] - ecur
            d += LA[bx + e1 * m] - LB[j, bt + e1] - LA[bx] + LB[j, bt]
    if use_label and Y[i] >= 0 and Yp[b] >= 0:
        yv = Y[i]
        m = 1 if Yp[b] == yv else 0
        bx = hc[i, yv] - ecur * m
        bt = htot[i] - ecur
        d += HA[bx + e1 * m] - HB[bt + e1] - HA[bx] + HB[bt]
    return d


@_hot
def _w_prior_odds(b, j, w_cur, col, train, PA, PB):
    c_oth = col[b, j] - w_cur if train else col[b, j]
    return PA[j, c_oth] - PB[c_oth]


@_hot
def _w_votes_model1(i, b, j, X, Xp, w, cnt, tot, LA, LB):
    cur = w[i, b, j]
    xv = X[i, j]
    m = 1 if Xp[b, j] == xv else 0
    bx = cnt[i, j, xv] - cur * m
    bt = tot[i, j] - cur
    return LA[bx + m] - LB[j, bt + 1] - LA[bx] + LB[j, bt]


@_hot
def _w_votes_model2(i, b, j, X, Y, Xp, Yp, use_label, w, wsum, cnt, tot, hc, htot,
                    LA, LB, HA, HB):
    # flipping w_ibj moves kappa_ib, which reweights every active feature
    P = X.shape[1]
    cur = w[i, b, j]
    s_m = wsum[i, b] - cur
    ecur = s_m + cur
    s1 = s_m + 1
    d = 0.0
    for jj in range(P):
        if jj == j:
            on = cur
        else:
            on = w[i, b, jj]
            if on == 0:
                continue
        xv = X[i, jj]
        m = 1 if Xp[b, jj] == xv else 0
        bx = cnt[i, jj, xv] - on * ecur * m
        bt = tot[i, jj] - on * ecur
        d += LA[bx + s1 * m] - LB[jj, bt + s1]
        if jj != j:
            d -= LA[bx + s_m * m] - LB[jj, bt + s_m]
        else:
            d -= LA[bx] - LB[jj, bt]
    if use_label and Y[i] >= 0 and Yp[b] >= 0:
        m = 1 if Yp[b] == Y[i] else 0
        bx = hc[i, Y[i]] - ecur * m
        bt = htot[i] - ecur
        d += HA[bx + s1 * m] - HB[bt + s1] - HA[bx + s_m * m] + HB[bt + s_m]
    return d


@_hot
def w_logodds(i, b, j, X, Y, Xp, Yp, variant, use_label,
              z, w, wsum, col, train, cnt, tot, hc, htot, tabs):
    """log Pr(w_ibj=1 | rest) - log Pr(w_ibj=0 | rest).

    With ``train`` the case is one of the cases counted in ``col``; otherwise
    it is a new case and ``col`` holds the training counts only.
    """
    LA, LB, HA, HB, PA, PB = tabs
    d = _w_prior_odds(b, j, w[i, b, j], col, train, PA, PB)
    if z[i, b] == 0:
        return d
    if variant == 1:
        return d + _w_votes_model1(i, b, j, X, Xp, w, cnt, tot, LA, LB)
    return d + _w_votes_model2(i, b, j, X, Y, Xp, Yp, use_label, w, wsum,
                               cnt, tot, hc, htot, LA, LB, HA, HB)


@_hot
def q_logdensity(j, qj, hp, col, n_total):
    """Unnormalized log density of q_j given the w columns (no Jacobian)."""
    if qj <= 0.0 or qj >= 1.0:
        return -np.inf
    qp = hp[SIGMA2] * qj / (1.0 - qj)
    out = (hp[GAMMA] - 1.0) * log(qj) + (hp[SIGMA1] - 1.0) * log1p(-qj)
    lb0 = _lbeta(qp, hp[SIGMA2])
    for b in range(col.shape[0]):
        c = col[b, j]
        out += _lbeta(qp + c, hp[SIGMA2] + n_total - c) - lb0
    return out


@_hot
def _update_z(i, b, X, Y, Xp, Yp, hp, variant, use_label,
              z, w, wsum, cnt, tot, hc, htot, tabs):
    cur = z[i, b]
    a = hp[ALPHA]
    if a <= 0.0:
        new = 0
    elif a >= 1.0:
        new = 1
    else:
        d = z_logodds(i, b, X, Y, Xp, Yp, hp, variant, use_label,
                      z, w, wsum, cnt, tot, hc, htot, tabs)
        new = 1 if np.random.random() < _sigmoid(d) else 0
    if new != cur:
        e1 = 1 if variant == 1 else wsum[i, b]
        _apply(i, b, (new - cur) * e1, X, Xp, Yp, w, cnt, tot, hc, htot)
        z[i, b] = new


@_hot
def _update_w(i, b, j, X, Y, Xp, Yp, variant, use_label,
              z, w, wsum, col, train, cnt, tot, hc, htot, tabs):
    d = w_logodds(i, b, j, X, Y, Xp, Yp, variant, use_label,
                  z, w, wsum, col, train, cnt, tot, hc, htot, tabs)
    new = 1 if np.random.random() < _sigmoid(d) else 0
    cur = w[i, b, j]
    if new == cur:
        return
    if z[i, b] == 0:
        w[i, b, j] = new
        wsum[i, b] += new - cur
    elif variant == 1:
        # only feature j's vote moves
        xb = Xp[b, j]
        cnt[i, j, xb] += new - cur
        tot[i, j] += new - cur
        w[i, b, j] = new
        wsum[i, b] += new - cur
    else:
        _apply(i, b, -wsum[i, b], X, Xp, Yp, w, cnt, tot, hc, htot)
        w[i, b, j] = new
        wsum[i, b] += new - cur
        _apply(i, b, wsum[i, b], X, Xp, Yp, w, cnt, tot, hc, htot)
    if train:
        col[b, j] += new - cur


@_hot
def _update_q(j, q, hp, col, n_total, step, PA):
    """Random-walk MH on logit(q_j); returns 1 when the proposal is accepted."""
    qj = q[j]
    u = log(qj) - log1p(-qj)
    u2 = u + step * np.random.standard_normal()
    q2 = _sigmoid(u2)
    if q2 < Q_LO or q2 > Q_HI:
        return 0
    # Jacobian of the logit transform: dq/du = q(1-q)
    l_new = q_logdensity(j, q2, hp, col, n_total) + log(q2) + log1p(-q2)
    l_old = q_logdensity(j, qj, hp, col, n_total) + log(qj) + log1p(-qj)
    if log(np.random.random()) < l_new - l_old:
        q[j] = q2
        refresh_prior_row(PA, j, q2, hp)
        return 1
    return 0


@njit(cache=True)
def _sweep(X, Y, Xp, Yp, hp, variant, use_label, z, w, wsum, q,
           col, cnt, tot, hc, htot, step, accepts, tabs):
    N, S = z.shape
    P = X.shape[1]
    for i in range(N):
        for b in range(S):
            _update_z(i, b, X, Y, Xp, Yp, hp, variant, use_label,
                      z, w, wsum, cnt, tot, hc, htot, tabs)
    for j in range(P):
        accepts[j] += _update_q(j, q, hp, col, N, step, tabs[4])
    for i in range(N):
        for b in range(S):
            for j in range(P):
                _update_w(i, b, j, X, Y, Xp, Yp, variant, use_label,
                          z, w, wsum, col, True, cnt, tot, hc, htot, tabs)


@njit(cache=True)
def recount(X, Xp, Yp, Vmax, M, variant, z, w):
    """Rebuild every cached count from the raw state."""
    N, S, P = w.shape
    cnt = np.zeros((N, P, Vmax), dtype=np.int64)
    tot = np.zeros((N, P), dtype=np.int64)
    hc = np.zeros((N, M), dtype=np.int64)
    htot = np.zeros(N, dtype=np.int64)
    col = np.zeros((S, P), dtype=np.int64)
    wsum = np.zeros((N, S), dtype=np.int64)
    for i in range(N):
        for b in range(S):
            s = 0
            for j in range(P):
                s += w[i, b, j]
                col[b, j] += w[i, b, j]
            wsum[i, b] = s
    for i in range(N):
        for b in range(S):
            e = _weight(i, b, z, wsum, variant)
            _apply(i, b, e, X, Xp, Yp, w, cnt, tot, hc, htot)
    return cnt, tot, hc, htot, col, wsum


@njit(cache=True)
def _check_cache(X, Xp, Yp, M, variant, z, w, wsum, col, cnt, tot, hc, htot):
    c2, t2, h2, ht2, col2, ws2 = recount(X, Xp, Yp, cnt.shape[2], M, variant, z, w)
    return (np.all(c2 == cnt) and np.all(t2 == tot) and np.all(h2 == hc)
            and np.all(ht2 == htot) and np.all(col2 == col) and np.all(ws2 == wsum))


@njit(cache=True)
def log_posterior(X, Y, hp, use_label, z, q, col, cnt, tot, hc, htot, tabs):
    """Collapsed log posterior of (z, w, q) up to a constant."""
    LA, LB, HA, HB, PA, PB = tabs
    N, P = X.shape
    S = col.shape[0]
    out = 0.0
    lbq = _lbeta(hp[GAMMA], hp[SIGMA1])
    for j in range(P):
        out += q_logdensity(j, q[j], hp, col, N) - lbq
    for i in range(N):
        for j in range(P):
            out += LA[cnt[i, j, X[i, j]]] - LB[j, tot[i, j]]
        if use_label and Y[i] >= 0:
            out += HA[hc[i, Y[i]]] - HB[htot[i]]
    a = hp[ALPHA]
    for i in range(N):
        for b in range(S):
            if z[i, b]:
                if a < 1.0:
                    out += log(a)
            elif a > 0.0:
                out += log1p(-a)
    return out


@njit(cache=True)
def _pack_w(w, out):
    N, S, P = w.shape
    t = 0
    for i in range(N):
        for b in range(S):
            for j in range(P):
                if w[i, b, j]:
                    out[t >> 3] |= np.uint8(1 << (t & 7))
                t += 1


@njit(cache=True)
def run_sweeps(X, Y, Xp, Yp, card, M, hp, variant, use_label, z, w, wsum, q,
               col, cnt, tot, hc, htot, n_sweeps, step, seed, debug, accepts):
    """Run sweeps in place without storing samples."""
    np.random.seed(seed)
    tabs = make_tables(card, M, z.shape[1], variant, hp, q, z.shape[0] - 1)
    for _ in range(n_sweeps):
        _sweep(X, Y, Xp, Yp, hp, variant, use_label, z, w, wsum, q,
               col, cnt, tot, hc, htot, step, accepts, tabs)
        if debug and not _check_cache(X, Xp, Yp, M, variant, z, w, wsum, col,
                                      cnt, tot, hc, htot):
            raise RuntimeError("count cache diverged from a fresh recount")


@njit(cache=True)
def logodds_train(i, b, j, X, Y, Xp, Yp, card, M, hp, variant, use_label,
                  z, w, wsum, q, col, cnt, tot, hc, htot):
    """Conditional log-odds of z_ib (j < 0) or w_ibj for a training case."""
    tabs = make_tables(card, M, z.shape[1], variant, hp, q, z.shape[0] - 1)
    if j < 0:
        return z_logodds(i, b, X, Y, Xp, Yp, hp, variant, use_label,
                         z, w, wsum, cnt, tot, hc, htot, tabs)
    return w_logodds(i, b, j, X, Y, Xp, Yp, variant, use_label,
                     z, w, wsum, col, True, cnt, tot, hc, htot, tabs)


@njit(cache=True)
def run_chain(X, Y, Xp, Yp, card, M, hp, variant, use_label, z, w, wsum, q,
              col, cnt, tot, hc, htot, n_iter, burn_in, thin, step, seed, debug):
    N, S = z.shape
    P = X.shape[1]
    K = (n_iter - burn_in) // thin
    nbytes = (N * S * P + 7) // 8
    q_s = np.empty((K, P))
    z_s = np.empty((K, N, S), dtype=np.uint8)
    w_s = np.zeros((K, nbytes), dtype=np.uint8)
    col_s = np.empty((K, S, P), dtype=np.int32)
    trace = np.empty(n_iter)
    accepts = np.zeros(P, dtype=np.int64)
    np.random.seed(seed)
    tabs = make_tables(card, M, S, variant, hp, q, N - 1)
    k = 0
    for t in range(n_iter):
        _sweep(X, Y, Xp, Yp, hp, variant, use_label, z, w, wsum, q,
               col, cnt, tot, hc, htot, step, accepts, tabs)
        if debug and not _check_cache(X, Xp, Yp, M, variant, z, w, wsum, col,
                                      cnt, tot, hc, htot):
            raise RuntimeError("count cache diverged from a fresh recount")
        trace[t] = log_posterior(X, Y, hp, use_label, z, q, col, cnt, tot, hc, htot, tabs)
        if t >= burn_in and (t - burn_in + 1) % thin == 0 and k < K:
            q_s[k] = q
            z_s[k] = z
            _pack_w(w, w_s[k])
            col_s[k] = col
            k += 1
    return q_s, z_s, w_s, col_s, trace, accepts


@njit(cache=True)
def infer_new_case(xr, yr, Xp, Yp, card, Vmax, M, hp, variant, q_s, col_s,
                   n_train, n_sweeps, seed):
    """Conditional sampling of one new case's (z_r, w_r) per retained sample.

    Training variables are held at each retained sample; the new case's chain
    carries its last state from one retained sample to the next.
    Returns (theta, z draws, w draws).
    """
    S, P = Xp.shape
    K = q_s.shape[0]
    np.random.seed(seed)
    X = xr.reshape(1, P)
    Y = np.full(1, yr, dtype=np.int64)
    use_label = yr >= 0
    z = np.zeros((1, S), dtype=np.uint8)
    w = np.zeros((1, S, P), dtype=np.uint8)
    for b in range(S):
        if np.random.random() < hp[ALPHA]:
            z[0, b] = 1
        for j in range(P):
            if np.random.random() < 0.5:
                w[0, b, j] = 1
    cnt, tot, hc, htot, _, wsum = recount(X, Xp, Yp, Vmax, M, variant, z, w)
    tabs = make_tables(card, M, S, variant, hp, q_s[0], n_train)
    PA = tabs[4]
    theta = np.zeros(M)
    z_d = np.empty((K, S), dtype=np.uint8)
    w_d = np.empty((K, S, P), dtype=np.uint8)
    for k in range(K):
        for j in range(P):
            refresh_prior_row(PA, j, q_s[k, j], hp)
        col = col_s[k]
        for _ in range(n_sweeps):
            for b in range(S):
                _update_z(0, b, X, Y, Xp, Yp, hp, variant, use_label,
                          z, w, wsum, cnt, tot, hc, htot, tabs)
            for b in range(S):
                for j in range(P):
                    _update_w(0, b, j, X, Y, Xp, Yp, variant, use_label,
                              z, w, wsum, col, False, cnt, tot, hc, htot, tabs)
        # label predictive (h+1)/(sum h + 1), renormalized over the classes
        denom = M * hp[MU0] + hp[MU] * htot[0] + M * hp[OFF]
        for m in range(M):
            theta[m] += (hp[MU0] + hp[MU] * hc[0, m] + hp[OFF]) / denom
        z_d[k] = z[0]
        w_d[k] = w[0]
    return theta / K, z_d, w_d
