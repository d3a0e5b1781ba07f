"""Brute-force collapsed posterior for tiny instances.

Written from the model definition alone, with plain loops, so it shares no
code with the package.  q is integrated out per feature with 64-point
Gauss-Legendre after the change of variable q = u**(1/gamma), which removes
the q**(gamma-1) endpoint singularity of the Beta prior.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import betaln

N_NODES = 64


def q_nodes(gamma, sigma1, n=N_NODES):
    """Quadrature nodes in q and weights that already include the Beta prior."""
    u, wt = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (u + 1.0)
    wt = 0.5 * wt
    q = u ** (1.0 / gamma)
    # Beta(q; gamma, sigma1) dq = (1/gamma) (1-q)^(sigma1-1) / B du
    prior = (1.0 - q) ** (sigma1 - 1.0) / gamma / math.exp(betaln(gamma, sigma1))
    return q, wt * prior


def rising(a, k):
    out = 1.0
    for t in range(k):
        out *= a + t
    return out


def bb_column(c, n, q, sigma2):
    """Pr of one particular length-n binary column with c ones, given q."""
    qp = sigma2 * q / (1.0 - q)
    return rising(qp, c) * rising(sigma2, n - c) / rising(qp + sigma2, n)


def _votes(z, w, i, variant):
    S, P = w.shape[1], w.shape[2]
    if variant == "model1":
        return [z[i, b] for b in range(S)]
    return [z[i, b] * sum(w[i, b, jj] for jj in range(P)) for b in range(S)]


def likelihood(z, w, X, Y, Xp, Yp, card, M, hp, variant, supervised, offset=1.0):
    """Product of the collapsed x (and y) predictives for all training cases."""
    N, S, P = w.shape
    out = 1.0
    for i in range(N):
        v = _votes(z, w, i, variant)
        for j in range(P):
            g = [hp["lambda0"]] * card[j]
            for b in range(S):
                # model1 votes are z-gated via v; model2 via kappa
                g[Xp[b, j]] += hp["lam"] * v[b] * w[i, b, j]
            out *= (g[X[i, j]] + offset) / (sum(g) + offset)
        if supervised:
            h = [hp["mu0"]] * M
            for b in range(S):
                h[Yp[b]] += hp["mu"] * v[b]
            out *= (h[Y[i]] + offset) / (sum(h) + offset)
    return out


def all_states(N, S, P):
    for zbits in itertools.product((0, 1), repeat=N * S):
        z = np.array(zbits, dtype=np.uint8).reshape(N, S)
        for wbits in itertools.product((0, 1), repeat=N * S * P):
            yield z, np.array(wbits, dtype=np.uint8).reshape(N, S, P)


def state_index(z, w):
    """Same bit order as all_states: z bits then w bits, most significant first."""
    bits = np.concatenate([z.ravel(), w.ravel()])
    return int("".join(str(int(b)) for b in bits), 2)


def posterior_zw(X, Y, Xp, Yp, card, M, hp, variant, supervised, offset=1.0):
    """Exact Pr(z, w | data) over every binary state, q marginalized."""
    N, P = X.shape
    S = Xp.shape[0]
    qs, qw = q_nodes(hp["gamma"], hp["sigma1"])
    probs = []
    for z, w in all_states(N, S, P):
        p = 1.0
        for zz in z.ravel():
            p *= hp["alpha"] if zz else 1.0 - hp["alpha"]
        for j in range(P):
            integrand = np.ones_like(qs)
            for b in range(S):
                c = int(w[:, b, j].sum())
                integrand = integrand * np.array([bb_column(c, N, q, hp["sigma2"]) for q in qs])
            p *= float(np.sum(qw * integrand))
        p *= likelihood(z, w, X, Y, Xp, Yp, card, M, hp, variant, supervised, offset)
        probs.append(p)
    probs = np.array(probs)
    return probs / probs.sum()


def predictive_theta(x_r, X, Y, Xp, Yp, card, M, hp, variant, supervised, offset=1.0):
    """Exact label predictive for a new unlabeled case.

    Averages the normalized (h_r + 1) vector over the new case's (z_r, w_r)
    conditional, given each training (z, w, q), weighted by the training
    posterior.  w_r's prior given a training column with c ones is the
    Beta-Binomial predictive (q' + c) / (q' + sigma2 + N).
    """
    N, P = X.shape
    S = Xp.shape[0]
    qs, qw = q_nodes(hp["gamma"], hp["sigma1"])
    s2 = hp["sigma2"]
    # training posterior grouped by the S x P column-count matrix, jointly with q
    grid = list(itertools.product(range(len(qs)), repeat=P))
    post = {}
    for z, w in all_states(N, S, P):
        p = 1.0
        for zz in z.ravel():
            p *= hp["alpha"] if zz else 1.0 - hp["alpha"]
        p *= likelihood(z, w, X, Y, Xp, Yp, card, M, hp, variant, supervised, offset)
        cols = tuple(int(w[:, b, j].sum()) for b in range(S) for j in range(P))
        post[cols] = post.get(cols, 0.0) + p

    new_states = list(all_states(1, S, P))
    lik_new, theta_new = [], []
    for zr, wr in new_states:
        v = _votes(zr, wr, 0, variant)
        lx = 1.0
        for j in range(P):
            g = [hp["lambda0"]] * card[j]
            for b in range(S):
                g[Xp[b, j]] += hp["lam"] * v[b] * wr[0, b, j]
            lx *= (g[x_r[j]] + offset) / (sum(g) + offset)
        pz = 1.0
        for zz in zr.ravel():
            pz *= hp["alpha"] if zz else 1.0 - hp["alpha"]
        lik_new.append(lx * pz)
        h = np.array([hp["mu0"]] * M)
        for b in range(S):
            h[Yp[b]] += hp["mu"] * v[b]
        t = (h + offset) / (h.sum() + M * offset)
        theta_new.append(t / t.sum())
    lik_new = np.array(lik_new)
    theta_new = np.array(theta_new)
    wr_all = np.array([wr[0] for _, wr in new_states])          # K x S x P

    num = np.zeros(M)
    den = 0.0
    for cols, p_lik in post.items():
        c = np.array(cols).reshape(S, P)
        for node in grid:
            q = qs[list(node)]
            weight = p_lik * float(np.prod(qw[list(node)]))
            for j in range(P):
                for b in range(S):
                    weight *= bb_column(c[b, j], N, q[j], s2)
            if weight == 0.0:
                continue
            qp = s2 * q / (1.0 - q)
            pw1 = (qp[None, :] + c) / (qp[None, :] + s2 + N)        # S x P
            prior_w = np.prod(np.where(wr_all == 1, pw1, 1.0 - pw1), axis=(1, 2))
            cond = lik_new * prior_w
            cond = cond / cond.sum()
            num += weight * (cond @ theta_new)
            den += weight
    return num / den
