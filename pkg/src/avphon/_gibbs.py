"""Compiled kernels for the collapsed Gibbs sampler.

Data are centered on the prior mean, so the NIW prior mean is zero here.
Per-cluster state is the point count, the sum of points and the lower
Cholesky factor of the posterior scale matrix

    Psi_n = Psi_0 + sum_i (x_i - xbar)(x_i - xbar)^T + (kappa_0 n / kappa_n) xbar xbar^T.

Adding x to a cluster with posterior mean mu_n is the rank-one update
``Psi_n + kappa_n/(kappa_n+1) (x - mu_n)(x - mu_n)^T``; removal is the
matching downdate, with a rebuild from the member points when the downdate
loses positive definiteness.
"""

import math

import numpy as np
from numba import njit

LOG_PI = math.log(math.pi)


@njit(cache=True)
def _chol_rank1(L, v, sign):
    """In-place rank-one update (sign=+1) or downdate (sign=-1) of lower factor L.

    ``v`` is overwritten. Returns False when a downdate breaks positive definiteness.
    """
    d = L.shape[0]
    for k in range(d):
        lkk = L[k, k]
        r2 = lkk * lkk + sign * v[k] * v[k]
        if r2 <= 0.0:
            return False
        r = math.sqrt(r2)
        c = r / lkk
        s = v[k] / lkk
        L[k, k] = r
        for i in range(k + 1, d):
            L[i, k] = (L[i, k] + sign * s * v[i]) / c
            v[i] = c * v[i] - s * L[i, k]
    return True


@njit(cache=True)
def _logdet(L):
    acc = 0.0
    for k in range(L.shape[0]):
        acc += math.log(L[k, k])
    return 2.0 * acc


@njit(cache=True)
def _rebuild(X, z, slot, n_k, psi0, kappa0, out_L):
    """Recompute the Cholesky factor of Psi_n for one cluster from its members."""
    n, d = X.shape
    mean = np.zeros(d)
    for i in range(n):
        if z[i] == slot:
            for a in range(d):
                mean[a] += X[i, a]
    for a in range(d):
        mean[a] /= n_k
    psi = psi0.copy()
    diff = np.empty(d)
    for i in range(n):
        if z[i] == slot:
            for a in range(d):
                diff[a] = X[i, a] - mean[a]
            for a in range(d):
                for b in range(a + 1):
                    psi[a, b] += diff[a] * diff[b]
    f = kappa0 * n_k / (kappa0 + n_k)
    for a in range(d):
        for b in range(a + 1):
            psi[a, b] += f * mean[a] * mean[b]
            psi[b, a] = psi[a, b]
    out_L[:, :] = np.linalg.cholesky(psi)


@njit(cache=True)
def _student_t_logpdf(x, L, logdet_psi, sums, n_k, kappa0, nu0, work):
    d = x.shape[0]
    kn = kappa0 + n_k
    nun = nu0 + n_k
    dof = nun - d + 1.0
    c = (kn + 1.0) / (kn * dof)
    # forward substitution L y = x - mu
    maha = 0.0
    for a in range(d):
        acc = x[a] - sums[a] / kn
        for b in range(a):
            acc -= L[a, b] * work[b]
        work[a] = acc / L[a, a]
        maha += work[a] * work[a]
    maha /= c
    logdet_sigma = d * math.log(c) + logdet_psi
    return (math.lgamma(0.5 * (dof + d)) - math.lgamma(0.5 * dof)
            - 0.5 * d * (math.log(dof) + LOG_PI) - 0.5 * logdet_sigma
            - 0.5 * (dof + d) * math.log1p(maha / dof))


@njit(cache=True)
def _log_mvgamma(a, d):
    acc = 0.25 * d * (d - 1) * LOG_PI
    for j in range(1, d + 1):
        acc += math.lgamma(a + 0.5 * (1 - j))
    return acc


@njit(cache=True)
def joint_log_prob(counts, chol, active, n, alpha, kappa0, nu0, logdet_psi0, d):
    """log p(z) under the CRP plus sum of NIW log marginal likelihoods."""
    lp = math.lgamma(alpha) - math.lgamma(n + alpha)
    for k in range(counts.shape[0]):
        if not active[k]:
            continue
        nk = counts[k]
        kn = kappa0 + nk
        nun = nu0 + nk
        lp += math.log(alpha) + math.lgamma(nk)
        lp += (-0.5 * nk * d * LOG_PI + _log_mvgamma(0.5 * nun, d) - _log_mvgamma(0.5 * nu0, d)
               + 0.5 * nu0 * logdet_psi0 - 0.5 * nun * _logdet(chol[k])
               + 0.5 * d * (math.log(kappa0) - math.log(kn)))
    return lp


@njit(cache=True)
def rebuild_all(X, z, counts, chol, logdets, active, psi0, kappa0):
    """Recompute every active cluster's factor in two passes over the data."""
    n, d = X.shape
    cap = counts.shape[0]
    means = np.zeros((cap, d))
    for i in range(n):
        k = z[i]
        for a in range(d):
            means[k, a] += X[i, a]
    for k in range(cap):
        if active[k]:
            for a in range(d):
                means[k, a] /= counts[k]
    scatter = np.zeros((cap, d, d))
    diff = np.empty(d)
    for i in range(n):
        k = z[i]
        for a in range(d):
            diff[a] = X[i, a] - means[k, a]
        for a in range(d):
            da = diff[a]
            for b in range(a + 1):
                scatter[k, a, b] += da * diff[b]
    for k in range(cap):
        if not active[k]:
            continue
        f = kappa0 * counts[k] / (kappa0 + counts[k])
        psi = psi0.copy()
        for a in range(d):
            for b in range(a + 1):
                psi[a, b] += scatter[k, a, b] + f * means[k, a] * means[k, b]
                psi[b, a] = psi[a, b]
        chol[k, :, :] = np.linalg.cholesky(psi)
        logdets[k] = _logdet(chol[k])


@njit(cache=True)
def sweep(X, order, uniforms, z, counts, sums, chol, logdets, active,
          psi0, chol0, logdet0, kappa0, nu0, alpha):
    """One Gibbs sweep over ``order``. Returns -1 on success, or the index
    into ``order`` at which slot capacity ran out (the caller grows and resumes).
    """
    n, d = X.shape
    cap = counts.shape[0]
    x = np.empty(d)
    v = np.empty(d)
    work = np.empty(d)
    zero = np.zeros(d)
    logw = np.empty(cap + 1)
    log_alpha = math.log(alpha)
    for t in range(order.shape[0]):
        i = order[t]
        for a in range(d):
            x[a] = X[i, a]
        k = z[i]
        # remove point i from its cluster
        counts[k] -= 1
        for a in range(d):
            sums[k, a] -= x[a]
        if counts[k] == 0:
            active[k] = False
        else:
            km = kappa0 + counts[k]
            f = math.sqrt(km / (km + 1.0))
            for a in range(d):
                v[a] = f * (x[a] - sums[k, a] / km)
            z[i] = -1
            if not _chol_rank1(chol[k], v, -1.0):
                _rebuild(X, z, k, counts[k], psi0, kappa0, chol[k])
            logdets[k] = _logdet(chol[k])
        z[i] = -1
        # score existing clusters and a new one
        free = -1
        best = -np.inf
        for j in range(cap):
            if active[j]:
                logw[j] = math.log(counts[j]) + _student_t_logpdf(
                    x, chol[j], logdets[j], sums[j], counts[j], kappa0, nu0, work)
                if logw[j] > best:
                    best = logw[j]
            else:
                logw[j] = -np.inf
                if free < 0:
                    free = j
        logw[cap] = log_alpha + _student_t_logpdf(x, chol0, logdet0, zero, 0,
                                                  kappa0, nu0, work)
        if logw[cap] > best:
            best = logw[cap]
        total = 0.0
        for j in range(cap + 1):
            logw[j] = math.exp(logw[j] - best)
            total += logw[j]
        target = uniforms[t] * total
        choice = cap
        acc = 0.0
        for j in range(cap + 1):
            acc += logw[j]
            if target < acc and logw[j] > 0.0:
                choice = j
                break
        if choice == cap:
            if free < 0:
                # out of slots: put the point back and let the caller grow the arrays
                z[i] = k
                if counts[k] == 0:
                    active[k] = True
                    chol[k, :, :] = chol0
                counts[k] += 1
                for a in range(d):
                    sums[k, a] += x[a]
                _rebuild(X, z, k, counts[k], psi0, kappa0, chol[k])
                logdets[k] = _logdet(chol[k])
                return t
            choice = free
            active[choice] = True
            counts[choice] = 0
            for a in range(d):
                sums[choice, a] = 0.0
            chol[choice, :, :] = chol0
        # add point i to the chosen cluster
        kn = kappa0 + counts[choice]
        f = math.sqrt(kn / (kn + 1.0))
        for a in range(d):
            v[a] = f * (x[a] - sums[choice, a] / kn)
        _chol_rank1(chol[choice], v, 1.0)
        logdets[choice] = _logdet(chol[choice])
        counts[choice] += 1
        for a in range(d):
            sums[choice, a] += x[a]
        z[i] = choice
    return -1
