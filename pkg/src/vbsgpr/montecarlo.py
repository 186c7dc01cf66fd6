"""Brute-force Monte-Carlo estimators used as independent verification oracles.

Nothing here shares code with the closed forms: kernel matrices are built
sample by sample from ``lambda ~ N(nu, xi)`` and ``sigma_f ~ N(alpha, beta)``
(``sigma_f`` is deliberately not truncated at zero).
"""

import numpy as np
from scipy import linalg
from scipy.special import logsumexp


def sample_hyper(h, n, rng):
    """Draw ``n`` samples of ``(Lambda diagonal, sigma_f)`` from ``q``."""
    lam = h.nu + np.sqrt(h.xi) * rng.standard_normal((n, h.dim))
    sf = h.alpha + np.sqrt(h.beta) * rng.standard_normal(n)
    return lam, sf


class _Moments:
    """Running mean and sum of squared deviations, merged chunk by chunk (Chan et al.)."""

    def __init__(self, shape=()):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, chunk):
        k = chunk.shape[0]
        cm = chunk.mean(axis=0)
        c2 = ((chunk - cm) ** 2).sum(axis=0)
        n = self.n + k
        delta = cm - self.mean
        self.mean = self.mean + delta * (k / n)
        self.m2 = self.m2 + c2 + delta**2 * (self.n * k / n)
        self.n = n

    def result(self):
        var = self.m2 / max(self.n - 1, 1)
        return self.mean, np.sqrt(var / self.n)


def _sample_kfs(Z, X, lam, sf, zeta):
    """``cov(s_z, f_x)`` for each sample; shape (s, M, n)."""
    R = X[None, :, :] * lam[:, None, :]  # (s, n, d)
    diff = R[:, None, :, :] - Z[None, :, None, :]  # (s, M, n, d)
    return zeta * sf[:, None, None] * np.exp(-0.5 * np.sum(diff**2, axis=-1))


def mc_omega(Z, X, h, n_samples, rng, zeta=1.0, chunk=50_000):
    """Monte-Carlo mean and standard error of ``E[K_{I D}]``."""
    Z = np.atleast_2d(Z)
    X = np.atleast_2d(X)
    acc = _Moments((Z.shape[0], X.shape[0]))
    while acc.n < n_samples:
        lam, sf = sample_hyper(h, min(chunk, n_samples - acc.n), rng)
        acc.add(_sample_kfs(Z, X, lam, sf, zeta))
    return acc.result()


def mc_psi(Z, X, Cinv, h, n_samples, rng, zeta=1.0, chunk=20_000):
    """Monte-Carlo mean and standard error of ``E[K_{I D} C^{-1} K_{D I}]``."""
    Z = np.atleast_2d(Z)
    X = np.atleast_2d(X)
    M = Z.shape[0]
    acc = _Moments((M, M))
    while acc.n < n_samples:
        lam, sf = sample_hyper(h, min(chunk, n_samples - acc.n), rng)
        K = _sample_kfs(Z, X, lam, sf, zeta)
        acc.add(np.einsum("smn,nk,sjk->smj", K, Cinv, K, optimize=True))
    return acc.result()


def mc_upsilon(x, x2, h, n_samples, rng, chunk=200_000):
    """Monte-Carlo mean and standard error of ``E[k(x, x2)]``."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    acc = _Moments()
    while acc.n < n_samples:
        lam, sf = sample_hyper(h, min(chunk, n_samples - acc.n), rng)
        acc.add(sf**2 * np.exp(-0.5 * np.sum((lam * (x - x2)) ** 2, axis=1)))
    mean, se = acc.result()
    return float(mean), float(se)


def mc_gaussian_kl(mean_p, cov_p, mean_q, cov_q, n_samples, rng):
    """Monte-Carlo estimate of ``E_p[log p - log q]`` with its standard error."""
    mean_p = np.atleast_1d(mean_p)
    mean_q = np.atleast_1d(mean_q)
    cov_p = np.atleast_2d(cov_p)
    cov_q = np.atleast_2d(cov_q)
    Lp = linalg.cholesky(cov_p, lower=True)
    x = mean_p + rng.standard_normal((n_samples, mean_p.shape[0])) @ Lp.T

    def logpdf(x, mu, cov):
        L = linalg.cholesky(cov, lower=True)
        r = linalg.solve_triangular(L, (x - mu).T, lower=True)
        k = mu.shape[0]
        return -0.5 * np.sum(r**2, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * k * np.log(2 * np.pi)

    v = logpdf(x, mean_p, cov_p) - logpdf(x, mean_q, cov_q)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n_samples))


def mc_log_marginal(X, y, C, n_samples, rng, prior_mean=0.0, prior_var=1.0):
    """Estimate ``log E_theta[N(y; 0, K_DD(theta) + C)]`` under the hyperprior.

    ``theta = (Lambda, sigma_f)`` with every component i.i.d.
    ``N(prior_mean, prior_var)``.  The standard error of the log estimate is
    obtained with the delta method from the spread of the importance weights.
    """
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    logw = np.empty(n_samples)
    sd = np.sqrt(prior_var)
    for s in range(n_samples):
        lam = prior_mean + sd * rng.standard_normal(d)
        sf = prior_mean + sd * rng.standard_normal()
        R = X * lam
        d2 = np.sum((R[:, None, :] - R[None, :, :]) ** 2, axis=-1)
        K = sf**2 * np.exp(-0.5 * d2) + C
        L = linalg.cholesky(K, lower=True)
        r = linalg.solve_triangular(L, y, lower=True)
        logw[s] = -0.5 * r @ r - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    est = logsumexp(logw) - np.log(n_samples)
    w = np.exp(logw - logw.max())
    se = np.std(w, ddof=1) / np.sqrt(n_samples) / np.mean(w)
    return float(est), float(se)
