"""Predictive mean and variance of ``f(x*)``.

DTC, FIC, FITC and PITC share the approximated test conditional and have
closed-form moments.  PIC conditions exactly on the observations of the test
point's own block, which requires sampling the hyperparameters.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data import nearest_centroid
from .expectations import omega_block, psi_point
from .kernels import jittered_cholesky, sq_dist
from .montecarlo import sample_hyper
from .noise import VariantKind

VARIANCE_FLOOR = 1e-12
_POINT_CHUNK = 256


@dataclass
class PredictiveResult:
    mean: np.ndarray
    variance: np.ndarray
    variant: VariantKind
    sample_count: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)


def predict_analytic(state, inducing, Xs, variant=VariantKind.DTC, noise_var=0.0):
    """Closed-form moments under the approximated test conditional.

    ``noise_var`` is added to the latent variance for observation-space scoring.
    """
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    h = state.hyper
    Z = inducing.rotated_inputs
    zeta = inducing.prior_scale
    mt = inducing.solve(state.m)
    Sinv = inducing.inv
    SSS = inducing.solve(inducing.solve(state.S).T)
    A = Sinv - 0.5 * (SSS + SSS.T) - np.outer(mt, mt)
    n = Xs.shape[0]
    mean = np.empty(n)
    var = np.empty(n)
    for start in range(0, n, _POINT_CHUNK):
        sl = slice(start, min(n, start + _POINT_CHUNK))
        om = omega_block(Z, Xs[sl], h, zeta).T  # (k, M)
        mu = om @ mt
        EKK = psi_point(Z, Xs[sl], h, zeta)
        v = h.second_moment - np.einsum("pij,ij->p", EKK, A) - mu**2
        mean[sl] = mu
        var[sl] = v
    var = np.maximum(var, VARIANCE_FLOOR * max(h.second_moment, 1.0))
    return PredictiveResult(mean, var + noise_var, VariantKind.parse(variant), 0)


def assign_test_block(Xs, centroids):
    """Nearest-centroid block index per test row; ties go to the lowest index."""
    return nearest_centroid(np.atleast_2d(Xs), np.atleast_2d(centroids))


def _pic_block_moments(state, inducing, Xs, XB, yB, CB, lam, sf):
    """Conditional means/variances for test points sharing one block, per hyper sample.

    Returns arrays of shape (n_samples, k).
    """
    Z = inducing.rotated_inputs
    zeta = inducing.prior_scale
    M = Z.shape[0]
    nB = XB.shape[0]
    target = np.concatenate([state.m, yB])
    S = state.S
    ns, k = lam.shape[0], Xs.shape[0]
    mu = np.empty((ns, k))
    var = np.empty((ns, k))
    for j in range(ns):
        L = lam[j]
        s = sf[j]
        RXs = Xs * L
        kIs = zeta * s * np.exp(-0.5 * sq_dist(Z, RXs))  # (M, k)
        G = np.empty((M + nB, M + nB))
        G[:M, :M] = inducing.sigma
        kstar = np.empty((M + nB, k))
        kstar[:M] = kIs
        if nB:
            RB = XB * L
            KIB = zeta * s * np.exp(-0.5 * sq_dist(Z, RB))
            G[:M, M:] = KIB
            G[M:, :M] = KIB.T
            G[M:, M:] = s**2 * np.exp(-0.5 * sq_dist(RB, RB)) + CB
            kstar[M:] = s**2 * np.exp(-0.5 * sq_dist(RB, RXs))
        Lg, _ = jittered_cholesky(G, scale=max(zeta**2, s**2), name="PIC joint")
        a = linalg.cho_solve((Lg, True), kstar)  # (M + nB, k)
        aI = a[:M]
        mu[j] = target @ a
        var[j] = s**2 - np.sum(kstar * a, axis=0) + np.sum(aI * (S @ aI), axis=0)
    return mu, var


def predict_pic(state, inducing, Xs, block_data, assignment, n_samples, seed=0, noise_var=0.0):
    """Sampling-based moments using the exact test conditional within each block.

    Parameters
    ----------
    block_data : list of (X_B, y_B, C_B)
        Training inputs, outputs and noise covariance of every block.
    assignment : ndarray of int
        Block index of each test row (see :func:`assign_test_block`).
    n_samples : int
        Number of ``(Lambda, sigma_f)`` draws from ``q``; the same draws are
        shared by all test points.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    assignment = np.asarray(assignment, dtype=int)
    rng = np.random.default_rng(seed)
    lam, sf = sample_hyper(state.hyper, n_samples, rng)
    n = Xs.shape[0]
    mean = np.empty(n)
    var = np.empty(n)
    for b in np.unique(assignment):
        rows = np.flatnonzero(assignment == b)
        XB, yB, CB = block_data[b]
        mu_s, var_s = _pic_block_moments(state, inducing, Xs[rows], XB, yB, CB, lam, sf)
        mean[rows] = mu_s.mean(axis=0)
        var[rows] = var_s.mean(axis=0) + mu_s.var(axis=0)
    var = np.maximum(var, VARIANCE_FLOOR * max(state.hyper.second_moment, 1.0))
    return PredictiveResult(mean, var + noise_var, VariantKind.PIC, n_samples)


def block_data_from_problem(problem):
    return [
        (problem.X[b], problem.y[b], nb.cov) for b, nb in zip(problem.blocks, problem.noise_blocks)
    ]


def predict(state, problem, Xs, centroids=None, n_samples=256, seed=0, noise_var=0.0):
    """Dispatch on the problem's variant."""
    if problem.variant is VariantKind.PIC:
        if centroids is None:
            raise ValueError("PIC prediction needs the partition centroids")
        asg = assign_test_block(Xs, centroids)
        return predict_pic(
            state,
            problem.inducing,
            Xs,
            block_data_from_problem(problem),
            asg,
            n_samples,
            seed,
            noise_var,
        )
    return predict_analytic(state, problem.inducing, Xs, problem.variant, noise_var)
