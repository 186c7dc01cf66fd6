"""The variational lower bound in full, decomposed and collapsed form.

All quantities are expressed through ``m_tilde = Sigma^{-1} m`` and block
solves against the noise covariance, so nothing of size ``|D| x |D|`` is ever
formed except in :func:`elbo_full`, which exists to cross-check the
decomposition on small problems.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionError, NonFiniteError
from .expectations import (
    BlockExpectations,
    ExpectationSet,
    HyperVariational,
    block_expectations,
    omega_block,
    psi_block,
    upsilon_trace_term,
)
from .kernels import InducingSet, jittered_cholesky
from .noise import VariantKind, apply_inverse, build_noise_block

LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class Prior:
    """Independent Gaussian hyperprior ``N(mean, var)`` on every ``lambda_k`` and on ``sigma_f``."""

    mean: float = 0.0
    var: float = 1.0

    PRESETS = {"standard": (0.0, 1.0), "unit-mean": (1.0, 0.1)}

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError("prior variance must be > 0")

    @classmethod
    def preset(cls, name):
        try:
            return cls(*cls.PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown prior preset {name!r}; choose from {sorted(cls.PRESETS)}")

    def global_term(self, h):
        """Hyperparameter part of the bound, up to ``(d + 1)/2``: ``-KL(q(theta) || p(theta)) - (d+1)/2``."""
        mu, v = self.mean, self.var
        lam = -((h.nu - mu) ** 2 + h.xi) / v + np.log(h.xi) - np.log(v)
        sf = -((h.alpha - mu) ** 2 + h.beta) / v + np.log(h.beta) - np.log(v)
        return 0.5 * (float(np.sum(lam)) + sf)

    def grads(self, h):
        """Derivatives of :meth:`global_term` w.r.t. ``(nu, xi, alpha, beta)``."""
        mu, v = self.mean, self.var
        return (
            -(h.nu - mu) / v,
            0.5 / h.xi - 0.5 / v,
            -(h.alpha - mu) / v,
            0.5 / h.beta - 0.5 / v,
        )


@dataclass
class VariationalState:
    """Free variational parameters: ``q(s_I) = N(m, S)`` with ``S = S_chol S_chol^T``, plus ``q(theta)``."""

    m: np.ndarray
    S_chol: np.ndarray
    hyper: HyperVariational

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).copy()
        self.S_chol = np.tril(np.asarray(self.S_chol, dtype=float))
        M = self.m.shape[0]
        if self.S_chol.shape != (M, M):
            raise DimensionError(f"S_chol has shape {self.S_chol.shape}, expected {(M, M)}")

    @property
    def S(self):
        return self.S_chol @ self.S_chol.T

    @property
    def size(self):
        return self.m.shape[0]

    def copy(self):
        return VariationalState(self.m.copy(), self.S_chol.copy(), self.hyper)

    @classmethod
    def from_moments(cls, m, S, hyper):
        L, _ = jittered_cholesky(0.5 * (S + S.T), name="S")
        return cls(m, L, hyper)


@dataclass
class BlockedProblem:
    """Training data split into mini-batches together with their noise blocks."""

    X: np.ndarray
    y: np.ndarray
    blocks: list
    noise_blocks: list
    inducing: InducingSet
    variant: VariantKind = VariantKind.PITC
    Cinv_y: list = field(init=False, repr=False)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.blocks = [np.asarray(b, dtype=int) for b in self.blocks]
        self.variant = VariantKind.parse(self.variant)
        if len(self.blocks) != len(self.noise_blocks):
            raise ValueError("one noise block per mini-batch is required")
        if self.X.shape[1] != self.inducing.dim:
            raise DimensionError(
                f"data has {self.X.shape[1]} columns, inducing inputs have {self.inducing.dim}"
            )
        self.Cinv_y = [apply_inverse(C, self.y[b]) for C, b in zip(self.noise_blocks, self.blocks)]

    @classmethod
    def build(cls, X, y, blocks, variant, noise, inducing):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        nb = [build_noise_block(variant, X[b], noise) for b in blocks]
        return cls(X, y, blocks, nb, inducing, variant)

    def with_noise(self, variant, noise):
        return BlockedProblem.build(self.X, self.y, self.blocks, variant, noise, self.inducing)

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def zeta(self):
        return self.inducing.prior_scale

    def block_inputs(self, i):
        return self.X[self.blocks[i]]

    def block_outputs(self, i):
        return self.y[self.blocks[i]]

    def block_const(self, i):
        """``-n_i/2 log 2pi - 1/2 log|C_i| - 1/2 y_i^T C_i^{-1} y_i``."""
        b = self.blocks[i]
        C = self.noise_blocks[i]
        return -0.5 * (len(b) * LOG_2PI + C.logdet + float(self.y[b] @ self.Cinv_y[i]))


def compute_expectations(hyper, problem, indices=None):
    """Expectations for the requested blocks (all blocks by default)."""
    if indices is None:
        indices = range(problem.n_blocks)
    Z = problem.inducing.rotated_inputs
    out = {}
    for i in sorted(set(int(i) for i in indices)):
        out[i] = block_expectations(
            Z, problem.block_inputs(i), problem.noise_blocks[i].inv, hyper, problem.zeta
        )
    return ExpectationSet(out)


def global_const(problem):
    """Variational-parameter-independent part of the bound that does not depend on data."""
    I = problem.inducing
    return -0.5 * I.logdet + 0.5 * I.size + 0.5 * problem.dim + 0.5


def bound_const(problem):
    """The full additive constant: data part plus :func:`global_const`."""
    return sum(problem.block_const(i) for i in range(problem.n_blocks)) + global_const(problem)


@dataclass
class ElboBreakdown:
    block_terms: np.ndarray
    global_term: float
    total: float


def _check(value, term, block=None):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(term, block)
    return value


def block_term(state, problem, i, be, Sinv_m=None, SinvSSinv=None, Sigma_inv=None):
    """Per-block bound ``L_i``."""
    I = problem.inducing
    if problem.blocks[i].size == 0:
        return 0.0
    mt = I.solve(state.m) if Sinv_m is None else Sinv_m
    if Sigma_inv is None:
        Sigma_inv = I.inv
    if SinvSSinv is None:
        SinvSSinv = I.solve(I.solve(state.S).T)
    val = 0.5 * (
        2.0 * mt @ (be.omega @ problem.Cinv_y[i])
        - mt @ be.psi @ mt
        - np.sum(SinvSSinv * be.psi)
        - be.upsilon_trace
        + np.sum(Sigma_inv * be.psi)
    )
    return float(_check(val, "L_i", i))


def state_global_term(state, problem, prior):
    """``1/2(-m^T Sigma^{-1} m - Tr[S Sigma^{-1}] + log|S|)`` plus the hyperprior part."""
    I = problem.inducing
    L = state.S_chol
    logdet_S = 2.0 * float(np.sum(np.log(np.abs(np.diag(L)))))
    V = linalg.solve_triangular(I.chol, L, lower=True)
    val = 0.5 * (-state.m @ I.solve(state.m) - float(np.sum(V**2)) + logdet_S)
    val += prior.global_term(state.hyper)
    return float(_check(val, "global term"))


def elbo_decomposed(state, problem, prior=Prior(), exp=None, include_const=False):
    """Bound as a fixed-order sum of per-block terms and a global term.

    With ``include_const`` the per-block and global constants are folded in, so
    the total is the absolute bound on ``log p(y)``.
    """
    if exp is None:
        exp = compute_expectations(state.hyper, problem)
    I = problem.inducing
    mt = I.solve(state.m)
    Sigma_inv = I.inv
    SinvSSinv = I.solve(I.solve(state.S).T)
    terms = np.zeros(problem.n_blocks)
    for i in range(problem.n_blocks):
        terms[i] = block_term(state, problem, i, exp.blocks[i], mt, SinvSSinv, Sigma_inv)
        if include_const:
            terms[i] += problem.block_const(i)
    g = state_global_term(state, problem, prior)
    if include_const:
        g += global_const(problem)
    total = 0.0
    for t in terms:
        total += t
    total += g
    return ElboBreakdown(terms, g, total)


def _full_arrays(hyper, problem):
    """Dense ``Omega_ID``, block-diagonal ``C^{-1}`` and whole-data ``Psi`` / trace term."""
    Z = problem.inducing.rotated_inputs
    order = np.concatenate(problem.blocks) if problem.n_blocks else np.zeros(0, int)
    X = problem.X[order]
    y = problem.y[order]
    Cinv = linalg.block_diag(*[nb.inv for nb in problem.noise_blocks]) if len(order) else np.zeros((0, 0))
    Omega = omega_block(Z, X, hyper, problem.zeta) if len(order) else np.zeros((Z.shape[0], 0))
    Psi = psi_block(Z, X, Cinv, hyper, problem.zeta)
    ups = upsilon_trace_term(X, Cinv, hyper)
    return Omega, Cinv, y, Psi, ups


def elbo_full(state, problem, prior=Prior(), include_const=False):
    """Bound evaluated from whole-data matrices with ``Q = Sigma^{-1} Psi Sigma^{-1} + Sigma^{-1}``."""
    I = problem.inducing
    Omega, Cinv, y, Psi, ups = _full_arrays(state.hyper, problem)
    Sinv = I.inv
    Q = Sinv @ Psi @ Sinv + Sinv
    S = state.S
    m = state.m
    logdet_S = 2.0 * float(np.sum(np.log(np.abs(np.diag(state.S_chol)))))
    val = 0.5 * (
        2.0 * m @ Sinv @ Omega @ Cinv @ y
        - m @ Q @ m
        - np.sum(S * Q)
        - ups
        + np.sum(Sinv * Psi)
        + logdet_S
    )
    val += prior.global_term(state.hyper)
    _check(val, "elbo_full")
    if include_const:
        val += bound_const(problem)
    return float(val)


def _collapsed_pieces(hyper, problem, exp=None):
    if exp is None:
        exp = compute_expectations(hyper, problem)
    M = problem.inducing.size
    Psi = np.zeros((M, M))
    b = np.zeros(M)
    ups = 0.0
    for i in range(problem.n_blocks):
        be = exp.blocks[i]
        Psi += be.psi
        b += be.omega @ problem.Cinv_y[i]
        ups += be.upsilon_trace
    return Psi, b, ups


def optimal_q_star(hyper, problem, exp=None):
    """``m* = Sigma (Sigma + Psi)^{-1} Omega C^{-1} y`` and ``S* = Sigma (Sigma + Psi)^{-1} Sigma``."""
    I = problem.inducing
    Psi, b, _ = _collapsed_pieces(hyper, problem, exp)
    A = I.sigma + Psi
    L, _ = jittered_cholesky(0.5 * (A + A.T), scale=problem.zeta**2, name="Sigma + Psi")
    m = I.sigma @ linalg.cho_solve((L, True), b)
    V = linalg.solve_triangular(L, I.sigma, lower=True)
    S = V.T @ V
    return m, 0.5 * (S + S.T)


def q_star_state(hyper, problem, exp=None):
    m, S = optimal_q_star(hyper, problem, exp)
    return VariationalState.from_moments(m, S, hyper)


def elbo_reduced(hyper, problem, prior=Prior(), exp=None):
    """Collapsed bound with ``q(s_I)`` replaced by its optimum.

    ``1/2 (b^T (Sigma + Psi)^{-1} b - Tr[C^{-1} Upsilon] + Tr[Sigma^{-1} Psi] - log|Sigma + Psi|)``
    plus the hyperprior part, where ``b = Omega C^{-1} y``.  It differs from
    :func:`elbo_full` at ``q*`` by :func:`reduced_offset`.
    """
    I = problem.inducing
    Psi, b, ups = _collapsed_pieces(hyper, problem, exp)
    A = I.sigma + Psi
    L, _ = jittered_cholesky(0.5 * (A + A.T), scale=problem.zeta**2, name="Sigma + Psi")
    r = linalg.solve_triangular(L, b, lower=True)
    val = 0.5 * (
        r @ r - ups + np.sum(I.inv * Psi) - 2.0 * float(np.sum(np.log(np.diag(L))))
    )
    val += prior.global_term(hyper)
    return float(_check(val, "elbo_reduced"))


def reduced_offset(problem):
    """``elbo_full(q*) - elbo_reduced = log|Sigma| - |I|/2``."""
    I = problem.inducing
    return float(I.logdet - 0.5 * I.size)


__all__ = [
    "Prior",
    "VariationalState",
    "BlockedProblem",
    "ElboBreakdown",
    "BlockExpectations",
    "compute_expectations",
    "global_const",
    "bound_const",
    "block_term",
    "state_global_term",
    "elbo_decomposed",
    "elbo_full",
    "optimal_q_star",
    "q_star_state",
    "elbo_reduced",
    "reduced_offset",
]
