"""Per-block noise covariances that distinguish the family members.

Each mini-batch ``D_i`` gets a covariance

    C_i = K^eps_{D_i D_i} - K^eps_{D_i U} (K^eps_{UU})^{-1} K^eps_{U D_i} + sigma_n^2 I

which is used in full for PITC/PIC, reduced to its diagonal for FIC/FITC and
replaced by ``sigma_n^2 I`` for DTC.
"""

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .kernels import gram_eps, jittered_cholesky


class VariantKind(str, enum.Enum):
    DTC = "dtc"
    FIC = "fic"
    FITC = "fitc"
    PITC = "pitc"
    PIC = "pic"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())

    @property
    def diagonal(self):
        return self in (VariantKind.DTC, VariantKind.FIC, VariantKind.FITC)


@dataclass(frozen=True)
class NoiseBlock:
    """A factorized noise covariance block ``C_i``."""

    cov: np.ndarray
    chol: np.ndarray
    logdet: float
    inv: np.ndarray

    @property
    def size(self):
        return self.cov.shape[0]

    @classmethod
    def from_cov(cls, C):
        C = np.asarray(C, dtype=float)
        n = C.shape[0]
        if n == 0:
            empty = np.zeros((0, 0))
            return cls(empty, empty, 0.0, empty)
        L = linalg.cholesky(C, lower=True)
        inv = linalg.cho_solve((L, True), np.eye(n))
        inv = 0.5 * (inv + inv.T)
        return cls(C, L, 2.0 * float(np.sum(np.log(np.diag(L)))), inv)


def apply_inverse(block, v):
    """``C_i^{-1} v`` via the stored Cholesky factor."""
    v = np.asarray(v, dtype=float)
    if block.size == 0:
        return v.copy()
    return linalg.cho_solve((block.chol, True), v, check_finite=False)


def block_logdet(block):
    return block.logdet


def low_rank_residual(X, noise):
    """``K^eps_DD - K^eps_DU (K^eps_UU)^{-1} K^eps_UD`` for the rows of ``X``."""
    U = noise.eps_inducing_inputs
    lam = noise.eps_inverted_lengthscales
    s = noise.eps_signal_std
    Kdd = gram_eps(X, X, lam, s)
    Kuu = gram_eps(U, U, lam, s)
    Luu, _ = jittered_cholesky(Kuu, scale=s**2, name="K_eps_UU")
    V = linalg.solve_triangular(Luu, gram_eps(U, X, lam, s), lower=True)
    R = Kdd - V.T @ V
    return 0.5 * (R + R.T)


def build_noise_block(variant, X_i, noise):
    """Noise covariance ``C_i`` for the inputs ``X_i`` of one block.

    Parameters
    ----------
    variant : VariantKind or str
    X_i : ndarray, shape (n_i, d)
    noise : NoiseKernelParams

    Returns
    -------
    NoiseBlock
    """
    variant = VariantKind.parse(variant)
    X_i = np.atleast_2d(np.asarray(X_i, dtype=float))
    n = X_i.shape[0]
    if n == 0:
        return NoiseBlock.from_cov(np.zeros((0, 0)))
    white = noise.noise_std**2
    if variant is VariantKind.DTC:
        return NoiseBlock.from_cov(white * np.eye(n))
    if noise.eps_inducing_inputs.shape[0] < 1:
        raise ValueError(f"{variant.value} noise requires at least one eps inducing input")
    R = low_rank_residual(X_i, noise)
    if variant.diagonal:
        R = np.diag(np.diag(R))
    return NoiseBlock.from_cov(R + white * np.eye(n))


def build_noise_blocks(variant, X, index_blocks, noise):
    return [build_noise_block(variant, X[idx], noise) for idx in index_blocks]
