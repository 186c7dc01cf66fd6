"""Squared-exponential kernels in the rotated (length-scale scaled) input space.

The latent function is written as ``f_x = sigma_f * s(Lambda x)`` where ``s`` is
a GP with unit length-scales and prior variance ``zeta**2``.  Inducing outputs
live at *rotated* inputs ``z`` so that their prior covariance does not depend
on the kernel hyperparameters.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionError, FactorizationError

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class KernelParams:
    """Point hyperparameters of the squared-exponential kernel.

    Parameters
    ----------
    inverted_lengthscales : array_like, shape (d,)
        Diagonal of ``Lambda``.
    signal_std : float
        ``sigma_f``.
    """

    inverted_lengthscales: np.ndarray
    signal_std: float

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.inverted_lengthscales, dtype=float))
        object.__setattr__(self, "inverted_lengthscales", lam)
        if lam.ndim != 1 or not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("inverted_lengthscales must be finite and > 0")
        if not np.isfinite(self.signal_std) or self.signal_std <= 0:
            raise ValueError("signal_std must be finite and > 0")

    @property
    def dim(self):
        return self.inverted_lengthscales.shape[0]


@dataclass(frozen=True)
class NoiseKernelParams:
    """Hyperparameters of the noise kernel ``k_eps`` and the white-noise level.

    ``eps_inducing_inputs`` live in the original (unrotated) input space; they
    are only used to build the low-rank part of the noise covariance blocks.
    """

    eps_inverted_lengthscales: np.ndarray
    eps_signal_std: float
    noise_std: float
    eps_inducing_inputs: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.eps_inverted_lengthscales, dtype=float))
        U = np.atleast_2d(np.asarray(self.eps_inducing_inputs, dtype=float))
        object.__setattr__(self, "eps_inverted_lengthscales", lam)
        object.__setattr__(self, "eps_inducing_inputs", U)
        if np.any(lam <= 0) or self.eps_signal_std <= 0 or self.noise_std <= 0:
            raise ValueError("noise kernel parameters must be positive")
        if U.size and U.shape[1] != lam.shape[0]:
            raise DimensionError(
                f"eps_inducing_inputs has {U.shape[1]} columns, expected {lam.shape[0]}"
            )

    def replace(self, **changes):
        fields = dict(
            eps_inverted_lengthscales=self.eps_inverted_lengthscales,
            eps_signal_std=self.eps_signal_std,
            noise_std=self.noise_std,
            eps_inducing_inputs=self.eps_inducing_inputs,
        )
        fields.update(changes)
        return NoiseKernelParams(**fields)


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def cov_ff(x, x2, p):
    """``sigma_f**2 * exp(-0.5 * ||Lambda x - Lambda x2||**2)``."""
    x, x2 = _check_pair(x, x2)
    if x.shape[0] != p.dim:
        raise DimensionError(f"input has dimension {x.shape[0]}, kernel has {p.dim}")
    r = p.inverted_lengthscales * (x - x2)
    return p.signal_std**2 * np.exp(-0.5 * np.dot(r, r))


def cov_fs(x, z, p, zeta=1.0):
    """Cross-covariance between ``f_x`` and the inducing output ``s_z``."""
    x, z = _check_pair(x, z)
    if x.shape[0] != p.dim:
        raise DimensionError(f"input has dimension {x.shape[0]}, kernel has {p.dim}")
    r = p.inverted_lengthscales * x - z
    return zeta * p.signal_std * np.exp(-0.5 * np.dot(r, r))


def cov_ss(z, z2, zeta=1.0):
    """Prior covariance of two inducing outputs; independent of the hyperparameters."""
    z, z2 = _check_pair(z, z2)
    r = z - z2
    return zeta**2 * np.exp(-0.5 * np.dot(r, r))


def sq_dist(A, B):
    """Pairwise squared Euclidean distances, clipped at zero."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    d2 = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def gram_ff(X, X2, p):
    lam = p.inverted_lengthscales
    return p.signal_std**2 * np.exp(-0.5 * sq_dist(X * lam, X2 * lam))


def gram_fs(X, Z, p, zeta=1.0):
    return zeta * p.signal_std * np.exp(-0.5 * sq_dist(X * p.inverted_lengthscales, Z))


def gram_ss(Z, Z2, zeta=1.0):
    return zeta**2 * np.exp(-0.5 * sq_dist(Z, Z2))


def gram_eps(X, X2, lam, signal_std):
    """Gram matrix of the noise kernel (same functional form as ``k``)."""
    lam = np.asarray(lam, dtype=float)
    return signal_std**2 * np.exp(-0.5 * sq_dist(X * lam, X2 * lam))


def jittered_cholesky(A, scale=1.0, name="matrix"):
    """Lower Cholesky factor of ``A``, adding diagonal jitter if needed.

    The plain factorization is tried first.  On failure ``1e-10 * scale`` is
    added to the diagonal and multiplied by 10 per retry, up to
    ``1e-4 * scale``.

    Returns
    -------
    L : ndarray
        Lower-triangular factor of ``A + jitter * I``.
    jitter : float
        The jitter that was added (0.0 when none was needed).
    """
    A = np.asarray(A, dtype=float)
    try:
        return linalg.cholesky(A, lower=True, check_finite=True), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_START * scale
    eye = np.eye(A.shape[0])
    while jitter <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            L = linalg.cholesky(A + jitter * eye, lower=True, check_finite=True)
        except linalg.LinAlgError:
            jitter *= 10.0
            continue
        logger.warning("%s required jitter %.3g for Cholesky factorization", name, jitter)
        return L, jitter
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    raise FactorizationError(
        f"Cholesky of {name} failed after jitter {jitter / 10:.3g} "
        f"(condition estimate {cond:.3g})",
        condition=cond,
        jitter=jitter / 10,
    )


@dataclass
class InducingSet:
    """Rotated inducing inputs with their (hyperparameter-free) prior covariance.

    ``sigma`` is the matrix actually used everywhere downstream; when jitter
    was needed it is included in ``sigma``.
    """

    rotated_inputs: np.ndarray
    prior_scale: float = 1.0
    sigma: np.ndarray = field(init=False, repr=False)
    chol: np.ndarray = field(init=False, repr=False)
    jitter: float = field(init=False, default=0.0)

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.rotated_inputs, dtype=float))
        if Z.shape[0] < 1:
            raise ValueError("inducing set must contain at least one point")
        if self.prior_scale <= 0:
            raise ValueError("prior_scale (zeta) must be > 0")
        self.rotated_inputs = Z
        self.sigma, self.chol, self.jitter = build_sigma_II(Z, self.prior_scale)

    @property
    def size(self):
        return self.rotated_inputs.shape[0]

    @property
    def dim(self):
        return self.rotated_inputs.shape[1]

    def solve(self, B):
        """``Sigma^{-1} B``."""
        return linalg.cho_solve((self.chol, True), B, check_finite=False)

    @property
    def inv(self):
        return self.solve(np.eye(self.size))

    @property
    def logdet(self):
        return 2.0 * np.sum(np.log(np.diag(self.chol)))


def build_sigma_II(Z, zeta=1.0):
    """Assemble ``Sigma_II`` from :func:`cov_ss` and factorize it.

    Returns ``(sigma, chol, jitter)`` where ``sigma`` already includes the
    jitter (if any) so that ``chol @ chol.T == sigma``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    sigma = gram_ss(Z, Z, zeta)
    np.fill_diagonal(sigma, zeta**2)
    L, jitter = jittered_cholesky(sigma, scale=zeta**2, name="Sigma_II")
    if jitter:
        sigma = sigma + jitter * np.eye(Z.shape[0])
    return sigma, L, jitter
