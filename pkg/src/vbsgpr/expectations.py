"""Closed-form expectations of kernel matrices under ``q(Lambda) q(sigma_f)``.

With ``lambda_k ~ N(nu_k, xi_k)`` and ``sigma_f ~ N(alpha, beta)``:

* ``omega[z, x] = E[cov(s_z, f_x)]``
* ``psi[z, z'] = sum_{x, x'} c_{xx'} E[cov(s_z, f_x) cov(f_x', s_z')]`` for one block
* ``gamma[x, x'] = E[k(x, x')]``

Every Gaussian integral over ``lambda_k`` is evaluated in log space and the
per-dimension factors are summed before exponentiating.

The psi exponent for a pair ``(x, x')`` is a quadratic form in ``(z, z')``::

    log E_p(z, z') = c_p + sum_k [-P z_k^2 - Q z'_k^2 + R z_k z'_k + S z_k + T z'_k]

which lets a whole block be assembled with a handful of matrix products.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# Upper bound on pairs * M * M elements materialized at once.
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class HyperVariational:
    """Gaussian variational factors over the kernel hyperparameters.

    ``nu``/``xi`` are the means/variances of the inverted length-scales,
    ``alpha``/``beta`` the mean/variance of ``sigma_f``.
    """

    nu: np.ndarray
    xi: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float)).copy()
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).copy()
        if nu.shape != xi.shape or nu.ndim != 1:
            raise DimensionError(f"nu {nu.shape} and xi {xi.shape} must match")
        if np.any(xi < 0) or self.beta < 0:
            raise ValueError("xi and beta must be non-negative")
        nu.flags.writeable = False
        xi.flags.writeable = False
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def dim(self):
        return self.nu.shape[0]

    @property
    def second_moment(self):
        """``E[sigma_f^2] = beta + alpha^2``."""
        return self.beta + self.alpha**2

    def replace(self, **changes):
        d = dict(nu=self.nu, xi=self.xi, alpha=self.alpha, beta=self.beta)
        d.update(changes)
        return HyperVariational(**d)


def _as_rows(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if X.shape[0] == d else X[:, None]
    if X.ndim != 2 or X.shape[1] != d:
        raise DimensionError(f"expected {d} columns, got array of shape {X.shape}")
    return X


# ---------------------------------------------------------------------------
# omega


def _omega_log_base(Z, X, h):
    """``log(omega / (zeta * alpha))`` for all ``(z, x)``; shape (M, n)."""
    nu, xi = h.nu, h.xi
    A = xi * X**2 + 1.0  # (n, d)
    Ainv = 1.0 / A
    XnA = X * nu * Ainv
    quad = (
        np.sum((X * nu) ** 2 * Ainv, axis=1)[None, :]
        - 2.0 * Z @ XnA.T
        + (Z**2) @ Ainv.T
    )
    return -0.5 * np.sum(np.log(A), axis=1)[None, :] - 0.5 * quad


def omega_block(Z, X, h, zeta=1.0):
    """``Omega_{I D}``, shape (M, n)."""
    Z = _as_rows(Z, h.dim)
    X = _as_rows(X, h.dim)
    return zeta * h.alpha * np.exp(_omega_log_base(Z, X, h))


def omega_entry(z, x, h, zeta=1.0):
    """Single entry ``omega_zx``."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    if z.shape != x.shape or z.shape != (h.dim,):
        raise DimensionError(f"dimension mismatch: {z.shape}, {x.shape}, d={h.dim}")
    return float(omega_block(z[None], x[None], h, zeta)[0, 0])


def omega_block_grads(Z, X, h, zeta=1.0):
    """Derivatives of every entry of ``Omega_{I D}``.

    Returns a dict with ``nu`` and ``xi`` of shape (d, M, n) and ``alpha``,
    ``beta`` of shape (M, n).
    """
    Z = _as_rows(Z, h.dim)
    X = _as_rows(X, h.dim)
    base = zeta * np.exp(_omega_log_base(Z, X, h))
    om = h.alpha * base
    A = h.xi * X**2 + 1.0  # (n, d)
    diff = X[None, :, :] * h.nu - Z[:, None, :]  # (M, n, d)
    g_nu = -(X * diff) / A  # (M, n, d): (-nu x^2 + z x) / A
    g_xi = -(X**2) / (2 * A) + (X**2) * diff**2 / (2 * A**2)
    return {
        "nu": np.moveaxis(om[:, :, None] * g_nu, 2, 0),
        "xi": np.moveaxis(om[:, :, None] * g_xi, 2, 0),
        "alpha": base,
        "beta": np.zeros_like(base),
    }


def omega_grads(z, x, h, zeta=1.0):
    """Gradient of a single ``omega_zx``: ``(d_nu, d_xi, d_alpha, d_beta)``."""
    g = omega_block_grads(np.atleast_2d(z), np.atleast_2d(x), h, zeta)
    return g["nu"][:, 0, 0], g["xi"][:, 0, 0], float(g["alpha"][0, 0]), 0.0


def omega_contracted_grads(Z, X, h, G, zeta=1.0):
    """``sum_{z,x} G[z,x] * d omega[z,x] / d theta`` without the (d, M, n) tensors.

    Returns ``(d_nu, d_xi, d_alpha, d_beta)``.
    """
    base = zeta * np.exp(_omega_log_base(Z, X, h))
    Hb = G * base
    H = h.alpha * Hb
    A = h.xi * X**2 + 1.0
    r = H.sum(axis=0)  # (n,)
    R1 = H.T @ Z  # (n, d)
    R2 = H.T @ Z**2
    X2 = X**2
    d_nu = np.sum((-h.nu * X2 * r[:, None] + X * R1) / A, axis=0)
    sq = X2 * h.nu**2 * r[:, None] - 2 * X * h.nu * R1 + R2  # sum_z H (x nu - z)^2
    d_xi = np.sum(-X2 * r[:, None] / (2 * A) + X2 * sq / (2 * A**2), axis=0)
    return d_nu, d_xi, float(Hb.sum()), 0.0


# ---------------------------------------------------------------------------
# psi


def _pair_coefficients(Xa, Xb, h):
    """Per-pair quadratic-form coefficients of ``log E_p(z, z')``."""
    nu, xi = h.nu, h.xi
    a, b = Xa, Xb
    s = a**2 + b**2
    A = xi * s + 1.0
    P = (xi * b**2 + 1.0) / (2 * A)
    Q = (xi * a**2 + 1.0) / (2 * A)
    R = xi * a * b / A
    S = nu * a / A
    T = nu * b / A
    c = np.sum(-0.5 * np.log(A) - nu**2 * s / (2 * A), axis=1)
    return A, P, Q, R, S, T, c


def _pair_log_terms(Z, Xa, Xb, h):
    """``log E_p(z, z')`` for each pair; shape (p, M, M)."""
    _, P, Q, R, S, T, c = _pair_coefficients(Xa, Xb, h)
    Z2 = Z**2
    row = -P @ Z2.T + S @ Z.T  # (p, M)
    col = -Q @ Z2.T + T @ Z.T
    cross = np.einsum("pk,ik,jk->pij", R, Z, Z, optimize=True)
    return c[:, None, None] + row[:, :, None] + col[:, None, :] + cross


def _half_pairs(Cinv):
    """Index pairs ``i <= j`` with non-zero ``Cinv[i, j]`` and halved diagonal weights."""
    n = Cinv.shape[0]
    iu, ju = np.triu_indices(n)
    w = Cinv[iu, ju]
    keep = w != 0.0
    iu, ju, w = iu[keep], ju[keep], w[keep].copy()
    w[iu == ju] *= 0.5
    return iu, ju, w


def _chunks(n_pairs, M):
    step = max(1, _CHUNK_ELEMENTS // max(1, M * M))
    for start in range(0, n_pairs, step):
        yield slice(start, min(n_pairs, start + step))


def _psi_base(Z, X, Cinv, h):
    """``psi / (zeta^2 (beta + alpha^2))`` assembled over in-block pairs."""
    M = Z.shape[0]
    iu, ju, w = _half_pairs(Cinv)
    acc = np.zeros((M, M))
    for sl in _chunks(len(w), M):
        E = np.exp(_pair_log_terms(Z, X[iu[sl]], X[ju[sl]], h))
        acc += np.tensordot(w[sl], E, axes=1)
    return acc + acc.T


def psi_block(Z, X, Cinv, h, zeta=1.0):
    """``Psi^i_II = E[K_{I D_i} C_i^{-1} K_{D_i I}]`` for one block.

    Parameters
    ----------
    Z : ndarray, shape (M, d)
        Rotated inducing inputs.
    X : ndarray, shape (n_i, d)
        Block inputs.
    Cinv : ndarray, shape (n_i, n_i)
        Exact inverse of the block noise covariance.
    h : HyperVariational
    """
    Z = _as_rows(Z, h.dim)
    X = _as_rows(X, h.dim)
    Cinv = np.asarray(Cinv, dtype=float)
    if Cinv.shape != (X.shape[0], X.shape[0]):
        raise DimensionError(f"Cinv has shape {Cinv.shape}, block has {X.shape[0]} points")
    if X.shape[0] == 0:
        return np.zeros((Z.shape[0], Z.shape[0]))
    return zeta**2 * h.second_moment * _psi_base(Z, X, Cinv, h)


def psi_point(Z, Xs, h, zeta=1.0):
    """``E[K_{I x} K_{x I}]`` for each row ``x`` of ``Xs``; shape (n, M, M)."""
    Z = _as_rows(Z, h.dim)
    Xs = _as_rows(Xs, h.dim)
    M = Z.shape[0]
    out = np.empty((Xs.shape[0], M, M))
    for sl in _chunks(Xs.shape[0], M):
        out[sl] = np.exp(_pair_log_terms(Z, Xs[sl], Xs[sl], h))
    return zeta**2 * h.second_moment * out


def psi_block_grads(Z, X, Cinv, h, zeta=1.0):
    """Full derivative arrays of ``Psi^i``.

    Returns a dict with ``nu``/``xi`` of shape (d, M, M) and ``alpha``/``beta``
    of shape (M, M).  Intended for verification and small problems; training
    uses :func:`psi_contracted_grads`.
    """
    Z = _as_rows(Z, h.dim)
    X = _as_rows(X, h.dim)
    M, d = Z.shape
    iu, ju, w = _half_pairs(np.asarray(Cinv, dtype=float))
    scale = zeta**2 * h.second_moment
    d_nu = np.zeros((d, M, M))
    d_xi = np.zeros((d, M, M))
    base = np.zeros((M, M))
    for sl in _chunks(len(w), M):
        a, b = X[iu[sl]], X[ju[sl]]
        E = w[sl, None, None] * np.exp(_pair_log_terms(Z, a, b, h))
        A = h.xi * (a**2 + b**2) + 1.0
        s = a**2 + b**2
        base += E.sum(axis=0)
        for k in range(d):
            # (z a + z' b - nu s) for every (p, z, z')
            lin = (
                a[:, k, None, None] * Z[None, :, k, None]
                + b[:, k, None, None] * Z[None, None, :, k]
                - (h.nu[k] * s[:, k])[:, None, None]
            )
            Ak = A[:, k, None, None]
            d_nu[k] += np.sum(E * lin / Ak, axis=0)
            d_xi[k] += np.sum(E * (-s[:, k, None, None] / (2 * Ak) + lin**2 / (2 * Ak**2)), axis=0)
    sym = lambda T: T + np.swapaxes(T, -1, -2)  # noqa: E731
    base = sym(base)
    return {
        "nu": scale * sym(d_nu),
        "xi": scale * sym(d_xi),
        "alpha": zeta**2 * 2 * h.alpha * base,
        "beta": zeta**2 * base,
    }


def psi_contracted_grads(Z, X, Cinv, h, W, zeta=1.0):
    """``sum_{z,z'} W[z,z'] * d psi[z,z'] / d theta`` for symmetric ``W``.

    Returns ``(psi, d_nu, d_xi, d_alpha, d_beta)``; ``psi`` is the block matrix
    itself so callers get it for free.
    """
    M, d = Z.shape
    iu, ju, w = _half_pairs(Cinv)
    scale = zeta**2 * h.second_moment
    base = np.zeros((M, M))
    d_nu = np.zeros(d)
    d_xi = np.zeros(d)
    Z2 = Z**2
    for sl in _chunks(len(w), M):
        a, b = X[iu[sl]], X[ju[sl]]
        E = w[sl, None, None] * np.exp(_pair_log_terms(Z, a, b, h))
        base += E.sum(axis=0)
        H = E * W  # (p, M, M)
        hsum = H.sum(axis=(1, 2))
        r = H.sum(axis=2)  # row sums, pairs with z
        c = H.sum(axis=1)  # column sums, pairs with z'
        rZ, cZ = r @ Z, c @ Z  # (p, d)
        rZ2, cZ2 = r @ Z2, c @ Z2
        zHz = np.einsum("pij,ik,jk->pk", H, Z, Z, optimize=True)
        s = a**2 + b**2
        A = h.xi * s + 1.0
        nus = h.nu * s
        lin = a * rZ + b * cZ - nus * hsum[:, None]
        d_nu += np.sum(lin / A, axis=0)
        sq = (
            a**2 * rZ2
            + b**2 * cZ2
            + nus**2 * hsum[:, None]
            + 2 * a * b * zHz
            - 2 * nus * (a * rZ + b * cZ)
        )
        d_xi += np.sum(-s * hsum[:, None] / (2 * A) + sq / (2 * A**2), axis=0)
    base = base + base.T
    # W symmetric: sum W * (Y + Y^T) = 2 sum W * Y
    WB = float(np.sum(W * base))
    return (
        scale * base,
        2 * scale * d_nu,
        2 * scale * d_xi,
        zeta**2 * 2 * h.alpha * WB,
        zeta**2 * WB,
    )


# ---------------------------------------------------------------------------
# upsilon


def _upsilon_log_base(D, h):
    """``log(gamma / (beta + alpha^2))`` for difference vectors ``D`` (..., d)."""
    D2 = D**2
    A = h.xi * D2 + 1.0
    return np.sum(-0.5 * np.log(A) - h.nu**2 * D2 / (2 * A), axis=-1)


def upsilon_entry(x, x2, h):
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape or x.shape != (h.dim,):
        raise DimensionError(f"dimension mismatch: {x.shape}, {x2.shape}, d={h.dim}")
    if np.array_equal(x, x2):
        return h.second_moment
    return float(h.second_moment * np.exp(_upsilon_log_base(x - x2, h)))


def upsilon_block(X, X2, h):
    """``Upsilon`` between two sets of inputs; shape (n, n2)."""
    X = _as_rows(X, h.dim)
    X2 = _as_rows(X2, h.dim)
    return h.second_moment * np.exp(_upsilon_log_base(X[:, None, :] - X2[None, :, :], h))


def upsilon_grads(x, x2, h):
    """Gradient of ``gamma(x, x2)``: ``(d_nu, d_xi, d_alpha, d_beta)``."""
    D = np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)
    base = float(np.exp(_upsilon_log_base(D, h)))
    g = h.second_moment * base
    D2 = D**2
    A = h.xi * D2 + 1.0
    d_nu = g * (-h.nu * D2 / A)
    d_xi = g * ((h.nu**2 - h.xi) * D2**2 - D2) / (2 * A**2)
    return d_nu, d_xi, 2 * h.alpha * base, base


def upsilon_trace_term(X, Cinv, h):
    """``Tr[C_i^{-1} Upsilon_{D_i D_i}]`` using in-block pairs only."""
    return upsilon_contracted_grads(X, Cinv, h)[0]


def upsilon_contracted_grads(X, Cinv, h):
    """Trace term and its gradient: ``(trace, d_nu, d_xi, d_alpha, d_beta)``."""
    X = _as_rows(X, h.dim)
    Cinv = np.asarray(Cinv, dtype=float)
    d = h.dim
    if X.shape[0] == 0:
        return 0.0, np.zeros(d), np.zeros(d), 0.0, 0.0
    iu, ju, w = _half_pairs(Cinv)
    w = 2.0 * w  # off-diagonal pairs counted twice, diagonal restored to 1x
    D = X[iu] - X[ju]
    D2 = D**2
    A = h.xi * D2 + 1.0
    base = np.exp(_upsilon_log_base(D, h))
    wb = w * base
    m2 = h.second_moment
    trace = m2 * float(wb.sum())
    d_nu = m2 * np.sum(wb[:, None] * (-h.nu * D2 / A), axis=0)
    d_xi = m2 * np.sum(wb[:, None] * ((h.nu**2 - h.xi) * D2**2 - D2) / (2 * A**2), axis=0)
    return trace, d_nu, d_xi, 2 * h.alpha * float(wb.sum()), float(wb.sum())


# ---------------------------------------------------------------------------
# per-block bundle


@dataclass
class BlockExpectations:
    """Expectations for one mini-batch: ``Omega_{I D_i}``, ``Psi^i`` and the trace term."""

    omega: np.ndarray
    psi: np.ndarray
    upsilon_trace: float


@dataclass
class ExpectationSet:
    """Expectations for a collection of blocks (keyed by block index)."""

    blocks: dict

    @property
    def omega_blocks(self):
        return {i: b.omega for i, b in self.blocks.items()}

    @property
    def psi_blocks(self):
        return {i: b.psi for i, b in self.blocks.items()}

    @property
    def upsilon_trace_terms(self):
        return {i: b.upsilon_trace for i, b in self.blocks.items()}


def block_expectations(Z, X, Cinv, h, zeta=1.0):
    Z = _as_rows(Z, h.dim)
    X = _as_rows(X, h.dim)
    return BlockExpectations(
        omega=omega_block(Z, X, h, zeta),
        psi=psi_block(Z, X, Cinv, h, zeta),
        upsilon_trace=upsilon_trace_term(X, Cinv, h),
    )
