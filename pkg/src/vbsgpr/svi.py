"""Stochastic gradient ascent on the decomposable bound.

Unconstrained coordinates used by the optimizer::

    m (or whitened v = L_Sigma^{-1} m)
    lower triangle of S_chol (or of W = L_Sigma^{-1} S_chol)
    nu, log xi, alpha, log beta
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .elbo import (
    BlockedProblem,
    Prior,
    VariationalState,
    global_const,
    optimal_q_star,
    state_global_term,
)
from .errors import NonFiniteError
from .expectations import (
    HyperVariational,
    omega_block,
    omega_contracted_grads,
    psi_contracted_grads,
    upsilon_contracted_grads,
)
from .kernels import InducingSet, NoiseKernelParams
from .noise import build_noise_block

logger = logging.getLogger(__name__)


@dataclass
class GradientBundle:
    d_m: np.ndarray
    d_S: np.ndarray
    d_nu: np.ndarray
    d_xi: np.ndarray
    d_alpha: float
    d_beta: float

    FIELDS = ("d_m", "d_S", "d_nu", "d_xi", "d_alpha", "d_beta")

    @classmethod
    def zeros(cls, M, d):
        return cls(np.zeros(M), np.zeros((M, M)), np.zeros(d), np.zeros(d), 0.0, 0.0)

    def scaled(self, c):
        return GradientBundle(*(c * getattr(self, f) for f in self.FIELDS))

    def __add__(self, other):
        return GradientBundle(*(getattr(self, f) + getattr(other, f) for f in self.FIELDS))

    def norms(self):
        return {f: float(np.linalg.norm(np.atleast_1d(getattr(self, f)))) for f in self.FIELDS}

    def flat(self):
        return np.concatenate([np.ravel(getattr(self, f)) for f in self.FIELDS])

    def check_finite(self, block=None):
        for f in self.FIELDS:
            if not np.all(np.isfinite(getattr(self, f))):
                raise NonFiniteError(f, block)
        return self


class _Context:
    """Quantities shared by all block gradients at one state."""

    def __init__(self, state, problem):
        I = problem.inducing
        self.Sigma_inv = I.inv
        self.mt = I.solve(state.m)
        self.SinvSSinv = I.solve(I.solve(state.S).T)
        self.SinvSSinv = 0.5 * (self.SinvSSinv + self.SinvSSinv.T)
        self.W = 0.5 * (-np.outer(self.mt, self.mt) - self.SinvSSinv + self.Sigma_inv)


def block_gradient(state, problem, i, ctx=None, noise_block=None):
    """Value and gradient of the per-block term ``L_i``.

    ``noise_block`` overrides the stored block (used when noise parameters are
    being learned).  Returns ``(value, GradientBundle)``.
    """
    if ctx is None:
        ctx = _Context(state, problem)
    h = state.hyper
    M, d = problem.inducing.size, problem.dim
    b_idx = problem.blocks[i]
    if b_idx.size == 0:
        return 0.0, GradientBundle.zeros(M, d)
    Z = problem.inducing.rotated_inputs
    zeta = problem.zeta
    X = problem.X[b_idx]
    nb = problem.noise_blocks[i] if noise_block is None else noise_block
    cy = problem.Cinv_y[i] if noise_block is None else linalg.cho_solve((nb.chol, True), problem.y[b_idx])
    Om = omega_block(Z, X, h, zeta)
    o_nu, o_xi, o_a, o_b = omega_contracted_grads(Z, X, h, np.outer(ctx.mt, cy), zeta)
    psi, p_nu, p_xi, p_a, p_b = psi_contracted_grads(Z, X, nb.inv, h, ctx.W, zeta)
    ups, u_nu, u_xi, u_a, u_b = upsilon_contracted_grads(X, nb.inv, h)
    Ob = Om @ cy
    value = 0.5 * (
        2.0 * ctx.mt @ Ob
        - ctx.mt @ psi @ ctx.mt
        - np.sum(ctx.SinvSSinv * psi)
        - ups
        + np.sum(ctx.Sigma_inv * psi)
    )
    Sp = ctx.Sigma_inv @ psi
    SpS = Sp @ ctx.Sigma_inv
    g = GradientBundle(
        d_m=ctx.Sigma_inv @ Ob - Sp @ ctx.mt,
        d_S=-0.25 * (SpS + SpS.T),
        d_nu=o_nu + p_nu - 0.5 * u_nu,
        d_xi=o_xi + p_xi - 0.5 * u_xi,
        d_alpha=o_a + p_a - 0.5 * u_a,
        d_beta=o_b + p_b - 0.5 * u_b,
    )
    if not np.isfinite(value):
        raise NonFiniteError("L_i", i)
    return float(value), g.check_finite(i)


def global_gradient(state, problem, prior):
    """Value and gradient of the global (data-free) term."""
    I = problem.inducing
    Sinv_state = linalg.cho_solve((state.S_chol, True), np.eye(state.size))
    p_nu, p_xi, p_a, p_b = prior.grads(state.hyper)
    g = GradientBundle(
        d_m=-I.solve(state.m),
        d_S=0.5 * (Sinv_state - I.inv),
        d_nu=p_nu,
        d_xi=p_xi,
        d_alpha=p_a,
        d_beta=p_b,
    )
    return state_global_term(state, problem, prior), g.check_finite()


def _block_terms(state, problem, indices, ctx, include_const, threads):
    """Per-block values and gradients in the order of ``indices``.

    With ``threads > 1`` blocks are evaluated concurrently; the caller reduces
    the results in a fixed order, so the sum does not depend on ``threads``.
    """
    B = problem.n_blocks
    for s in indices:
        if not 0 <= s < B:
            raise IndexError(f"block index {s} outside 0..{B - 1}")

    def one(s):
        v, g = block_gradient(state, problem, s, ctx)
        return (v + problem.block_const(s) if include_const else v), g

    if threads > 1 and len(indices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, indices))
    return [one(s) for s in indices]


def _reduce(parts, problem):
    total_val = 0.0
    total = GradientBundle.zeros(problem.inducing.size, problem.dim)
    for v, g in parts:
        total_val += v
        total = total + g
    return total_val, total


def stochastic_gradient(state, sampled, problem, prior=Prior(), include_const=True, threads=1):
    """Unbiased estimate ``(B/|S|) sum_s dL_s + d(global)`` over the sampled block multiset.

    Returns ``(bound_estimate, GradientBundle)``; the estimate uses the same
    scaling and, with ``include_const``, includes the additive constant.
    """
    sampled = [int(s) for s in sampled]
    if not sampled:
        raise ValueError("at least one block must be sampled")
    ctx = _Context(state, problem)
    scale = problem.n_blocks / len(sampled)
    total_val, total = _reduce(_block_terms(state, problem, sampled, ctx, include_const, threads), problem)
    gv, gg = global_gradient(state, problem, prior)
    if include_const:
        gv += global_const(problem)
    return scale * total_val + gv, total.scaled(scale) + gg


def exact_gradient(state, problem, prior=Prior(), include_const=True, threads=1):
    """Full-data gradient: every block exactly once plus the global term."""
    ctx = _Context(state, problem)
    idx = list(range(problem.n_blocks))
    total_val, total = _reduce(_block_terms(state, problem, idx, ctx, include_const, threads), problem)
    gv, gg = global_gradient(state, problem, prior)
    if include_const:
        gv += global_const(problem)
    return total_val + gv, total + gg


# ---------------------------------------------------------------------------
# parameter transforms


class Transform:
    """Map between a :class:`VariationalState` and a flat unconstrained vector."""

    def __init__(self, inducing, whiten=True, learn_hyper=True):
        self.inducing = inducing
        self.whiten = whiten
        self.learn_hyper = learn_hyper
        M = inducing.size
        self.M = M
        self.tril = np.tril_indices(M)

    def pack(self, state):
        Ls = self.inducing.chol
        if self.whiten:
            a = linalg.solve_triangular(Ls, state.m, lower=True)
            B = linalg.solve_triangular(Ls, state.S_chol, lower=True)
        else:
            a, B = state.m, state.S_chol
        h = state.hyper
        parts = [a, B[self.tril]]
        if self.learn_hyper:
            parts += [h.nu, np.log(h.xi), [h.alpha], [np.log(h.beta)]]
        return np.concatenate(parts)

    def unpack(self, u, hyper_template):
        M, d = self.M, hyper_template.dim
        a = u[:M]
        k = M + len(self.tril[0])
        B = np.zeros((M, M))
        B[self.tril] = u[M:k]
        Ls = self.inducing.chol
        if self.whiten:
            m, L = Ls @ a, Ls @ B
        else:
            m, L = a, B
        if self.learn_hyper:
            nu = u[k : k + d]
            xi = np.exp(u[k + d : k + 2 * d])
            alpha = float(u[k + 2 * d])
            beta = float(np.exp(u[k + 2 * d + 1]))
            h = HyperVariational(nu, xi, alpha, beta)
        else:
            h = hyper_template
        return VariationalState(m, L, h)

    def grad(self, state, g):
        """Chain rule from a :class:`GradientBundle` to the unconstrained vector."""
        dS = 0.5 * (g.d_S + g.d_S.T)
        GL = 2.0 * dS @ state.S_chol  # (d_S + d_S^T) S_chol
        Ls = self.inducing.chol
        if self.whiten:
            ga = Ls.T @ g.d_m
            GB = Ls.T @ GL
        else:
            ga, GB = g.d_m, GL
        parts = [ga, GB[self.tril]]
        if self.learn_hyper:
            h = state.hyper
            parts += [g.d_nu, g.d_xi * h.xi, [g.d_alpha], [g.d_beta * h.beta]]
        return np.concatenate(parts)


# ---------------------------------------------------------------------------
# schedule and steps


@dataclass
class TrainConfig:
    """Optimizer settings.

    ``mode`` selects the update: ``"adaptive"`` (per-coordinate Adam scaling,
    the default), ``"plain"`` (Robbins-Monro steps ``a/(1+t/tau)^kappa``) or
    ``"natural"`` (natural-gradient steps on every Gaussian factor with the
    same schedule as step fraction, capped at 1).  During the first
    ``hyper_warmup`` iterations only ``q(s_I)`` moves.  ``threads`` evaluates
    sampled blocks concurrently with a fixed-order reduction.
    """

    iterations: int = 1000
    batch_size: int = 1
    step_a: float = 0.01
    step_tau: float = 100.0
    step_kappa: float = 0.75
    seed: int = 0
    mode: str = "adaptive"
    whiten: bool = True
    learn_hyper: bool = True
    learn_noise: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    noise_fd_step: float = 1e-4
    trace_every: int = 1
    hyper_warmup: int = 0
    hyper_mean_scale: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.step_a <= 0 or self.step_tau <= 0:
            raise ValueError("step sizes must be positive")
        if self.mode not in ("adaptive", "plain", "natural"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.hyper_warmup < 0:
            raise ValueError("hyper_warmup must be >= 0")
        if self.mode in ("plain", "natural") and not (0.5 < self.step_kappa <= 1.0):
            raise ValueError("plain mode needs 0.5 < kappa <= 1 for a Robbins-Monro schedule")

    def to_dict(self):
        return asdict(self)


def step_size(t, a=0.01, tau=100.0, kappa=0.75):
    """``a / (1 + t/tau)^kappa``."""
    return a / (1.0 + t / tau) ** kappa


class AscentStepper:
    """Applies one ascent step in unconstrained coordinates with step halving on non-finite results."""

    def __init__(self, config, n_params):
        self.cfg = config
        self.m1 = np.zeros(n_params)
        self.m2 = np.zeros(n_params)
        self.k = 0

    def direction(self, g):
        c = self.cfg
        if c.mode == "plain":
            return g
        self.k += 1
        self.m1 = c.adam_beta1 * self.m1 + (1 - c.adam_beta1) * g
        self.m2 = c.adam_beta2 * self.m2 + (1 - c.adam_beta2) * g * g
        mh = self.m1 / (1 - c.adam_beta1**self.k)
        vh = self.m2 / (1 - c.adam_beta2**self.k)
        return mh / (np.sqrt(vh) + c.adam_eps)


def _natural_update(state, g, rho, hyper=None):
    """Natural-gradient step of size ``rho`` on ``q(s_I)``; ``None`` if the result is invalid.

    With Euclidean gradients ``(d_m, d_S)`` this is
    ``S_new^{-1} = S^{-1} - 2 rho d_S`` and ``m_new = m + rho S_new d_m``.
    ``hyper`` (already stepped) is attached to the new state.
    """
    M = state.size
    P = linalg.cho_solve((state.S_chol, True), np.eye(M))
    P_new = P - rho * (g.d_S + g.d_S.T)
    try:
        Lp = linalg.cholesky(0.5 * (P_new + P_new.T), lower=True)
    except linalg.LinAlgError:
        return None
    S_new = linalg.cho_solve((Lp, True), np.eye(M))
    S_new = 0.5 * (S_new + S_new.T)
    try:
        L_new = linalg.cholesky(S_new, lower=True)
    except linalg.LinAlgError:
        return None
    m_new = state.m + rho * S_new @ g.d_m
    h = state.hyper if hyper is None else hyper
    new = VariationalState(m_new, L_new, h)
    if not (np.all(np.isfinite(new.m)) and np.all(np.isfinite(new.S_chol))):
        return None
    return new


def _natural_hyper(h, g, rho, prior, mean_scale=1.0):
    """Natural step on the one-dimensional Gaussian factors of ``q(theta)``.

    Precision update ``(1 - rho) * prec + rho * (1/v0 + curv)`` where
    ``curv = -2 dL_data/dxi`` is the expected data curvature, clipped at zero so
    the precision stays positive; the clip is inactive at any maximum, where the
    posterior is narrower than the prior.  Means then move by ``rho * var_new * grad``.
    """
    v0 = prior.var
    p_nu, p_xi, p_a, p_b = prior.grads(h)
    curv = np.maximum(-2.0 * (g.d_xi - p_xi), 0.0)
    curv_b = max(-2.0 * (g.d_beta - p_b), 0.0)
    xi = 1.0 / ((1 - rho) / h.xi + rho * (1.0 / v0 + curv))
    beta = 1.0 / ((1 - rho) / h.beta + rho * (1.0 / v0 + curv_b))
    r = min(rho * mean_scale, 1.0)
    return HyperVariational(h.nu + r * xi * g.d_nu, xi, h.alpha + r * beta * g.d_alpha, beta)


def _natural_step(state, grad, t, transform, config, max_halvings, prior):
    if not isinstance(grad, GradientBundle):
        raise TypeError("natural mode needs a GradientBundle")
    rho = min(step_size(t, config.step_a, config.step_tau, config.step_kappa), 1.0)
    for _ in range(max_halvings + 1):
        learn = transform.learn_hyper and t >= config.hyper_warmup
        hyper = _natural_hyper(state.hyper, grad, rho, prior, config.hyper_mean_scale) if learn else state.hyper
        new = _natural_update(state, grad, rho, hyper)
        if new is not None and np.all(np.isfinite(new.hyper.nu)) and np.isfinite(new.hyper.alpha):
            return new
        rho *= 0.5
    raise NonFiniteError("parameters", detail=f"step still invalid after {max_halvings} halvings")


def _finite_state(st):
    h = st.hyper
    parts = (st.m, st.S_chol, h.nu, h.xi, [h.alpha, h.beta])
    return all(np.all(np.isfinite(p)) for p in parts)


def apply_step(state, grad, t, transform, config, stepper=None, max_halvings=10, prior=Prior()):
    """Return the state after one ascent step of size ``eta_t`` along ``grad``.

    ``grad`` may be a :class:`GradientBundle` or an already transformed vector.
    A step yielding a non-finite or invalid state is halved up to
    ``max_halvings`` times before :class:`NonFiniteError` is raised.
    """
    if config.mode == "natural":
        return _natural_step(state, grad, t, transform, config, max_halvings, prior)
    if t < config.hyper_warmup and isinstance(grad, GradientBundle):
        d = grad.d_nu.size
        grad = replace(grad, d_nu=np.zeros(d), d_xi=np.zeros(d), d_alpha=0.0, d_beta=0.0)
    g = transform.grad(state, grad) if isinstance(grad, GradientBundle) else np.asarray(grad)
    if stepper is None:
        stepper = AscentStepper(config, g.size)
    direction = stepper.direction(g)
    if not np.all(np.isfinite(direction)):
        raise NonFiniteError("gradient", detail="non-finite search direction")
    u = transform.pack(state)
    eta = step_size(t, config.step_a, config.step_tau, config.step_kappa)
    for _ in range(max_halvings + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            cand = u + eta * direction
        if np.all(np.isfinite(cand)):
            try:
                with np.errstate(over="ignore"):
                    new = transform.unpack(cand, state.hyper)
            except ValueError:
                new = None
            if new is not None and _finite_state(new):
                return new
        eta *= 0.5
    raise NonFiniteError("parameters", detail=f"step still non-finite after {max_halvings} halvings")


# ---------------------------------------------------------------------------
# initialization


@dataclass
class InitialSetup:
    state: VariationalState
    inducing: InducingSet
    inducing_index: np.ndarray


def choose_inducing(X, n_inducing, rng, nu_init=1.0, zeta=1.0):
    """Rotated inducing inputs ``z = nu_init * x`` for randomly chosen training inputs."""
    n = X.shape[0]
    k = min(n_inducing, n)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    nu = np.broadcast_to(np.asarray(nu_init, float), (X.shape[1],))
    return InducingSet(X[idx] * nu, zeta), idx


def initial_state(inducing, d, output_std=1.0, nu_init=1.0, xi_init=0.1, beta_init=0.1):
    h = HyperVariational(np.full(d, nu_init), np.full(d, xi_init), output_std, beta_init)
    return VariationalState(np.zeros(inducing.size), inducing.chol.copy(), h)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TraceRow:
    iter: int
    seconds: float
    elbo_estimate: float
    grad_m: float
    grad_S: float
    grad_nu: float
    grad_xi: float
    grad_alpha: float
    grad_beta: float

    COLUMNS = (
        "iter",
        "seconds",
        "elbo_estimate",
        "grad_m",
        "grad_S",
        "grad_nu",
        "grad_xi",
        "grad_alpha",
        "grad_beta",
    )

    def values(self):
        return [getattr(self, c) for c in self.COLUMNS]


@dataclass
class TrainResult:
    state: VariationalState
    trace: list
    noise: NoiseKernelParams = None
    problem: BlockedProblem = None
    states: list = field(default_factory=list)


def _noise_vector(noise, floor):
    return np.concatenate(
        [
            np.log(noise.eps_inverted_lengthscales),
            [np.log(noise.eps_signal_std), np.log(max(noise.noise_std, floor))],
        ]
    )


def _noise_from_vector(v, template, floor):
    d = template.eps_inverted_lengthscales.shape[0]
    return template.replace(
        eps_inverted_lengthscales=np.exp(v[:d]),
        eps_signal_std=float(np.exp(v[d])),
        noise_std=float(max(np.exp(v[d + 1]), floor)),
    )


def _noise_gradient(state, problem, sampled, noise, prior, step, floor):
    """Central finite differences of the mini-batch bound (with constants) in log noise parameters."""
    v0 = _noise_vector(noise, floor)
    scale = problem.n_blocks / len(sampled)
    ctx = _Context(state, problem)

    def value(v):
        nz = _noise_from_vector(v, noise, floor)
        tot = 0.0
        for s in sampled:
            b = problem.blocks[s]
            nb = build_noise_block(problem.variant, problem.X[b], nz)
            val, _ = block_gradient(state, problem, s, ctx, noise_block=nb)
            cy = linalg.cho_solve((nb.chol, True), problem.y[b])
            tot += val - 0.5 * (nb.logdet + problem.y[b] @ cy)
        return scale * tot

    g = np.zeros_like(v0)
    for j in range(v0.size):
        e = np.zeros_like(v0)
        e[j] = step
        g[j] = (value(v0 + e) - value(v0 - e)) / (2 * step)
    return v0, g


def train(problem, config, prior=Prior(), state=None, noise=None, callback=None, keep_states=False):
    """Run stochastic gradient ascent.

    Parameters
    ----------
    problem : BlockedProblem
    config : TrainConfig
    state : VariationalState, optional
        Starting point; defaults to :func:`initial_state` with ``alpha`` equal
        to the output standard deviation.
    noise : NoiseKernelParams, optional
        Required when ``config.learn_noise`` is set.
    callback : callable, optional
        Called as ``callback(t, state)`` after every step.
    """
    if state is None:
        state = initial_state(problem.inducing, problem.dim, float(np.std(problem.y)) or 1.0)
    rng = np.random.default_rng(config.seed)
    transform = Transform(problem.inducing, config.whiten, config.learn_hyper)
    stepper = AscentStepper(config, transform.pack(state).size)
    noise_floor = 1e-6 * max(float(np.std(problem.y)), 1e-12)
    if config.learn_noise:
        if noise is None:
            raise ValueError("learn_noise requires the starting noise parameters")
        noise_cfg = TrainConfig(**{**config.to_dict(), "learn_hyper": True})
        noise_stepper = AscentStepper(noise_cfg, _noise_vector(noise, noise_floor).size)
    trace = []
    states = [state.copy()] if keep_states else []
    t0 = time.perf_counter()
    B = problem.n_blocks
    for t in range(config.iterations):
        sampled = rng.integers(0, B, size=config.batch_size)
        est, g = stochastic_gradient(state, sampled, problem, prior, threads=config.threads)
        if config.learn_noise:
            v0, gn = _noise_gradient(
                state, problem, sampled, noise, prior, config.noise_fd_step, noise_floor
            )
        state = apply_step(state, g, t, transform, config, stepper, prior=prior)
        if config.learn_noise:
            eta = step_size(t, config.step_a, config.step_tau, config.step_kappa)
            v1 = v0 + eta * noise_stepper.direction(gn)
            noise = _noise_from_vector(v1, noise, noise_floor)
            problem = problem.with_noise(problem.variant, noise)
        if t % config.trace_every == 0 or t == config.iterations - 1:
            n = g.norms()
            trace.append(
                TraceRow(
                    t,
                    time.perf_counter() - t0,
                    float(est),
                    n["d_m"],
                    n["d_S"],
                    n["d_nu"],
                    n["d_xi"],
                    n["d_alpha"],
                    n["d_beta"],
                )
            )
        if keep_states:
            states.append(state.copy())
        if callback is not None:
            callback(t, state)
    return TrainResult(state, trace, noise, problem, states)


# ---------------------------------------------------------------------------
# deterministic reference


def fit_exact(problem, prior=Prior(), hyper=None, max_iter=500, tol=1e-10):
    """Deterministic reference optimum.

    Hyperparameters are optimized with L-BFGS on the collapsed bound; at every
    evaluation ``q(s_I)`` is set to its closed-form optimum, so the gradient
    with respect to the hyperparameters equals the full-bound gradient.
    Returns a :class:`VariationalState` at ``q*`` of the final hyperparameters.
    """
    if hyper is None:
        hyper = initial_state(problem.inducing, problem.dim, float(np.std(problem.y)) or 1.0).hyper
    d = problem.dim

    def unpack(u):
        return HyperVariational(u[:d], np.exp(u[d : 2 * d]), u[2 * d], np.exp(u[2 * d + 1]))

    def fun(u):
        h = unpack(u)
        m, S = optimal_q_star(h, problem)
        st = VariationalState.from_moments(m, S, h)
        val, g = exact_gradient(st, problem, prior)
        gu = np.concatenate([g.d_nu, g.d_xi * h.xi, [g.d_alpha], [g.d_beta * h.beta]])
        return -val, -gu

    u0 = np.concatenate([hyper.nu, np.log(hyper.xi), [hyper.alpha], [np.log(hyper.beta)]])
    res = optimize.minimize(
        fun, u0, jac=True, method="L-BFGS-B", options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15}
    )
    h = unpack(res.x)
    m, S = optimal_q_star(h, problem)
    return VariationalState.from_moments(m, S, h), res


def ascend_exact(state, problem, prior=Prior(), iterations=100, step=1.0, whiten=True, min_step=1e-12):
    """Full-batch gradient ascent with backtracking step halving.

    Uses the same transforms as :func:`train`; every accepted step strictly
    increases the bound.  Returns ``(state, values)``.
    """
    transform = Transform(problem.inducing, whiten, True)
    val, g = exact_gradient(state, problem, prior)
    values = [val]
    for _ in range(iterations):
        gu = transform.grad(state, g)
        u = transform.pack(state)
        eta = step
        while eta > min_step:
            try:
                cand = transform.unpack(u + eta * gu, state.hyper)
                cval, cg = exact_gradient(cand, problem, prior)
            except (ValueError, NonFiniteError, linalg.LinAlgError):
                eta *= 0.5
                continue
            if np.isfinite(cval) and cval > val:
                state, val, g = cand, cval, cg
                break
            eta *= 0.5
        else:
            break
        values.append(val)
    return state, values
