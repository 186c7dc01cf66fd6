"""Predictive metrics, Gaussian KL divergences and the stochastic-vs-exact convergence study."""

import csv
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .elbo import Prior, optimal_q_star
from .svi import TrainConfig, fit_exact, initial_state, train


def _pair(pred, target):
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError(f"need equal, non-empty lengths; got {pred.size} and {target.size}")
    return pred, target


def rmse(pred, target):
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((target - pred) ** 2)))


def mnlp(mean, var, target):
    """Mean negative log probability ``0.5 mean((y-mu)^2/var + log(2 pi var))``."""
    mean, target = _pair(mean, target)
    var = np.asarray(var, dtype=float).ravel()
    if var.shape != mean.shape:
        raise ValueError("variance length differs from mean length")
    if np.any(var <= 0):
        raise ValueError("predictive variances must be positive")
    return float(0.5 * np.mean((target - mean) ** 2 / var + np.log(2 * np.pi * var)))


def gaussian_kl(mean_p, cov_p, mean_q, cov_q):
    """``KL(N(mean_p, cov_p) || N(mean_q, cov_q))``."""
    mean_p = np.atleast_1d(np.asarray(mean_p, dtype=float))
    mean_q = np.atleast_1d(np.asarray(mean_q, dtype=float))
    cov_p = np.atleast_2d(np.asarray(cov_p, dtype=float))
    cov_q = np.atleast_2d(np.asarray(cov_q, dtype=float))
    k = mean_p.shape[0]
    Lp = linalg.cholesky(cov_p, lower=True)
    Lq = linalg.cholesky(cov_q, lower=True)
    V = linalg.solve_triangular(Lq, Lp, lower=True)
    r = linalg.solve_triangular(Lq, mean_q - mean_p, lower=True)
    logdet = 2.0 * (np.sum(np.log(np.diag(Lq))) - np.sum(np.log(np.diag(Lp))))
    return float(0.5 * (np.sum(V**2) + r @ r - k + logdet))


def diag_gaussian_kl(mean_p, var_p, mean_q, var_q):
    """KL between factorized Gaussians given by per-coordinate means and variances."""
    mean_p, var_p, mean_q, var_q = (np.atleast_1d(np.asarray(a, float)) for a in (mean_p, var_p, mean_q, var_q))
    return float(
        0.5 * np.sum(var_p / var_q + (mean_q - mean_p) ** 2 / var_q - 1.0 + np.log(var_q / var_p))
    )


def inducing_kl(state_p, state_q):
    """``KL(q_p(s_I) || q_q(s_I))``."""
    return gaussian_kl(state_p.m, state_p.S, state_q.m, state_q.S)


def hyper_kl(hp, hq):
    """``KL(q_p(Lambda, sigma_f) || q_q(Lambda, sigma_f))`` for the factorized hyper posteriors."""
    return diag_gaussian_kl(
        np.append(hp.nu, hp.alpha),
        np.append(hp.xi, hp.beta),
        np.append(hq.nu, hq.alpha),
        np.append(hq.xi, hq.beta),
    )


@dataclass
class MetricReport:
    rmse: float
    mnlp: float
    n_test: int
    variant: str
    wall_time_seconds: float

    COLUMNS = ("variant", "n_test", "rmse", "mnlp", "wall_time_seconds")

    def as_row(self):
        return [getattr(self, c) for c in self.COLUMNS]


def evaluate_predictions(result, target, wall_time=0.0):
    return MetricReport(
        rmse(result.mean, target),
        mnlp(result.mean, result.variance, target),
        int(np.size(target)),
        str(getattr(result.variant, "value", result.variant)),
        float(wall_time),
    )


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceTrace:
    """KL of the stochastic iterates to the deterministic reference over iterations."""

    iterations: list = field(default_factory=list)
    kl_inducing: list = field(default_factory=list)
    kl_hyper: list = field(default_factory=list)
    kl_to_qstar: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    reference: object = None
    final_state: object = None

    COLUMNS = ("iter", "seconds", "kl_inducing", "kl_hyper", "kl_to_qstar")

    def rows(self):
        return list(
            zip(self.iterations, self.seconds, self.kl_inducing, self.kl_hyper, self.kl_to_qstar)
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])

    def trend(self, which="kl_inducing"):
        """Monotone-trend statistics: Mann-Kendall tau (with p-value) and the log-KL slope."""
        t = np.asarray(self.iterations, dtype=float)
        v = np.asarray(getattr(self, which), dtype=float)
        tau, p = stats.kendalltau(t, v)
        pos = v > 0
        slope = float(np.polyfit(t[pos], np.log(v[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
        return {"kendall_tau": float(tau), "p_value": float(p), "log_slope": slope}

    def relative_final(self, which="kl_inducing", tail=1):
        """Mean of the last ``tail`` recorded values divided by the first value."""
        v = np.asarray(getattr(self, which), dtype=float)
        return float(np.mean(v[-tail:]) / v[0]) if v[0] > 0 else float("nan")

    def first_below(self, fraction, which="kl_inducing"):
        """First recorded iteration whose KL is below ``fraction`` of the initial KL."""
        v = np.asarray(getattr(self, which), dtype=float)
        hits = np.flatnonzero(v < fraction * v[0])
        return int(self.iterations[hits[0]]) if hits.size else None


def convergence_study(
    problem,
    config,
    prior=Prior(),
    reference=None,
    record_every=50,
    with_qstar=False,
    start_state=None,
):
    """Run the stochastic optimizer and log KL(q_reference || q_stochastic) along the way.

    ``reference`` defaults to :func:`fit_exact`.  With ``with_qstar`` each
    record also holds the KL from the closed-form optimum for the current
    hyperparameters to the current ``q(s_I)`` (costs a full-data pass).
    """
    if reference is None:
        reference, _ = fit_exact(problem, prior)
    out = ConvergenceTrace(reference=reference)
    t0 = time.perf_counter()

    def record(t, st):
        out.iterations.append(t)
        out.seconds.append(time.perf_counter() - t0)
        out.kl_inducing.append(inducing_kl(reference, st))
        out.kl_hyper.append(hyper_kl(reference.hyper, st.hyper))
        if with_qstar:
            m, S = optimal_q_star(st.hyper, problem)
            out.kl_to_qstar.append(gaussian_kl(m, S, st.m, st.S))
        else:
            out.kl_to_qstar.append(float("nan"))

    def callback(t, st):
        if (t + 1) % record_every == 0 or t + 1 == config.iterations:
            record(t + 1, st)

    if start_state is None:
        start_state = initial_state(problem.inducing, problem.dim, float(np.std(problem.y)) or 1.0)
    record(0, start_state)
    res = train(problem, config, prior, state=start_state, callback=callback)
    out.final_state = res.state
    return out


__all__ = [
    "rmse",
    "mnlp",
    "gaussian_kl",
    "diag_gaussian_kl",
    "inducing_kl",
    "hyper_kl",
    "MetricReport",
    "evaluate_predictions",
    "ConvergenceTrace",
    "convergence_study",
    "TrainConfig",
]
