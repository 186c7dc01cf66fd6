"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal summary
under "acceptance criteria".  Thresholds are the stated ones; nothing here is
loosened to make a run pass.
"""

import contextlib
import time

import numpy as np
import pytest

from vbsgpr import montecarlo as mc
from vbsgpr.cli import main as cli_main
from vbsgpr.data import kmeans_partition, synth_gp_dataset, train_test_split
from vbsgpr.elbo import (
    BlockedProblem,
    elbo_decomposed,
    elbo_full,
    elbo_reduced,
    q_star_state,
    reduced_offset,
)
from vbsgpr.expectations import (
    omega_block,
    omega_block_grads,
    psi_block,
    psi_block_grads,
    upsilon_entry,
    upsilon_grads,
)
from vbsgpr.kernels import InducingSet, KernelParams, NoiseKernelParams
from vbsgpr.metrics import convergence_study, rmse
from vbsgpr.predict import predict_analytic, predict_pic
from vbsgpr.svi import (
    GradientBundle,
    TrainConfig,
    Transform,
    choose_inducing,
    exact_gradient,
    fit_exact,
    initial_state,
    stochastic_gradient,
    train,
)

from .conftest import ACCEPTANCE, make_problem, random_hyper, random_state, richardson

pytestmark = pytest.mark.slow


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS/FAIL for ``number``; the body sets ``info['detail']``."""
    info = {"detail": ""}
    try:
        yield info
    except AssertionError as exc:
        msg = str(exc).splitlines()[0] if str(exc) else "assertion failed"
        ACCEPTANCE[number] = (False, f"{title}: {info['detail'] or msg}")
        raise
    except Exception as exc:
        ACCEPTANCE[number] = (False, f"{title}: error {type(exc).__name__}: {exc}")
        raise
    ACCEPTANCE[number] = (True, f"{title}: {info['detail']}")


def spd_inverse(rng, n):
    A = rng.normal(size=(n, n))
    return np.linalg.inv(A @ A.T + np.eye(n))


# ---------------------------------------------------------------------------
# 1. expectation oracles


def test_c01_expectations_match_monte_carlo():
    rng = np.random.default_rng(101)
    n_draws, n_cfg = 10**6, 20
    worst = {"omega": 0.0, "psi": 0.0, "upsilon": 0.0}
    t0 = time.perf_counter()
    with criterion(1, "closed-form expectations vs Monte Carlo (1e6 draws, 4 SE)") as info:
        for c in range(n_cfg):
            d = 1 + c % 3
            h = random_hyper(rng, d)
            zeta = float(rng.uniform(0.5, 1.5))
            Z, X = rng.normal(size=(3, d)), rng.normal(size=(4, d))
            sub = np.random.default_rng(1000 + c)
            m, se = mc.mc_omega(Z, X, h, n_draws, sub, zeta)
            worst["omega"] = max(worst["omega"], np.max(np.abs(omega_block(Z, X, h, zeta) - m) / se))
            Ci = spd_inverse(rng, 3)
            m, se = mc.mc_psi(Z, X[:3], Ci, h, n_draws, sub, zeta)
            worst["psi"] = max(worst["psi"], np.max(np.abs(psi_block(Z, X[:3], Ci, h, zeta) - m) / se))
            x, x2 = rng.normal(size=d), rng.normal(size=d)
            m, se = mc.mc_upsilon(x, x2, h, n_draws, sub)
            worst["upsilon"] = max(worst["upsilon"], abs(upsilon_entry(x, x2, h) - m) / se)
        elapsed = time.perf_counter() - t0
        info["detail"] = (
            f"{n_cfg} configs per family, worst |z| omega {worst['omega']:.2f}, psi {worst['psi']:.2f}, "
            f"upsilon {worst['upsilon']:.2f}; {elapsed:.0f}s"
        )
        assert max(worst.values()) < 4.0
        assert elapsed < 300


# ---------------------------------------------------------------------------
# 2. derivative suite

FD_STEP = 1e-6


def _fd_family(value, grads, h, keys):
    """Largest relative error over the derivatives of one formula family at ``h``."""
    worst = 0.0
    g = grads(h)
    for key in keys:
        coords = range(h.dim) if key in ("nu", "xi") else [None]
        for k in coords:
            def shifted(step):
                if k is None:
                    return h.replace(**{key: getattr(h, key) + step})
                v = getattr(h, key).copy()
                v[k] += step
                return h.replace(**{key: v})

            num = (value(shifted(FD_STEP)) - value(shifted(-FD_STEP))) / (2 * FD_STEP)
            ana = g[key] if k is None else g[key][k]
            scale = max(np.max(np.abs(ana)), np.max(np.abs(num)), 1e-12)
            worst = max(worst, np.max(np.abs(np.asarray(ana) - num)) / scale)
    return worst


def test_c02_derivatives_match_finite_differences():
    rng = np.random.default_rng(202)
    keys = ("nu", "xi", "alpha", "beta")
    worst = {"omega": 0.0, "psi": 0.0, "upsilon": 0.0, "bound": 0.0}
    with criterion(2, "analytic derivatives vs central differences (rel 1e-5)") as info:
        for c in range(20):
            d = 1 + c % 3
            h = random_hyper(rng, d)
            zeta = float(rng.uniform(0.5, 1.5))
            Z, X = rng.normal(size=(3, d)), rng.normal(size=(4, d))
            Ci = spd_inverse(rng, 4)
            worst["omega"] = max(
                worst["omega"],
                _fd_family(lambda hh: omega_block(Z, X, hh, zeta), lambda hh: omega_block_grads(Z, X, hh, zeta), h, keys),
            )
            worst["psi"] = max(
                worst["psi"],
                _fd_family(lambda hh: psi_block(Z, X, Ci, hh, zeta), lambda hh: psi_block_grads(Z, X, Ci, hh, zeta), h, keys),
            )
            x, x2 = rng.normal(size=d), rng.normal(size=d)

            def ups_grads(hh):
                g = upsilon_grads(x, x2, hh)
                return {"nu": g[0], "xi": g[1], "alpha": g[2], "beta": g[3]}

            worst["upsilon"] = max(worst["upsilon"], _fd_family(lambda hh: upsilon_entry(x, x2, hh), ups_grads, h, keys))
        # whole bound, every unconstrained coordinate, one Richardson step
        for c in range(20):
            variant = ("dtc", "fitc", "pitc")[c % 3]
            P = make_problem(variant, n=16, M=3, B=3, seed=c)
            st = random_state(P, rng)
            T = Transform(P.inducing)
            u0 = T.pack(st)
            ana = T.grad(st, exact_gradient(st, P)[1])

            def along(j):
                def f(step):
                    u = u0.copy()
                    u[j] += step
                    return elbo_full(T.unpack(u, st.hyper), P, include_const=True)

                return f

            num = np.array([richardson(along(j), 1e-3) for j in range(u0.size)])
            worst["bound"] = max(worst["bound"], np.max(np.abs(num - ana)) / max(np.max(np.abs(ana)), 1.0))
        info["detail"] = "20 configs per family, worst rel error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
        assert max(worst.values()) < 1e-5


# ---------------------------------------------------------------------------
# 3. unbiasedness


def test_c03_singleton_average_equals_exact_gradient():
    rng = np.random.default_rng(303)
    X = rng.uniform(-2, 2, size=(200, 2))
    y = np.sin(X[:, 0]) * np.cos(X[:, 1]) + 0.1 * rng.normal(size=200)
    blocks = kmeans_partition(X, 10, seed=0).blocks
    noise = NoiseKernelParams([1.0, 1.0], 0.4, 0.2, X[:5])
    inducing = InducingSet(X[:8], 1.0)
    worst = 0.0
    t0 = time.perf_counter()
    with criterion(3, "average of all B singleton gradients equals the exact gradient (rel 1e-10)") as info:
        for variant in ("dtc", "fitc", "pitc", "pic"):
            P = BlockedProblem.build(X, y, blocks, variant, noise, inducing)
            st = random_state(P, rng)
            exact = exact_gradient(st, P)[1].flat()
            acc = GradientBundle.zeros(P.inducing.size, P.dim)
            for s in range(P.n_blocks):
                acc = acc + stochastic_gradient(st, [s], P)[1]
            avg = acc.scaled(1.0 / P.n_blocks).flat()
            worst = max(worst, np.max(np.abs(avg - exact) / np.maximum(np.abs(exact), 1e-300)))
        elapsed = time.perf_counter() - t0
        info["detail"] = f"dtc/fitc/pitc/pic, worst per-coordinate rel error {worst:.1e}; {elapsed:.1f}s"
        assert worst <= 1e-10 and elapsed < 60


# ---------------------------------------------------------------------------
# 4. ELBO identities


def test_c04_bound_identities():
    rng = np.random.default_rng(404)
    errs = {"decomp": 0.0, "reduced": 0.0, "stationary": 0.0}
    with criterion(4, "bound identities (decomposed 1e-10 rel, reduced 1e-8 abs, q* stationary 1e-8)") as info:
        for c in range(12):
            P = make_problem(("dtc", "fitc", "pitc", "pic")[c % 4], seed=c)
            st = random_state(P, rng)
            full = elbo_full(st, P)
            errs["decomp"] = max(errs["decomp"], abs(elbo_decomposed(st, P).total - full) / abs(full))
            qs = q_star_state(st.hyper, P)
            errs["reduced"] = max(errs["reduced"], abs(elbo_reduced(st.hyper, P) + reduced_offset(P) - elbo_full(qs, P)))
            g = exact_gradient(qs, P)[1]
            errs["stationary"] = max(errs["stationary"], np.max(np.abs(g.d_m)), np.max(np.abs(g.d_S)))
        info["detail"] = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
        assert errs["decomp"] <= 1e-10 and errs["reduced"] <= 1e-8 and errs["stationary"] <= 1e-8


# ---------------------------------------------------------------------------
# 5. bound property


def test_c05_bound_below_log_evidence():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, (8, 1))
    y = np.sin(2 * X[:, 0]) + 0.2 * rng.standard_normal(8)
    noise = NoiseKernelParams([1.0], 0.3, 0.2, [[0.0], [1.0]])
    blocks = [np.arange(4), np.arange(4, 8)]
    inducing = InducingSet(X[:3], 1.0)
    lines, ok = [], True
    with criterion(5, "bound + const <= MC log p(y) + 3 SE on |D|=8, |I|=3, d=1") as info:
        for variant in ("dtc", "fitc", "pitc"):
            P = BlockedProblem.build(X, y, blocks, variant, noise, inducing)
            best, _ = fit_exact(P)
            bound = max(elbo_full(best, P, include_const=True), elbo_full(random_state(P, rng), P, include_const=True))
            C = np.zeros((8, 8))
            for b, nb in zip(blocks, P.noise_blocks):
                C[np.ix_(b, b)] = nb.cov
            lm, se = mc.mc_log_marginal(X, y, C, 200_000, np.random.default_rng(0))
            ok &= bound <= lm + 3 * se
            lines.append(f"{variant} {bound:.2f} <= {lm:.2f}+-{se:.2f}")
        info["detail"] = "; ".join(lines)
        assert ok


# ---------------------------------------------------------------------------
# 6. convergence to the exact reference


def _convergence_problem(variant):
    d = 2
    U = np.random.default_rng(5).uniform(-2, 2, size=(10, d))
    noise = NoiseKernelParams(np.full(d, 1.5), 0.3, 1.0, U)
    sd = synth_gp_dataset(1000, d, KernelParams(np.ones(d), 1.0), noise, variant, 10, seed=0, input_low=-2, input_high=2)
    X, y = sd.dataset.inputs, sd.dataset.outputs
    inducing, _ = choose_inducing(X, 50, np.random.default_rng(0))
    return BlockedProblem.build(X, y, sd.partition.blocks, variant, noise, inducing)


CONVERGENCE_CONFIG = dict(
    iterations=5000, batch_size=1, mode="natural", step_a=1.0, step_tau=10.0, step_kappa=1.0, hyper_warmup=200, seed=1
)


def test_c06_stochastic_trajectory_reaches_reference():
    t0 = time.perf_counter()
    parts, results = [], {}
    with criterion(6, "KL to exact reference below 1% of initial within 5000 iterations (VBDTC)") as info:
        for variant in ("dtc", "fitc", "pic"):
            P = _convergence_problem(variant)
            ref, _ = fit_exact(P)
            tr = convergence_study(P, TrainConfig(**CONVERGENCE_CONFIG), reference=ref, record_every=250)
            r_s, r_h = tr.relative_final("kl_inducing"), tr.relative_final("kl_hyper")
            results[variant] = (r_s, r_h)
            tau = tr.trend("kl_inducing")["kendall_tau"]
            parts.append(
                f"{variant} q(s_I) {tr.kl_inducing[0]:.3g}->{tr.kl_inducing[-1]:.3g} ({100 * r_s:.1f}%, tau {tau:.2f}), "
                f"q(theta) {tr.kl_hyper[0]:.3g}->{tr.kl_hyper[-1]:.3g} ({100 * r_h:.1f}%)"
            )
        elapsed = time.perf_counter() - t0
        info["detail"] = "; ".join(parts) + f"; {elapsed:.0f}s"
        r_s, r_h = results["dtc"]
        assert r_s < 0.01 and r_h < 0.01, info["detail"]
        assert elapsed < 900


# ---------------------------------------------------------------------------
# 7 and 9. predictive ordering and PIC sample-size robustness

ORDERING_TRAIN = dict(iterations=3000, batch_size=2, step_a=0.1, step_tau=1000.0)
_ordering_cache = {}


def _ordering_run(seed):
    """Train DTC, FITC and PITC on block-correlated-noise data; score DTC, FITC and PIC."""
    if seed in _ordering_cache:
        return _ordering_cache[seed]
    noise = NoiseKernelParams([1.0], 0.5, 0.1, np.linspace(-3, 3, 3)[:, None])
    sd = synth_gp_dataset(600, 1, KernelParams([1.0], 1.0), noise, "pitc", n_blocks=12, seed=seed)
    X, y = sd.dataset.inputs, sd.dataset.outputs
    tr, te = train_test_split(len(y), 0.2, seed=seed)
    labels = sd.partition.labels()
    blocks = [np.flatnonzero(labels[tr] == b) for b in range(12)]
    Xtr, ytr = X[tr], y[tr]
    inducing, _ = choose_inducing(Xtr, 10, np.random.default_rng(seed))
    start = initial_state(inducing, 1, float(np.std(ytr)))
    out = {}
    for variant in ("dtc", "fitc", "pitc"):
        P = BlockedProblem.build(Xtr, ytr, blocks, variant, noise, inducing)
        st = train(P, TrainConfig(seed=seed, **ORDERING_TRAIN), state=start).state
        if variant == "pitc":
            data = [(Xtr[b], ytr[b], nb.cov) for b, nb in zip(blocks, P.noise_blocks)]
            for n_samples in (1, 256):
                res = predict_pic(st, inducing, X[te], data, labels[te], n_samples, seed=seed)
                out[f"pic{n_samples}"] = rmse(res.mean, y[te])
                out[f"pic{n_samples}_latent"] = rmse(res.mean, sd.latent[te])
        else:
            mean = predict_analytic(st, inducing, X[te]).mean
            out[variant] = rmse(mean, y[te])
            out[f"{variant}_latent"] = rmse(mean, sd.latent[te])
    _ordering_cache[seed] = out
    return out


SEEDS = range(5)


def test_c07_pic_beats_dtc_and_fitc():
    with criterion(7, "VBPIC RMSE <= VBDTC and <= VBFITC on block-noise data (5 seeds)") as info:
        runs = [_ordering_run(s) for s in SEEDS]
        keys = ("dtc", "fitc", "pic256", "dtc_latent", "fitc_latent", "pic256_latent")
        med = {k: float(np.median([r[k] for r in runs])) for k in keys}
        misses = sum(r["pic256"] > min(r["dtc"], r["fitc"]) for r in runs)
        # scored against observed outputs; the latent-f numbers are reported only
        info["detail"] = (
            f"median rmse vs y: pic {med['pic256']:.4f}, dtc {med['dtc']:.4f}, fitc {med['fitc']:.4f}; "
            f"ordering fails on {misses}/5 seeds; vs latent f: pic {med['pic256_latent']:.4f}, "
            f"dtc {med['dtc_latent']:.4f}, fitc {med['fitc_latent']:.4f}"
        )
        assert med["pic256"] <= med["dtc"] and med["pic256"] <= med["fitc"] and misses <= 2


def test_c09_more_samples_do_not_hurt():
    with criterion(9, "PIC RMSE with 256 samples <= with 1 sample (5-seed median)") as info:
        runs = [_ordering_run(s) for s in SEEDS]
        m1 = float(np.median([r["pic1"] for r in runs]))
        m256 = float(np.median([r["pic256"] for r in runs]))
        info["detail"] = f"median rmse 256 samples {m256:.4f}, 1 sample {m1:.4f}"
        assert m256 <= m1


# ---------------------------------------------------------------------------
# 8. constant time per iteration


def _time_per_iteration(n, B, iterations=1000, repeats=3):
    rng = np.random.default_rng(n)
    X = rng.uniform(-2, 2, size=(n, 2))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=n)
    blocks = np.array_split(rng.permutation(n), B)
    noise = NoiseKernelParams([1.0, 1.0], 0.3, 0.1, X[:10])
    inducing = InducingSet(X[:20], 1.0)
    P = BlockedProblem.build(X, y, blocks, "pitc", noise, inducing)
    best = np.inf
    for r in range(repeats):
        t0 = time.perf_counter()
        train(P, TrainConfig(iterations=iterations, batch_size=1, seed=r, trace_every=iterations))
        best = min(best, (time.perf_counter() - t0) / iterations)
    return best


def test_c08_time_per_iteration_independent_of_data_size():
    with criterion(8, "per-iteration time change < 25% when |D| doubles (|S|=1, 1000 iterations)") as info:
        t1 = _time_per_iteration(1000, 10)
        t2 = _time_per_iteration(2000, 20)
        change = abs(t2 / t1 - 1.0)
        info["detail"] = f"{1e3 * t1:.3f} ms vs {1e3 * t2:.3f} ms per iteration ({100 * change:.1f}% change)"
        assert change < 0.25


# ---------------------------------------------------------------------------
# 10. determinism


def test_c10_same_seed_same_artifact(tmp_path):
    rng = np.random.default_rng(10)
    X = rng.uniform(-2, 2, size=(150, 2))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=150)
    path = tmp_path / "d.csv"
    np.savetxt(path, np.column_stack([X, y]), delimiter=",", header="a,b,y", comments="")
    same = []
    with criterion(10, "fixed seed reproduces the model file byte for byte") as info:
        for variant in ("dtc", "pitc", "pic"):
            outs = []
            for k in range(2):
                model = tmp_path / f"{variant}{k}.json"
                argv = ["train", "--data", str(path), "--target", "y", "--model", str(model), "--variant", variant]
                argv += ["--blocks", "5", "--inducing", "10", "--iters", "200", "--seed", "42"]
                assert cli_main(argv) == 0
                outs.append(model.read_bytes())
            same.append(outs[0] == outs[1])
        info["detail"] = ", ".join(f"{v} {'identical' if s else 'DIFFERENT'}" for v, s in zip(("dtc", "pitc", "pic"), same))
        assert all(same)
