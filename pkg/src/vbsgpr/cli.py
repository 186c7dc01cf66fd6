"""Command-line front end: ``vbsgpr {train,predict,evaluate,diagnose}``.

Exit codes: 0 success, 2 usage or input error (bad flags, missing target
column, dimension mismatch, unreadable model), 1 numerical failure.
"""

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from .data import check_block_sizes, ingest_csv, kmeans_partition, read_csv_table
from .elbo import BlockedProblem, Prior
from .errors import DataError, DimensionError, VBSGPRError
from .kernels import NoiseKernelParams
from .metrics import convergence_study, evaluate_predictions
from .model_io import ModelArtifact, ModelFormatError
from .noise import VariantKind
from .svi import TraceRow, TrainConfig, choose_inducing, train

logger = logging.getLogger("vbsgpr")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# ---------------------------------------------------------------------------
# shared model construction


def _train_config(args, iterations=None):
    return TrainConfig(
        iterations=args.iters if iterations is None else iterations,
        batch_size=args.batch,
        step_a=args.step_a,
        step_tau=args.step_tau,
        step_kappa=args.step_kappa,
        seed=args.seed,
        mode=args.optimizer,
        learn_noise=args.learn_noise,
        threads=args.threads,
        hyper_warmup=args.hyper_warmup,
    )


def build_problem(ds, variant, n_blocks, n_inducing, seed, noise_std=0.1, eps_std=0.3, eps_lengthscale=1.0, n_eps=None):
    """Partition, inducing set and noise model for a normalized dataset.

    Returns ``(problem, partition, noise)``.  Noise-kernel inducing inputs are
    ``n_eps`` (default ``n_inducing``) k-means centroids of the inputs.
    """
    if n_blocks < 1 or n_inducing < 1:
        raise UsageError("--blocks and --inducing must be >= 1")
    if n_blocks > ds.n:
        raise UsageError(f"--blocks {n_blocks} exceeds the number of rows ({ds.n})")
    if n_inducing > ds.n:
        raise UsageError(f"--inducing {n_inducing} exceeds the number of rows ({ds.n})")
    part = kmeans_partition(ds.inputs, n_blocks, seed=seed)
    check_block_sizes(part, n_inducing)
    n_eps = n_inducing if n_eps is None else n_eps
    U = kmeans_partition(ds.inputs, min(n_eps, ds.n), seed=seed + 1).centroids
    noise = NoiseKernelParams(np.full(ds.dim, 1.0 / eps_lengthscale), eps_std, noise_std, U)
    inducing, _ = choose_inducing(ds.inputs, n_inducing, np.random.default_rng(seed))
    problem = BlockedProblem.build(ds.inputs, ds.outputs, part.blocks, variant, noise, inducing)
    return problem, part, noise


def _problem_from_args(args, ds):
    return build_problem(
        ds,
        VariantKind.parse(args.variant),
        args.blocks,
        args.inducing,
        args.seed,
        args.noise_std,
        args.eps_signal_std,
        args.eps_lengthscale,
        args.eps_inducing,
    )


def _ingest(path, target):
    try:
        return ingest_csv(path, target)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    ds = _ingest(args.data, args.target)
    problem, part, noise = _problem_from_args(args, ds)
    config = _train_config(args)
    prior = Prior.preset(args.prior_preset)
    res = train(problem, config, prior, noise=noise)
    noise = res.noise if res.noise is not None else noise
    problem = res.problem
    variant = problem.variant
    blocks = None
    if variant is VariantKind.PIC:
        blocks = [(problem.X[b], problem.y[b]) for b in problem.blocks]
    cfg = config.to_dict()
    cfg.update(
        variant=variant.value,
        blocks=args.blocks,
        inducing=args.inducing,
        prior_preset=args.prior_preset,
        target_column=args.target,
        feature_names=list(ds.feature_names),
    )
    art = ModelArtifact(
        variant, problem.inducing, res.state, noise, ds.normalization, part.centroids, prior, cfg, args.seed, blocks
    )
    art.save(args.model)
    if args.trace:
        _write_rows(args.trace, TraceRow.COLUMNS, [r.values() for r in res.trace])
    print(f"trained {variant.value} on {ds.n} rows ({ds.rejected_rows} rejected); model written to {args.model}")
    return EXIT_OK


def _load_model(path):
    try:
        return ModelArtifact.load(path)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such model file") from None
    except ModelFormatError as exc:
        raise UsageError(str(exc)) from None


def _read_inputs(path, art, require_target):
    target = art.config.get("target_column")
    try:
        X, y, names, _ = read_csv_table(path, target, require_target=require_target)
    except FileNotFoundError:
        raise UsageError(f"{path}: no such file") from None
    if X.shape[1] != art.d:
        raise DimensionError(f"{path} has {X.shape[1]} input columns but the model expects d={art.d}")
    return X, y


def cmd_predict(args):
    art = _load_model(args.model)
    X, _ = _read_inputs(args.data, art, require_target=False)
    res = art.predict(X, n_samples=args.samples, seed=args.seed, observation=not args.latent)
    rows = zip(res.mean, res.variance)
    if args.out:
        _write_rows(args.out, ("mean", "variance"), rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(("mean", "variance"))
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return EXIT_OK


def cmd_evaluate(args):
    art = _load_model(args.model)
    X, y = _read_inputs(args.data, art, require_target=True)
    if X.shape[0] == 0:
        raise DataError(f"{args.data}: no complete rows to evaluate")
    t0 = time.perf_counter()
    res = art.predict(X, n_samples=args.samples, seed=args.seed)
    report = evaluate_predictions(res, y, time.perf_counter() - t0)
    print(f"variant={report.variant} n_test={report.n_test} rmse={report.rmse:.6g} mnlp={report.mnlp:.6g}")
    if args.out:
        _write_rows(args.out, report.COLUMNS, [report.as_row()])
    return EXIT_OK


def cmd_diagnose(args):
    ds = _ingest(args.data, args.target)
    if ds.n > 5000:
        raise UsageError(f"diagnose needs exact gradients; {ds.n} rows exceeds the 5000-row limit")
    problem, _, _ = _problem_from_args(args, ds)
    prior = Prior.preset(args.prior_preset)
    config = _train_config(args)
    tr = convergence_study(problem, config, prior, record_every=args.record_every, with_qstar=args.with_qstar)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, f"convergence_{problem.variant.value}.csv")
    tr.write_csv(path)
    for which in ("kl_inducing", "kl_hyper"):
        t = tr.trend(which)
        print(
            f"{which}: initial={getattr(tr, which)[0]:.6g} final={getattr(tr, which)[-1]:.6g} "
            f"kendall_tau={t['kendall_tau']:.3f} p={t['p_value']:.3g} log_slope={t['log_slope']:.3g}"
        )
    print(f"trace written to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_model_flags(p):
    p.add_argument("--variant", default="pitc", choices=[v.value for v in VariantKind])
    p.add_argument("--blocks", type=int, default=10, help="number of k-means mini-batches B")
    p.add_argument("--inducing", type=int, default=50, help="number of inducing inputs |I|")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--batch", type=int, default=1, help="blocks sampled per iteration |S|")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step-a", type=float, default=0.01)
    p.add_argument("--step-tau", type=float, default=100.0)
    p.add_argument("--step-kappa", type=float, default=0.75)
    p.add_argument("--optimizer", default="adaptive", choices=["adaptive", "plain", "natural"])
    p.add_argument("--hyper-warmup", type=int, default=0, help="iterations with hyperparameters frozen")
    p.add_argument("--prior-preset", default="standard", choices=sorted(Prior.PRESETS))
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fix-noise", dest="learn_noise", action="store_false", help="keep noise parameters fixed (default)")
    g.add_argument("--learn-noise", dest="learn_noise", action="store_true")
    p.set_defaults(learn_noise=False)
    p.add_argument("--noise-std", type=float, default=0.1, help="white-noise std (normalized units)")
    p.add_argument("--eps-signal-std", type=float, default=0.3)
    p.add_argument("--eps-lengthscale", type=float, default=1.0)
    p.add_argument("--eps-inducing", type=int, help="noise-kernel inducing inputs (default: --inducing)")
    p.add_argument("--threads", type=int, default=1)


def make_parser():
    parser = argparse.ArgumentParser(prog="vbsgpr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write the model file and trace CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--trace", help="output training-trace CSV")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("predict", cmd_predict, "predictive mean and variance per input row"),
        ("evaluate", cmd_evaluate, "RMSE and MNLP on a labelled file"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out")
        p.add_argument("--samples", type=int, default=256, help="hyperparameter samples for PIC")
        p.add_argument("--seed", type=int, default=0)
        if name == "predict":
            p.add_argument("--latent", action="store_true", help="variance of f(x*) without observation noise")
        p.set_defaults(func=func)

    p = sub.add_parser("diagnose", help="convergence study against the exact-gradient reference")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--record-every", type=int, default=50)
    p.add_argument("--with-qstar", action="store_true")
    _add_model_flags(p)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "samples", 1) < 1:
        parser.error("--samples must be >= 1")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (UsageError, DataError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VBSGPRError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
