"""Versioned, self-describing model files.

A model file is UTF-8 JSON with explicit field names.  Floats are written as
the shortest decimal that parses back to the same double, so
``save -> load -> save`` reproduces the file byte for byte.

Layout (version 1)::

    {
     "format": "vbsgpr-model",
     "version": 1,
     "variant": "pitc",
     "d": 2,
     "seed": 0,
     "inducing": {"rotated_inputs": [[...], ...], "prior_scale": 1.0},
     "state": {"m": [...], "S_chol": [[...], ...], "nu": [...], "xi": [...],
               "alpha": 1.0, "beta": 0.1},
     "noise": {"eps_inverted_lengthscales": [...], "eps_signal_std": 1.0,
               "noise_std": 0.1, "eps_inducing_inputs": [[...], ...]},
     "normalization": {"x_mean": [...], "x_std": [...], "y_mean": 0.0, "y_std": 1.0},
     "centroids": [[...], ...],
     "prior": {"mean": 0.0, "var": 1.0},
     "config": {...},
     "training_blocks": null | [{"inputs": [[...]], "outputs": [...]}, ...]
    }

All arrays are in normalized units.  ``training_blocks`` is only stored for
PIC, whose predictions condition on the block of each test point.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .data import Normalization, nearest_centroid
from .elbo import Prior, VariationalState
from .errors import DimensionError, VBSGPRError
from .expectations import HyperVariational
from .kernels import InducingSet, NoiseKernelParams, gram_eps, jittered_cholesky
from .noise import VariantKind, build_noise_block
from .predict import PredictiveResult, predict_analytic, predict_pic

FORMAT_NAME = "vbsgpr-model"
FORMAT_VERSION = 1


class ModelFormatError(VBSGPRError):
    """Unreadable, foreign or incompatible model file."""


def _vec(a):
    return [float(v) for v in np.ravel(a)]


def _mat(a):
    a = np.asarray(a, dtype=float)
    if a.shape[0] == 0:
        return []
    return [[float(v) for v in row] for row in a.reshape(a.shape[0], -1)]


def _arr(x, ncols=None):
    a = np.asarray(x, dtype=float)
    if ncols is not None and a.size == 0:
        return np.zeros((0, ncols))
    return a


def _plain(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


@dataclass
class ModelArtifact:
    variant: VariantKind
    inducing: InducingSet
    state: VariationalState
    noise: NoiseKernelParams
    normalization: Normalization
    centroids: np.ndarray
    prior: Prior = Prior()
    config: dict = field(default_factory=dict)
    seed: int = 0
    training_blocks: list = None

    def __post_init__(self):
        self.variant = VariantKind.parse(self.variant)
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        d = self.d
        if self.state.hyper.dim != d or self.centroids.shape[1] != d:
            raise DimensionError("artifact components disagree on the input dimension")
        if self.variant is VariantKind.PIC and self.training_blocks is None:
            raise ValueError("a PIC artifact must carry its training blocks")

    @property
    def d(self):
        return self.inducing.dim

    def to_dict(self):
        h = self.state.hyper
        blocks = None
        if self.training_blocks is not None:
            blocks = [{"inputs": _mat(X), "outputs": _vec(y)} for X, y in self.training_blocks]
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "variant": self.variant.value,
            "d": int(self.d),
            "seed": int(self.seed),
            "inducing": {
                "rotated_inputs": _mat(self.inducing.rotated_inputs),
                "prior_scale": float(self.inducing.prior_scale),
            },
            "state": {
                "m": _vec(self.state.m),
                "S_chol": _mat(self.state.S_chol),
                "nu": _vec(h.nu),
                "xi": _vec(h.xi),
                "alpha": float(h.alpha),
                "beta": float(h.beta),
            },
            "noise": {
                "eps_inverted_lengthscales": _vec(self.noise.eps_inverted_lengthscales),
                "eps_signal_std": float(self.noise.eps_signal_std),
                "noise_std": float(self.noise.noise_std),
                "eps_inducing_inputs": _mat(self.noise.eps_inducing_inputs),
            },
            "normalization": self.normalization.to_dict(),
            "centroids": _mat(self.centroids),
            "prior": {"mean": float(self.prior.mean), "var": float(self.prior.var)},
            "config": {k: _plain(v) for k, v in sorted(self.config.items())},
            "training_blocks": blocks,
        }

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
            raise ModelFormatError("not a vbsgpr model file")
        version = doc.get("version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(
                f"model file version {version!r} is not supported (expected {FORMAT_VERSION})"
            )
        try:
            d = int(doc["d"])
            st = doc["state"]
            hyper = HyperVariational(
                _arr(st["nu"]), _arr(st["xi"]), float(st["alpha"]), float(st["beta"])
            )
            inducing = InducingSet(_arr(doc["inducing"]["rotated_inputs"]), float(doc["inducing"]["prior_scale"]))
            state = VariationalState(_arr(st["m"]), _arr(st["S_chol"]), hyper)
            nz = doc["noise"]
            noise = NoiseKernelParams(
                _arr(nz["eps_inverted_lengthscales"]),
                float(nz["eps_signal_std"]),
                float(nz["noise_std"]),
                _arr(nz["eps_inducing_inputs"], ncols=d),
            )
            blocks = doc.get("training_blocks")
            if blocks is not None:
                blocks = [(_arr(b["inputs"], ncols=d).reshape(-1, d), _arr(b["outputs"])) for b in blocks]
            art = cls(
                VariantKind.parse(doc["variant"]),
                inducing,
                state,
                noise,
                Normalization.from_dict(doc["normalization"]),
                _arr(doc["centroids"]),
                Prior(float(doc["prior"]["mean"]), float(doc["prior"]["var"])),
                dict(doc.get("config", {})),
                int(doc.get("seed", 0)),
                blocks,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model file: {exc}") from exc
        if art.d != d:
            raise ModelFormatError(f"declared d={d} but stored arrays have d={art.d}")
        return art

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    @classmethod
    def loads(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    # -- prediction --------------------------------------------------------

    def block_data(self):
        """``(X_B, y_B, C_B)`` per training block, for PIC prediction."""
        if self.training_blocks is None:
            raise ValueError("artifact holds no training blocks")
        return [(X, y, build_noise_block(self.variant, X, self.noise).cov) for X, y in self.training_blocks]

    def predict(self, X_raw, n_samples=256, seed=0, observation=True):
        """De-normalized predictive moments at raw inputs ``X_raw``.

        With ``observation`` the noise variance at each test input is added,
        giving moments of ``y*`` rather than ``f(x*)``.
        """
        X_raw = np.asarray(X_raw, dtype=float)
        if X_raw.size == 0 and X_raw.ndim < 2:
            X_raw = X_raw.reshape(0, self.d)
        X_raw = np.atleast_2d(X_raw)
        if X_raw.ndim != 2 or X_raw.shape[1] != self.d:
            raise DimensionError(f"inputs have {X_raw.shape[1]} columns, model expects {self.d}")
        if X_raw.shape[0] == 0:
            return PredictiveResult(np.zeros(0), np.zeros(0), self.variant, 0)
        Xs = self.normalization.transform_x(X_raw)
        if self.variant is VariantKind.PIC:
            asg = nearest_centroid(Xs, self.centroids)
            res = predict_pic(self.state, self.inducing, Xs, self.block_data(), asg, n_samples, seed)
        else:
            res = predict_analytic(self.state, self.inducing, Xs, self.variant)
        var = res.variance
        if observation:
            var = var + observation_noise_var(self.variant, Xs, self.noise)
        return PredictiveResult(
            self.normalization.inverse_y(res.mean),
            self.normalization.inverse_var(var),
            self.variant,
            res.sample_count,
        )


def observation_noise_var(variant, Xs, noise):
    """Diagonal of the noise covariance at each row of ``Xs`` (a one-point block each)."""
    variant = VariantKind.parse(variant)
    Xs = np.atleast_2d(Xs)
    white = noise.noise_std**2 * np.ones(Xs.shape[0])
    if variant is VariantKind.DTC:
        return white
    U = noise.eps_inducing_inputs
    lam = noise.eps_inverted_lengthscales
    s = noise.eps_signal_std
    Luu, _ = jittered_cholesky(gram_eps(U, U, lam, s), scale=s**2, name="K_eps_UU")
    V = linalg.solve_triangular(Luu, gram_eps(U, Xs, lam, s), lower=True)
    return white + np.maximum(s**2 - np.sum(V**2, axis=0), 0.0)


__all__ = ["FORMAT_NAME", "FORMAT_VERSION", "ModelArtifact", "ModelFormatError", "observation_noise_var"]
