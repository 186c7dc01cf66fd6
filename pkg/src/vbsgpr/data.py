"""Dataset ingestion, normalization, k-means partitioning and synthetic GP data."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DataError
from .kernels import KernelParams, NoiseKernelParams, gram_ff, jittered_cholesky
from .noise import VariantKind, build_noise_block

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12
_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass
class Normalization:
    """Per-column affine maps used to z-normalize inputs and outputs."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    @classmethod
    def fit(cls, X, y=None):
        X = np.atleast_2d(X)
        x_mean = X.mean(axis=0)
        x_std = X.std(axis=0)
        for j in np.flatnonzero(x_std < STD_FLOOR):
            logger.warning("input column %d is constant; std floored at %g", j, STD_FLOOR)
        x_std = np.maximum(x_std, STD_FLOOR)
        if y is None or len(y) == 0:
            return cls(x_mean, x_std)
        y_mean = float(np.mean(y))
        y_std = float(np.std(y))
        if y_std < STD_FLOOR:
            logger.warning("target is constant; std floored at %g", STD_FLOOR)
            y_std = STD_FLOOR
        return cls(x_mean, x_std, y_mean, y_std)

    def transform_x(self, X):
        return (np.atleast_2d(X) - self.x_mean) / self.x_std

    def inverse_x(self, Xn):
        return np.atleast_2d(Xn) * self.x_std + self.x_mean

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_y(self, yn):
        return np.asarray(yn, dtype=float) * self.y_std + self.y_mean

    def inverse_var(self, var):
        return np.asarray(var, dtype=float) * self.y_std**2

    def to_dict(self):
        return {
            "x_mean": [float(v) for v in self.x_mean],
            "x_std": [float(v) for v in self.x_std],
            "y_mean": float(self.y_mean),
            "y_std": float(self.y_std),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["x_mean"], float), np.array(d["x_std"], float), d["y_mean"], d["y_std"])


@dataclass
class Dataset:
    """Inputs and outputs in normalized space plus the normalization that produced them."""

    inputs: np.ndarray
    outputs: np.ndarray
    normalization: Normalization = None
    feature_names: list = field(default_factory=list)
    target_name: str = "y"
    rejected_rows: int = 0

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.asarray(self.outputs, dtype=float).ravel()
        n, d = self.inputs.shape
        if self.outputs.size and self.outputs.shape[0] != n:
            raise DataError(f"{n} input rows but {self.outputs.shape[0]} outputs")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise DataError("dataset contains non-finite values")
        if self.normalization is None:
            self.normalization = Normalization.identity(d)
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(d)]

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.inputs[idx],
            self.outputs[idx] if self.outputs.size else self.outputs,
            self.normalization,
            list(self.feature_names),
            self.target_name,
        )

    def raw_inputs(self):
        return self.normalization.inverse_x(self.inputs)

    def raw_outputs(self):
        return self.normalization.inverse_y(self.outputs)


def _parse_float(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {text!r} as a number") from None
    return v


def read_csv_table(path, target_column=None, require_target=True):
    """Read a headered numeric CSV.

    Returns ``(X, y, feature_names, rejected)`` in raw units.  Rows with a
    missing value in any used column are dropped and counted; malformed
    numbers raise :class:`DataError` naming the row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty (a header row is required)") from None
        if target_column is not None and target_column in header:
            t = header.index(target_column)
        elif require_target:
            raise DataError(f"target column {target_column!r} not found in header {header}")
        else:
            t = None
        feat = [j for j in range(len(header)) if j != t]
        rows_x, rows_y, rejected = [], [], 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"row {lineno}: expected {len(header)} fields, found {len(rec)}"
                )
            cells = [c.strip() for c in rec]
            if any(cells[j].lower() in _MISSING for j in feat + ([t] if t is not None else [])):
                rejected += 1
                continue
            rows_x.append([_parse_float(cells[j], lineno, header[j]) for j in feat])
            if t is not None:
                rows_y.append(_parse_float(cells[t], lineno, header[t]))
    if rejected:
        logger.warning("%s: rejected %d row(s) with missing values", path, rejected)
    d = len(feat)
    X = np.array(rows_x, dtype=float).reshape(-1, d)
    y = np.array(rows_y, dtype=float)
    bad = ~np.all(np.isfinite(X), axis=1)
    if t is not None:
        bad |= ~np.isfinite(y)
    if np.any(bad):
        first = int(np.flatnonzero(bad)[0])
        raise DataError(f"non-finite value in data row {first + 1}")
    return X, y, [header[j] for j in feat], rejected


def ingest_csv(path, target_column, normalize=True, normalization=None):
    """Load a CSV into a :class:`Dataset`.

    Parameters
    ----------
    normalize : bool
        Fit a z-normalization on this file (ignored if ``normalization`` given).
    normalization : Normalization, optional
        Apply an existing normalization (e.g. the one stored with a model).
    """
    X, y, names, rejected = read_csv_table(path, target_column)
    if X.shape[0] == 0:
        raise DataError(f"{path}: no complete data rows")
    if normalization is None:
        normalization = Normalization.fit(X, y) if normalize else Normalization.identity(X.shape[1])
    ds = Dataset(
        normalization.transform_x(X),
        normalization.transform_y(y),
        normalization,
        names,
        target_column,
        rejected,
    )
    return ds


# ---------------------------------------------------------------------------
# k-means


@dataclass
class Partition:
    """Disjoint, covering mini-batches with the centroids that define them."""

    blocks: list
    centroids: np.ndarray
    objective_trace: list = field(default_factory=list)

    @property
    def n_blocks(self):
        return len(self.blocks)

    def labels(self, n=None):
        n = n if n is not None else sum(len(b) for b in self.blocks)
        lab = np.full(n, -1, dtype=int)
        for i, b in enumerate(self.blocks):
            lab[b] = i
        return lab


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / tot)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(X, C):
    d2 = np.sum(X**2, 1)[:, None] - 2 * X @ C.T + np.sum(C**2, 1)[None, :]
    d2 = np.maximum(d2, 0.0)
    return np.argmin(d2, axis=1), d2


def _repair_empty(X, labels, C, k):
    """Give every empty cluster the point of the largest cluster farthest from its centroid."""
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[np.argmax(np.sum((X[members] - C[big]) ** 2, axis=1))]
        labels[far] = j
        C[j] = X[far]
        C[big] = X[labels == big].mean(axis=0)
    return labels, C


def kmeans_partition(X, B, seed=0, max_iters=100, tol=0.0):
    """Lloyd's algorithm with k-means++ seeding.

    Blocks are returned in centroid order; each block's indices are sorted.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if B < 1 or B > n:
        raise DataError(f"cannot partition {n} points into {B} blocks")
    rng = np.random.default_rng(seed)
    if B == n:
        blocks = [np.array([i]) for i in range(n)]
        return Partition(blocks, X.copy(), [0.0])
    C = _kmeanspp(X, B, rng)
    labels, d2 = _assign(X, C)
    labels, C = _repair_empty(X, labels, C, B)
    trace = [float(np.sum((X - C[labels]) ** 2))]
    for _ in range(max_iters):
        for j in range(B):
            C[j] = X[labels == j].mean(axis=0)
        new, _ = _assign(X, C)
        new, C = _repair_empty(X, new, C, B)
        for j in range(B):
            C[j] = X[new == j].mean(axis=0)
        obj = float(np.sum((X - C[new]) ** 2))
        trace.append(obj)
        changed = np.any(new != labels)
        labels = new
        if not changed or trace[-2] - obj <= tol * max(trace[-2], 1e-300):
            break
    blocks = [np.flatnonzero(labels == j) for j in range(B)]
    return Partition(blocks, C, trace)


def check_block_sizes(partition, n_inducing, factor=4.0):
    """Warn when a block is much larger than the number of inducing inputs."""
    big = [len(b) for b in partition.blocks if len(b) > factor * max(n_inducing, 1)]
    if big:
        logger.warning(
            "%d block(s) exceed %.0fx the inducing-set size (largest %d); per-step cost grows quadratically",
            len(big),
            factor,
            max(big),
        )
    return not big


def train_test_split(n, test_fraction, seed=0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticData:
    dataset: Dataset
    latent: np.ndarray
    kernel: KernelParams
    noise: NoiseKernelParams
    variant: VariantKind
    partition: Partition


def synth_gp_dataset(
    n,
    d,
    kernel,
    noise,
    variant="dtc",
    n_blocks=1,
    seed=0,
    X=None,
    input_low=-3.0,
    input_high=3.0,
):
    """Draw ``y ~ N(0, K_DD + C_DD)`` with dense Cholesky factors.

    ``C_DD`` is block diagonal over a k-means partition of the inputs and has
    the structure of ``variant``.  The latent ``f`` is returned separately.
    """
    if n > 5000:
        raise ValueError("dense synthetic sampling is limited to n <= 5000")
    rng = np.random.default_rng(seed)
    if X is None:
        X = rng.uniform(input_low, input_high, size=(n, d))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    variant = VariantKind.parse(variant)
    part = kmeans_partition(X, n_blocks, seed=seed)
    K = gram_ff(X, X, kernel)
    Lk, _ = jittered_cholesky(K, scale=kernel.signal_std**2, name="K_DD")
    f = Lk @ rng.standard_normal(n)
    eps = np.zeros(n)
    for b in part.blocks:
        C = build_noise_block(variant, X[b], noise)
        eps[b] = linalg.cholesky(C.cov, lower=True) @ rng.standard_normal(len(b))
    ds = Dataset(X, f + eps, Normalization.identity(d))
    return SyntheticData(ds, f, kernel, noise, variant, part)


def nearest_centroid(X, centroids):
    """Index of the nearest centroid for each row (lowest index wins ties)."""
    X = np.atleast_2d(X)
    d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
    return np.argmin(d2, axis=1)


__all__ = [
    "Normalization",
    "Dataset",
    "read_csv_table",
    "ingest_csv",
    "Partition",
    "kmeans_partition",
    "check_block_sizes",
    "train_test_split",
    "SyntheticData",
    "synth_gp_dataset",
    "nearest_centroid",
]
