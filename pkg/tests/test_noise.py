import numpy as np
import pytest

from vbsgpr.kernels import NoiseKernelParams
from vbsgpr.noise import (
    NoiseBlock,
    VariantKind,
    apply_inverse,
    block_logdet,
    build_noise_block,
    build_noise_blocks,
)


def dense_residual(X, U, lam, s, sn):
    def k(A, B):
        out = np.empty((len(A), len(B)))
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                out[i, j] = s * s * np.exp(-0.5 * np.sum((lam * a - lam * b) ** 2))
        return out

    return k(X, X) - k(X, U) @ np.linalg.inv(k(U, U)) @ k(U, X) + sn * sn * np.eye(len(X))


@pytest.fixture
def noise(rng):
    return NoiseKernelParams([0.8, 1.3], 0.7, 0.4, rng.normal(size=(4, 2)))


def test_variant_parse():
    assert VariantKind.parse("PIC") is VariantKind.PIC
    assert VariantKind.parse(VariantKind.DTC) is VariantKind.DTC
    with pytest.raises(ValueError):
        VariantKind.parse("full")


def test_dtc_block_is_white():
    nz = NoiseKernelParams([1.0], 1.0, 0.5, [[0.0]])
    C = build_noise_block("dtc", np.array([[0.0], [1.0], [2.0]]), nz)
    assert np.array_equal(C.cov, np.diag([0.25, 0.25, 0.25]))
    v = np.array([1.0, -2.0, 0.5])
    assert np.allclose(apply_inverse(C, v), v / 0.25, rtol=1e-12)


def test_dtc_ignores_eps_params(rng):
    X = rng.normal(size=(5, 2))
    a = build_noise_block("dtc", X, NoiseKernelParams([1, 1], 1.0, 0.3, rng.normal(size=(3, 2))))
    b = build_noise_block("dtc", X, NoiseKernelParams([4, 0.1], 9.0, 0.3, rng.normal(size=(2, 2))))
    assert np.array_equal(a.cov, b.cov)


def test_identity_logdet_is_zero():
    C = build_noise_block("dtc", np.zeros((4, 1)), NoiseKernelParams([1.0], 1.0, 1.0, [[0.0]]))
    assert block_logdet(C) == 0.0


def test_pitc_dense_oracle(rng, noise):
    X = rng.normal(size=(4, 2))
    C = build_noise_block("pitc", X, noise)
    ref = dense_residual(X, noise.eps_inducing_inputs, noise.eps_inverted_lengthscales, 0.7, 0.4)
    assert np.max(np.abs(C.cov - ref)) < 1e-10
    assert np.array_equal(build_noise_block("pic", X, noise).cov, C.cov)


def test_fitc_is_pitc_diagonal(rng, noise):
    X = rng.normal(size=(6, 2))
    full = build_noise_block("pitc", X, noise).cov
    for v in ("fitc", "fic"):
        assert np.array_equal(build_noise_block(v, X, noise).cov, np.diag(np.diag(full)))


def test_fitc_interpolation_point(rng, noise):
    X = np.vstack([noise.eps_inducing_inputs[1], rng.normal(size=(2, 2))])
    C = build_noise_block("fitc", X, noise)
    assert C.cov[0, 0] == pytest.approx(0.4**2, abs=1e-10)


@pytest.mark.parametrize("variant", list(VariantKind))
def test_residual_psd(rng, noise, variant):
    X = rng.normal(size=(8, 2))
    C = build_noise_block(variant, X, noise)
    assert np.linalg.eigvalsh(C.cov - 0.16 * np.eye(8)).min() >= -1e-8


def test_inverse_and_logdet(rng):
    A = rng.normal(size=(5, 5))
    C = NoiseBlock.from_cov(A @ A.T + np.eye(5))
    v = rng.normal(size=5)
    assert np.allclose(C.cov @ apply_inverse(C, v), v, rtol=1e-8)
    assert block_logdet(C) == pytest.approx(np.sum(np.log(np.linalg.eigvalsh(C.cov))), rel=1e-10)


def test_empty_block_and_list(rng, noise):
    assert build_noise_block("pitc", np.zeros((0, 2)), noise).size == 0
    X = rng.normal(size=(7, 2))
    blocks = build_noise_blocks("pitc", X, [np.arange(3), np.arange(3, 7)], noise)
    assert [b.size for b in blocks] == [3, 4]


def test_invalid_noise_params():
    with pytest.raises(ValueError):
        NoiseKernelParams([1.0], 1.0, 0.0, [[0.0]])
