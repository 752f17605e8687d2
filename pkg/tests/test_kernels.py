import numpy as np
import pytest

from h2fmm.errors import ConfigurationError, OracleScaleError
from h2fmm.geometry import DistributionSpec, ParticleSet, generate
from h2fmm.kernels import KernelSpec, dense_matrix, kernel_block, oracle_limit


def test_one_kernel_all_ones():
    ps = generate(DistributionSpec("random-cube", 50, seed=0))
    a = dense_matrix(ps, KernelSpec("one"))
    assert np.array_equal(a, np.ones((50, 50)))


def test_laplace3d_inverse_distance():
    ps = ParticleSet(np.array([[0.1, 0.1, 0.1], [0.1, 0.1, 0.6]]))
    a = dense_matrix(ps, KernelSpec("laplace3d"))
    assert a[0, 1] == pytest.approx(2.0, abs=1e-14)  # 1/r at r = 0.5
    assert np.isinf(a[0, 0])


def test_off_diagonal_half_at_distance_two():
    pts_a = np.array([[0.0, 0.0, 0.0]])
    pts_b = np.array([[2.0, 0.0, 0.0]])
    val = kernel_block(KernelSpec("laplace3d"), pts_a, pts_b)
    assert val[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_regularized_diagonal():
    ps = ParticleSet(np.array([[0.5, 0.5, 0.5]]))
    a = dense_matrix(ps, KernelSpec("laplace3d", regularization=0.25))
    assert a[0, 0] == pytest.approx(4.0, rel=1e-14)


def test_laplace2d_log():
    pts = np.array([[0.0, 0.0, 0.0]])
    other = np.array([[0.3, 0.0, 0.0]])
    val = kernel_block(KernelSpec("laplace2d"), pts, other)
    assert val[0, 0] == pytest.approx(-np.log(0.3), rel=1e-13)


def test_gaussian_symmetric_to_machine_precision():
    ps = generate(DistributionSpec("random-cube", 64, seed=2))
    a = dense_matrix(ps, KernelSpec("gaussian", sigma=1.0))
    assert np.abs(a - a.T).max() < 1e-15
    assert a[3, 3] == pytest.approx(1.0)


def test_oracle_guard(monkeypatch):
    monkeypatch.setenv("H2FMM_ORACLE_MAX", "100")
    assert oracle_limit() == 100
    ps = generate(DistributionSpec("random-cube", 101, seed=0))
    with pytest.raises(OracleScaleError):
        dense_matrix(ps, KernelSpec("one"))


def test_unknown_kernel_kind():
    with pytest.raises(ConfigurationError):
        KernelSpec("helmholtz")
    with pytest.raises(ConfigurationError):
        KernelSpec("gaussian", sigma=0.0)
    with pytest.raises(ConfigurationError):
        KernelSpec("laplace3d", regularization=-1.0)
