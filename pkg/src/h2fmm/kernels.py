"""Interaction kernels and the dense matrix oracle."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, OracleScaleError
from .geometry import ParticleSet

KERNEL_KINDS = ("laplace3d", "laplace2d", "gaussian", "one")

DEFAULT_ORACLE_MAX = 16384
ORACLE_MAX_ENV = "H2FMM_ORACLE_MAX"


@dataclass(frozen=True)
class KernelSpec:
    """A radial interaction kernel.

    ``regularization`` is the delta in r -> sqrt(r^2 + delta^2); with
    delta = 0 the singular kernels are infinite at coincident points.
    ``sigma`` is the gaussian width and is ignored by the other kinds.
    """

    kind: str = "laplace3d"
    regularization: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ConfigurationError(
                f"unsupported kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}"
            )
        if self.regularization < 0.0:
            raise ConfigurationError("regularization must be >= 0")
        if self.kind == "gaussian" and self.sigma <= 0.0:
            raise ConfigurationError("gaussian sigma must be > 0")

    @property
    def is_symmetric(self) -> bool:
        return True


def kernel_block(spec: KernelSpec, points_a, points_b) -> np.ndarray:
    """Evaluate the kernel between two point sets.

    Parameters
    ----------
    spec : KernelSpec
    points_a : (na, 3) array
    points_b : (nb, 3) array

    Returns
    -------
    (na, nb) float64 matrix of kernel values.
    """
    a = np.asarray(points_a, dtype=np.float64)
    b = np.asarray(points_b, dtype=np.float64)
    if spec.kind == "one":
        return np.ones((len(a), len(b)))
    aa = (a * a).sum(axis=1)
    bb = (b * b).sum(axis=1)
    r2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(r2, 0.0, out=r2)
    r2 += spec.regularization**2
    if spec.kind == "gaussian":
        return np.exp(-r2 / spec.sigma**2)
    with np.errstate(divide="ignore"):
        if spec.kind == "laplace3d":
            return 1.0 / np.sqrt(r2)
        return -0.5 * np.log(r2)  # laplace2d: -log r


def oracle_limit() -> int:
    """Dense-oracle size guard, overridable via H2FMM_ORACLE_MAX."""
    return int(os.environ.get(ORACLE_MAX_ENV, DEFAULT_ORACLE_MAX))


def dense_matrix(particles: ParticleSet, kernel: KernelSpec) -> np.ndarray:
    """The full N x N kernel matrix, for verification at desk scale.

    Refuses to run above :func:`oracle_limit` since the cost and storage
    grow quadratically.
    """
    n = len(particles)
    limit = oracle_limit()
    if n > limit:
        raise OracleScaleError(
            f"dense oracle refused for N={n} > {limit}; "
            f"raise {ORACLE_MAX_ENV} to override"
        )
    return kernel_block(kernel, particles.positions, particles.positions)
