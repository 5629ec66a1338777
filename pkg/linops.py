"""
Matrix-free linear operators used by the solvers and the test problems.

Operators are scipy.sparse.linalg.LinearOperator instances: `matvec` is the forward map,
`rmatvec` the adjoint. Images are vectorized row-major; spatio-temporal volumes are stored
space-fastest, time-slowest, so a Kronecker product `kron(A_t, A_s)` acts on them directly.
Blur operators use zero (Dirichlet) boundary conditions.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from date_utils import DateUtils

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
METRICS = ("euclidean", "spherical-greatcircle", "time-days")


class DegenerateCovarianceError(ValueError):
    """A covariance matrix failed the Cholesky SPD check (e.g. duplicated coordinates)."""


def identity_operator(n: int) -> LinearOperator:
    return LinearOperator((n, n), matvec=lambda x: np.array(x, dtype=float).ravel(),
                          rmatvec=lambda x: np.array(x, dtype=float).ravel(), dtype=np.float64)


def to_dense(op) -> np.ndarray:
    """Materialize an operator column by column (small operators only)."""
    op = aslinearoperator(op)
    return np.column_stack([op.matvec(e) for e in np.eye(op.shape[1])])


def gaussian_blur_matrix(n: int, sigma: float, bandwidth: int) -> sp.csr_matrix:
    """Banded Toeplitz Gaussian blur; interior rows sum to one, edge rows are truncated."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if bandwidth < 0 or bandwidth >= n:
        raise ValueError(f"bandwidth must satisfy 0 <= bandwidth < n, got bandwidth={bandwidth}, n={n}")

    offsets = np.arange(-bandwidth, bandwidth + 1)
    kernel = np.exp(-offsets.astype(float) ** 2 / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    diagonals = [np.full(n - abs(o), kernel[i]) for i, o in enumerate(offsets)]
    return sp.diags(diagonals, offsets, shape=(n, n), format="csr")


def gaussian_blur_1d(n: int, sigma: float, bandwidth: int) -> LinearOperator:
    return aslinearoperator(gaussian_blur_matrix(n, sigma, bandwidth))


def gaussian_blur_2d(rows: int, cols: int, sigma: float, bandwidth: int) -> LinearOperator:
    if bandwidth >= min(rows, cols):
        raise ValueError(f"bandwidth {bandwidth} must be smaller than min(rows, cols) = {min(rows, cols)}")
    return kron(gaussian_blur_1d(rows, sigma, bandwidth), gaussian_blur_1d(cols, sigma, bandwidth))


class KronOperator(LinearOperator):
    """(A ⊗ B) x computed as vec(A X Bᵀ) on the row-major reshape X of x."""

    def __init__(self, left, right):
        self.left = aslinearoperator(left)
        self.right = aslinearoperator(right)
        (m1, n1), (m2, n2) = self.left.shape, self.right.shape
        super().__init__(dtype=np.dtype(np.float64), shape=(m1 * m2, n1 * n2))

    def _matvec(self, x):
        n1, n2 = self.left.shape[1], self.right.shape[1]
        X = np.asarray(x, dtype=float).reshape(n1, n2)
        partial = self.right.matmat(np.ascontiguousarray(X.T)).T
        return self.left.matmat(np.ascontiguousarray(partial)).ravel()

    def _rmatvec(self, y):
        m1, m2 = self.left.shape[0], self.right.shape[0]
        Y = np.asarray(y, dtype=float).reshape(m1, m2)
        partial = self.right.rmatmat(np.ascontiguousarray(Y.T)).T
        return self.left.rmatmat(np.ascontiguousarray(partial)).ravel()

    def _adjoint(self):
        return KronOperator(self.left.H, self.right.H)


def kron(op_a, op_b) -> LinearOperator:
    return KronOperator(op_a, op_b)


##############################
### COVARIANCE OPERATORS
##############################

@dataclass(frozen=True)
class SpdOperator:
    """Symmetric positive definite operator (prior or noise covariance)."""
    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    apply_inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    apply_sqrt: Optional[Callable[[np.ndarray], np.ndarray]] = None
    matrix: Optional[np.ndarray] = None

    def inverse(self) -> "SpdOperator":
        if self.apply_inverse is None:
            raise ValueError("operator has no inverse application")
        return SpdOperator(self.dim, self.apply_inverse, self.apply)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.dim, self.dim), matvec=self.apply, rmatvec=self.apply, dtype=np.float64)

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(x @ self.apply(x)))


def dense_spd(matrix: np.ndarray) -> SpdOperator:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.array_equal(matrix, matrix.T):
        raise DegenerateCovarianceError("covariance matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as e:
        raise DegenerateCovarianceError(f"covariance matrix is not positive definite: {e}") from e
    factor = (lower, True)
    return SpdOperator(
        dim=matrix.shape[0],
        apply=lambda x: matrix @ x,
        apply_inverse=lambda x: sla.cho_solve(factor, x),
        apply_sqrt=lambda x: lower @ x,
        matrix=matrix,
    )


def scaled_identity(dim: int, variance: float) -> SpdOperator:
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    std = np.sqrt(variance)
    return SpdOperator(dim, lambda x: variance * x, lambda x: x / variance, lambda x: std * x)


def kron_spd(a: SpdOperator, b: SpdOperator) -> SpdOperator:
    """Q = A ⊗ B applied matrix-free; inverse and square root factor the same way."""
    def lift(fa, fb):
        if fa is None or fb is None:
            return None
        op_a = LinearOperator((a.dim, a.dim), matvec=fa, dtype=np.float64,
                              matmat=lambda X: np.column_stack([fa(c) for c in X.T]))
        op_b = LinearOperator((b.dim, b.dim), matvec=fb, dtype=np.float64,
                              matmat=lambda X: np.column_stack([fb(c) for c in X.T]))
        return KronOperator(op_a, op_b).matvec

    return SpdOperator(
        dim=a.dim * b.dim,
        apply=lift(a.apply, b.apply),
        apply_inverse=lift(a.apply_inverse, b.apply_inverse),
        apply_sqrt=lift(a.apply_sqrt, b.apply_sqrt),
    )


def covariance_kernel(d: float, theta: float) -> float:
    """Compactly supported (spherical) covariance: 1 - 1.5 (d/θ) + 0.5 (d/θ)³ for d ≤ θ, else 0."""
    if d < 0:
        raise ValueError(f"distance must be nonnegative, got {d}")
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if d > theta:
        return 0.0
    ratio = d / theta
    return 1.0 - 1.5 * ratio + 0.5 * ratio ** 3


def _kernel_matrix(distances: np.ndarray, theta: float) -> np.ndarray:
    ratio = distances / theta
    return np.where(distances <= theta, 1.0 - 1.5 * ratio + 0.5 * ratio ** 3, 0.0)


def great_circle_km(coords) -> np.ndarray:
    """Pairwise haversine distances (km) between (lat, lon) pairs given in degrees."""
    latlon = np.radians(np.asarray(coords, dtype=float).reshape(-1, 2))
    lat, lon = latlon[:, 0][:, None], latlon[:, 1][:, None]
    dlat = lat - lat.T
    dlon = lon - lon.T
    h = np.sin(dlat / 2) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def pairwise_distances(coords: Sequence, metric: str) -> np.ndarray:
    if metric == "euclidean":
        points = np.asarray(coords, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        distances = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1))
    elif metric == "spherical-greatcircle":
        distances = great_circle_km(coords)
    elif metric == "time-days":
        days = DateUtils.day_offsets(coords)
        distances = np.abs(days[:, None] - days[None, :])
    else:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")
    # exact symmetry: mirror the upper triangle
    upper = np.triu(distances, 1)
    return upper + upper.T


def build_covariance(coords: Sequence, theta: float, metric: str = "euclidean") -> SpdOperator:
    if len(coords) == 0:
        raise ValueError("coords must be nonempty")
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    distances = pairwise_distances(coords, metric)
    matrix = _kernel_matrix(distances, theta)
    np.fill_diagonal(matrix, 1.0)
    logger.debug(f"Covariance {matrix.shape[0]}x{matrix.shape[0]} ({metric}, theta={theta}), "
                 f"nnz fraction {np.count_nonzero(matrix) / matrix.size:.3f}")
    return dense_spd(matrix)
