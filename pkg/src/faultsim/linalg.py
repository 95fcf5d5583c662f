"""Dense float64 matrix kernels used by every other module.

Matrices are plain 2-D C-order float64 numpy arrays. Only the kernels the
simulator actually needs live here: checked products, seeded Gaussian fills,
and the top-r right singular subspace of a matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, SvdConvergenceError

__all__ = [
    "SvdConfig",
    "check_matrix",
    "matmul",
    "seeded_gaussian",
    "top_r_right_singular_vectors",
]


def check_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Coerce to 2-D float64 and reject non-finite entries."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Checked matrix product in double precision."""
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"inner dimensions differ: {a.shape} x {b.shape}"
        )
    return a @ b


def seeded_gaussian(
    rows: int,
    cols: int,
    mean: float = 0.0,
    stddev: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    """Reproducible N(mean, stddev^2) fill from a PCG64 stream.

    Same arguments always produce the bit-identical array.
    """
    if rows < 1 or cols < 1:
        raise ContractViolation(f"rows/cols must be >= 1, got {rows}x{cols}")
    if stddev < 0:
        raise ContractViolation(f"stddev must be >= 0, got {stddev}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.normal(mean, stddev, size=(rows, cols))


@dataclass(frozen=True)
class SvdConfig:
    """Settings for the truncated right-singular-subspace iteration."""

    rank: int
    tolerance: float = 1e-12
    max_iterations: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ContractViolation(f"rank must be >= 1, got {self.rank}")
        if self.tolerance <= 0:
            raise ContractViolation("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ContractViolation("max_iterations must be >= 1")

    def validate_for(self, shape: tuple[int, int]) -> None:
        # The basis lives in the column space R^cols; ranks beyond the matrix
        # rank are served by a deterministic orthonormal completion.
        if self.rank > shape[1]:
            raise ContractViolation(
                f"rank {self.rank} exceeds the column count of {shape}"
            )


# Extra basis vectors carried by the iteration. Ritz pairs inside the block
# converge at the lambda_r / lambda_(r+oversample+1) rate, which keeps the
# stopping rule usable even when sigma_r and sigma_(r+1) nearly tie.
_OVERSAMPLE = 4


def top_r_right_singular_vectors(w: np.ndarray, cfg: SvdConfig) -> np.ndarray:
    """Orthonormal basis (cols x r) of the top-r right singular subspace of w.

    Block power iteration on w^T w with QR re-orthonormalization and a Ritz
    rotation; stops when every kept Ritz pair's residual is below tolerance
    relative to the spectral scale. Ties and rank deficiency return a
    deterministic orthonormal completion (seeded by cfg.seed); the zero matrix
    returns the first r standard basis vectors.
    """
    w = check_matrix(w, "w")
    cfg.validate_for(w.shape)
    n = w.shape[1]
    r = cfg.rank

    b = w.T @ w
    scale = float(np.linalg.norm(b, "fro"))
    if scale == 0.0:
        return np.eye(n)[:, :r].copy()

    k = min(n, r + _OVERSAMPLE)
    v, _ = np.linalg.qr(seeded_gaussian(n, k, 0.0, 1.0, cfg.seed))

    last_residual = np.inf
    for _ in range(cfg.max_iterations):
        z = b @ v
        v, _ = np.linalg.qr(z)
        # Ritz extraction: rotate the block onto approximate eigenvectors of b.
        small = v.T @ b @ v
        small = 0.5 * (small + small.T)
        theta, s = np.linalg.eigh(small)
        order = np.argsort(theta)[::-1]
        theta = theta[order]
        v = v @ s[:, order]
        top = v[:, :r]
        resid = b @ top - top * theta[:r]
        last_residual = float(
            np.max(np.linalg.norm(resid, axis=0)) / max(theta[0], np.finfo(float).tiny)
        )
        if last_residual <= cfg.tolerance:
            return np.ascontiguousarray(top)

    raise SvdConvergenceError(
        f"subspace iteration did not converge within {cfg.max_iterations} "
        f"iterations (last residual {last_residual:.3e})",
        residual=last_residual,
    )
