"""Dense float64 linear algebra and seeded randomness used by every module.

Matrices are plain ``np.ndarray`` in row-major float64; all factorizations
come with explicit residual contracts that the test suite enforces.
Randomness goes through :class:`RngStream`, a counter-based (Philox) stream:
identical seeds reproduce identical draws bit-for-bit on every platform, and
independent streams never perturb each other regardless of call interleaving.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput

Matrix = np.ndarray


def as_matrix(a, name: str = "matrix") -> Matrix:
    """Validate and convert to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInput(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput(f"{name} contains non-finite values")
    return m


def svd(a: Matrix) -> tuple[Matrix, np.ndarray, Matrix]:
    """Thin SVD: A = U @ diag(S) @ Vt with S non-negative and descending.

    Reconstruction error is bounded by 1e-9 * max|A| for well-scaled inputs.
    """
    m = as_matrix(a)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return u, s, vt


def sym_eig(s: Matrix, tol: float = 1e-10) -> tuple[np.ndarray, Matrix]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Asymmetry beyond ``tol`` (scaled by max(1, max|S|)) is rejected; within
    tolerance the input is symmetrized before factorization so the returned
    eigenvectors are exactly orthonormal.
    """
    m = as_matrix(s, "symmetric matrix")
    if m.shape[0] != m.shape[1]:
        raise InvalidInput(f"expected square matrix, got {m.shape}")
    scale = max(1.0, float(np.abs(m).max())) if m.size else 1.0
    if m.size and float(np.abs(m - m.T).max()) > tol * scale:
        raise InvalidInput("matrix is asymmetric beyond tolerance")
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return w[::-1].copy(), v[:, ::-1].copy()


def center_columns(x: Matrix) -> Matrix:
    """Subtract the per-column mean; output columns have zero mean."""
    m = as_matrix(x)
    if m.shape[0] < 1:
        raise InvalidInput("need at least one row to center")
    return m - m.mean(axis=0)


class RngStream:
    """Single-owner deterministic random stream backed by Philox.

    ``fork()`` derives an independent child stream; the fork sequence is part
    of the stream's deterministic state, so a fixed (seed, fork order, draw
    order) always reproduces the same numbers.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed) if _seq is None else _seq
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def fork(self) -> "RngStream":
        """Derive an independent substream (deterministic per fork order)."""
        return RngStream(self.seed, _seq=self._seq.spawn(1)[0])

    def gaussian(self, rows: int, cols: int) -> Matrix:
        return self._gen.standard_normal((rows, cols))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def rng_new(seed: int) -> RngStream:
    return RngStream(seed)


def rng_gaussian(stream: RngStream, rows: int, cols: int) -> Matrix:
    return stream.gaussian(rows, cols)
