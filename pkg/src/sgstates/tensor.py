"""Dense complex tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype complex128 in C order.
Contraction goes permute -> matricize -> matmul so every result can be
checked against an explicit index sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

HERM_TOL = 1e-10


class DimensionError(ValueError):
    """Incompatible tensor extents or an invalid mode partition."""


class ValidationError(ValueError):
    """Input violates a numerical precondition (hermiticity, unitarity, ...)."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.complex128))


def contract(a, modes_a: Sequence[int], b, modes_b: Sequence[int]) -> np.ndarray:
    """Sum over paired modes of ``a`` and ``b``.

    The result carries the free modes of ``a`` followed by the free modes of
    ``b``, each in their original order.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    modes_a = [m % a.ndim for m in modes_a] if a.ndim else []
    modes_b = [m % b.ndim for m in modes_b] if b.ndim else []
    if len(modes_a) != len(modes_b):
        raise DimensionError("paired mode lists differ in length")
    for ma, mb in zip(modes_a, modes_b):
        if a.shape[ma] != b.shape[mb]:
            raise DimensionError(
                f"mode {ma} of a has extent {a.shape[ma]}, mode {mb} of b has {b.shape[mb]}"
            )
    free_a = [m for m in range(a.ndim) if m not in modes_a]
    free_b = [m for m in range(b.ndim) if m not in modes_b]
    k = int(np.prod([a.shape[m] for m in modes_a], dtype=np.int64))
    am = np.transpose(a, free_a + modes_a).reshape(-1, k)
    bm = np.transpose(b, modes_b + free_b).reshape(k, -1)
    shape = tuple(a.shape[m] for m in free_a) + tuple(b.shape[m] for m in free_b)
    return np.ascontiguousarray((am @ bm).reshape(shape))


def matricize(t, row_modes: Sequence[int], col_modes: Sequence[int]) -> np.ndarray:
    t = as_tensor(t)
    if not row_modes or not col_modes:
        raise DimensionError("both sides of the mode partition must be non-empty")
    if sorted(list(row_modes) + list(col_modes)) != list(range(t.ndim)):
        raise DimensionError("row_modes and col_modes must partition the tensor modes")
    nr = int(np.prod([t.shape[m] for m in row_modes], dtype=np.int64))
    return np.transpose(t, list(row_modes) + list(col_modes)).reshape(nr, -1)


@dataclass(frozen=True)
class SvdResult:
    left_isometry: np.ndarray
    singular_values: np.ndarray
    right_isometry: np.ndarray
    truncation_error: float

    def reconstruct(self) -> np.ndarray:
        return (self.left_isometry * self.singular_values) @ self.right_isometry.conj().T


def svd(t, row_modes: Sequence[int], col_modes: Sequence[int], max_keep: int | None = None) -> SvdResult:
    """Thin SVD of the matricized tensor.

    ``right_isometry`` has orthonormal columns, so the input equals
    ``U @ diag(S) @ V^dagger``. ``truncation_error`` is the Frobenius norm of
    the discarded part.
    """
    m = matricize(t, row_modes, col_modes)
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        u, s, vh = _svd_fallback(m)
    err = 0.0
    if max_keep is not None and max_keep < len(s):
        err = float(np.sqrt(np.sum(s[max_keep:] ** 2)))
        u, s, vh = u[:, :max_keep], s[:max_keep], vh[:max_keep]
    return SvdResult(np.ascontiguousarray(u), s, np.ascontiguousarray(vh.conj().T), err)


def _svd_fallback(m):
    import scipy.linalg

    return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def hermitize(h, tol: float = HERM_TOL) -> np.ndarray:
    h = as_tensor(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {h.shape}")
    defect = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if defect > tol:
        raise ValidationError(f"matrix is not Hermitian (defect {defect:.3e} > {tol:.1e})")
    return 0.5 * (h + h.conj().T)


def herm_eig_extreme(h, which: str = "smallest") -> tuple[float, np.ndarray]:
    """Extremal eigenpair of a Hermitian matrix."""
    h = hermitize(h)
    if which not in ("smallest", "largest"):
        raise ValueError("which must be 'smallest' or 'largest'")
    n = h.shape[0]
    if n > 4096:
        import scipy.sparse.linalg as spla

        w, v = spla.eigsh(h, k=1, which="SA" if which == "smallest" else "LA", tol=1e-14)
        return float(w[0]), v[:, 0] / np.linalg.norm(v[:, 0])
    w, v = np.linalg.eigh(h)
    i = 0 if which == "smallest" else n - 1
    return float(w[i]), np.ascontiguousarray(v[:, i])


def unitary_exp(k, delta: float) -> np.ndarray:
    """exp(i * delta * K) for Hermitian K, via its eigendecomposition."""
    k = hermitize(k)
    w, v = np.linalg.eigh(k)
    return np.ascontiguousarray((v * np.exp(1j * delta * w)) @ v.conj().T)


def unitarity_defect(u) -> float:
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[1])))) if u.size else 0.0


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary (QR of a complex Gaussian with phase fix)."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    m = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    return 0.5 * (m + m.conj().T)
