"""Dense complex linear algebra used by the demixing updates.

Every function accepts either a single matrix of shape ``(M, M)`` or a stack
of shape ``(..., M, M)``; leading axes are treated as independent problems.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalWarning, SingularMatrixError, SingularPencilError, UsageError

__all__ = [
    "GevdResult",
    "hermitian_gevd",
    "hermitian_eig",
    "inverse",
    "log_abs_det",
    "normalize_phase",
    "batched_gevd",
]

HERMITIAN_RTOL = 1e-12
PD_RTOL = 1e-12
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class GevdResult:
    """Eigenpairs sorted by descending eigenvalue.

    ``eigenvectors[..., :, k]`` belongs to ``eigenvalues[..., k]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _check_square(a, name="a"):
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[-1] < 1:
        raise UsageError(f"{name} must be a (stack of) square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite entries")
    return a


def _check_hermitian(a, name="a"):
    a = _check_square(a, name)
    scale = np.max(np.abs(a), axis=(-2, -1), keepdims=True)
    dev = np.max(np.abs(a - np.swapaxes(a.conj(), -1, -2)), axis=(-2, -1), keepdims=True)
    if np.any(dev > HERMITIAN_RTOL * np.maximum(scale, np.finfo(float).tiny)):
        raise UsageError(f"{name} is not Hermitian")
    return a.astype(np.complex128)


def normalize_phase(vectors):
    """Rotate each column so its largest-magnitude entry is real and positive.

    Ties in magnitude resolve to the first (lowest-index) entry, so the
    operation is idempotent.
    """
    vectors = np.asarray(vectors, dtype=np.complex128)
    idx = np.argmax(np.abs(vectors), axis=-2)[..., np.newaxis, :]
    pivot = np.take_along_axis(vectors, idx, axis=-2)
    mag = np.abs(pivot)
    done = (pivot.imag == 0) & (pivot.real >= 0)
    factor = np.where(done, 1.0, pivot.conj() / np.where(mag > 0, mag, 1.0))
    out = vectors * factor
    # rounding in the product leaves a tiny imaginary part on the pivot
    np.put_along_axis(out, idx, mag.astype(np.complex128), axis=-2)
    return out


def _sort_descending(values, vectors):
    # stable sort on -values keeps the original column order for ties
    order = np.argsort(-values, axis=-1, kind="stable")
    values = np.take_along_axis(values, order, axis=-1)
    vectors = np.take_along_axis(vectors, order[..., np.newaxis, :], axis=-1)
    return values, vectors


def pencil_is_definite(b):
    """Mask of matrices in ``b`` whose smallest eigenvalue exceeds ``1e-12 * trace / dim``."""
    eig = np.linalg.eigvalsh(b)
    dim = b.shape[-1]
    trace = np.real(np.trace(b, axis1=-2, axis2=-1))
    return (eig[..., 0] > PD_RTOL * trace / dim) & (trace > 0)


def _whitened_eigh(a, b):
    b = 0.5 * (b + np.swapaxes(b.conj(), -1, -2))
    chol = np.linalg.cholesky(b)
    tmp = np.linalg.solve(chol, a)
    whitened = np.linalg.solve(chol, np.swapaxes(tmp.conj(), -1, -2))
    whitened = 0.5 * (whitened + np.swapaxes(whitened.conj(), -1, -2))
    w, u = np.linalg.eigh(whitened)
    return w, np.linalg.solve(np.swapaxes(chol.conj(), -1, -2), u)


def batched_gevd(a, b, refine=1):
    """Solve ``a v = k b v`` for a stack of Hermitian pencils without raising.

    After the Cholesky-whitened solve, ``refine`` Rayleigh-Ritz passes re-solve
    the projected pencil ``(H^H a H, H^H b H)``, which is nearly diagonal and
    well conditioned, and rotate ``H`` accordingly. This recovers accuracy
    lost to an ill-conditioned ``b``.

    Returns ``(eigenvalues, eigenvectors, ok)`` where ``ok`` marks the pencils
    whose right-hand side was positive definite. Entries of failed pencils are
    NaN and must not be used.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    batch = a.shape[:-2]
    dim = a.shape[-1]
    values = np.full(batch + (dim,), np.nan)
    vectors = np.full(batch + (dim, dim), np.nan, dtype=np.complex128)

    ok = pencil_is_definite(b)
    if not np.any(ok):
        return values, vectors, ok

    a_ok, b_ok = a[ok], b[ok]
    w, h = _whitened_eigh(a_ok, b_ok)
    for _ in range(refine):
        hh = np.swapaxes(h.conj(), -1, -2)
        w, q = _whitened_eigh(hh @ a_ok @ h, hh @ b_ok @ h)
        h = h @ q
    w, h = _sort_descending(w, h)
    values[ok] = w
    vectors[ok] = normalize_phase(h)
    return values, vectors, ok


def hermitian_gevd(a, b, frequency=None):
    """Generalized eigendecomposition of the Hermitian pencil ``(a, b)``.

    Solves ``a v = kappa b v`` by Cholesky whitening of ``b`` followed by a
    Hermitian eigendecomposition. Eigenvectors are ``b``-orthonormal before
    phase normalization (which keeps that property).

    Args:
        a: Hermitian matrix or stack, shape ``(..., M, M)``.
        b: Hermitian positive-definite matrix or stack of the same shape.
        frequency: optional frequency-bin label reported in errors.

    Raises:
        UsageError: shapes differ or inputs are not Hermitian.
        SingularPencilError: ``b`` is not numerically positive definite.
    """
    a = _check_hermitian(a, "a")
    b = _check_hermitian(b, "b")
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    values, vectors, ok = batched_gevd(a, b)
    if not np.all(ok):
        where = frequency
        if where is None and a.ndim > 2:
            where = int(np.flatnonzero(~ok.ravel())[0])
        raise SingularPencilError("right-hand matrix is not positive definite", frequency=where)
    return GevdResult(values, vectors)


def hermitian_eig(a):
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending."""
    a = _check_hermitian(a, "a")
    w, u = np.linalg.eigh(0.5 * (a + np.swapaxes(a.conj(), -1, -2)))
    w, u = _sort_descending(w, u)
    return GevdResult(w, normalize_phase(u))


def inverse(a):
    """Matrix inverse; raises :class:`SingularMatrixError` when cond(a) >= 1e12."""
    a = _check_square(a, "a")
    cond = np.linalg.cond(a)
    if np.any(~np.isfinite(cond) | (cond >= MAX_CONDITION)):
        raise SingularMatrixError(f"matrix is numerically singular (condition {np.max(cond):.3g})")
    return np.linalg.inv(a)


def log_abs_det(a):
    """``log|det a|`` via LU factorization.

    A singular matrix yields ``-inf`` together with a :class:`NumericalWarning`
    instead of NaN.
    """
    a = _check_square(a, "a")
    sign, logdet = np.linalg.slogdet(a)
    singular = sign == 0
    if np.any(singular):
        warnings.warn("log_abs_det of a singular matrix", NumericalWarning, stacklevel=2)
        logdet = np.where(singular, -np.inf, logdet)
    if np.ndim(logdet) == 0:
        return float(logdet)
    return logdet
