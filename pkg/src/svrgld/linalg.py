"""Dense symmetric linear algebra and finite-difference stencils.

Everything here is pure: inputs are never mutated and returned arrays are
marked read-only, so values can be shared freely across replica workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, NotPSDError

# Relative eigenvalue threshold separating round-off negatives (clamped)
# from genuinely indefinite input (raised as NotPSDError).
NEG_EIG_REL_TOL = 1e-8

_EPS = np.finfo(np.float64).eps


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SymMatrix:
    """Dense symmetric d x d matrix; symmetrization is enforced on construction."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise InvalidInputError(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("matrix entries must be finite")
        object.__setattr__(self, "entries", _readonly(0.5 * (m + m.T)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.entries, "fro"))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "eigenvalues", _readonly(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _readonly(self.eigenvectors))

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def eig_sym(m: SymMatrix) -> SpectralDecomposition:
    """Symmetric eigendecomposition with ascending eigenvalues."""
    w, v = np.linalg.eigh(m.entries)
    return SpectralDecomposition(eigenvalues=w, eigenvectors=v)


def psd_sqrt(m: SymMatrix, ridge: float = 0.0) -> SymMatrix:
    """Symmetric PSD square root of ``m + ridge*I``.

    Round-off negatives of ``m`` (above ``-NEG_EIG_REL_TOL * ||m||_F``) are
    clamped to zero before the ridge is added; anything below that threshold
    raises :class:`NotPSDError` since the covariance matrices fed in here are
    PSD by construction.
    """
    if ridge < 0.0:
        raise InvalidInputError(f"ridge must be nonnegative, got {ridge}")
    dec = eig_sym(m)
    w = dec.eigenvalues
    floor = -NEG_EIG_REL_TOL * m.frobenius()
    if w[0] < floor:
        raise NotPSDError(
            f"eigenvalue {w[0]:.3e} below round-off floor {floor:.3e}"
        )
    w = np.sqrt(np.maximum(w, 0.0) + ridge)
    v = dec.eigenvectors
    return SymMatrix((v * w) @ v.T)


def psd_sqrt_batch(mats: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Square roots of a stack of PSD matrices, shape (..., d, d).

    Fast path for the integrators: d=1 is a scalar sqrt, d=2 uses the
    closed form (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M)), larger d
    falls back to a batched eigendecomposition.  Round-off negatives are
    clamped; inputs are trusted to be PSD up to round-off (the scalar
    :func:`psd_sqrt` is the checked surface).
    """
    mats = np.asarray(mats, dtype=np.float64)
    d = mats.shape[-1]
    if d == 1:
        return np.sqrt(np.maximum(mats, 0.0) + ridge)
    if ridge != 0.0:
        mats = mats + ridge * np.eye(d)
    if d == 2:
        a = mats[..., 0, 0]
        b = 0.5 * (mats[..., 0, 1] + mats[..., 1, 0])
        c = mats[..., 1, 1]
        det = np.maximum(a * c - b * b, 0.0)
        tr = np.maximum(a + c, 0.0)
        s = np.sqrt(det)
        t = np.sqrt(tr + 2.0 * s)
        out = mats.copy()
        out[..., 0, 0] = a + s
        out[..., 0, 1] = b
        out[..., 1, 0] = b
        out[..., 1, 1] = c + s
        safe = np.where(t > 0.0, t, 1.0)
        out /= safe[..., None, None]
        return np.where((t > 0.0)[..., None, None], out, 0.0)
    w, v = np.linalg.eigh(mats)
    w = np.sqrt(np.maximum(w, 0.0))
    return np.einsum("...ik,...k,...jk->...ij", v, w, v)


def _fd_step(order: int, x: np.ndarray) -> float:
    exponent = {1: 1.0 / 3.0, 2: 0.25, 3: 0.2}[order]
    return _EPS**exponent * (1.0 + float(np.linalg.norm(x)))


def directional_derivative(
    f: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    dirs: Sequence[np.ndarray],
    order: int,
) -> np.ndarray:
    """Central finite-difference directional derivative of a vector- or
    matrix-valued map.

    ``dirs`` holds ``order`` unit vectors applied innermost-first, i.e.
    ``dirs == (v1, v2)`` estimates the derivative along v1 first, then v2.
    The stencil is nested central differences with one step size per order
    (machine-epsilon exponents 1/3, 1/4, 1/5 balancing truncation against
    round-off).
    """
    if order not in (1, 2, 3):
        raise InvalidInputError(f"order must be 1, 2 or 3, got {order}")
    if len(dirs) != order:
        raise InvalidInputError(f"expected {order} directions, got {len(dirs)}")
    dirs = [np.asarray(v, dtype=np.float64) for v in dirs]
    for v in dirs:
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise InvalidInputError("directions must be unit vectors")
    x = np.asarray(x, dtype=np.float64)
    h = _fd_step(order, x)

    def central(g: Callable[[np.ndarray], np.ndarray], v: np.ndarray):
        def dg(y: np.ndarray) -> np.ndarray:
            return (np.asarray(g(y + h * v)) - np.asarray(g(y - h * v))) / (2.0 * h)

        return dg

    est = f
    for v in dirs:
        est = central(est, v)
    return np.asarray(est(x), dtype=np.float64)
