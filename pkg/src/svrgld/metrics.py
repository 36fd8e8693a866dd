"""Empirical distribution comparison and moment statistics.

The 1-D Wasserstein-1 distance between equal-size uniform sample clouds is
the mean absolute difference of the sorted samples (exact optimal
transport).  In higher dimension the sliced estimator averages the exact
1-D cost over random unit-direction projections, giving a consistent lower
bound family with a quantified Monte-Carlo error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .paths import PathEnsemble


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted sample cloud in R^d, samples shape (N, d)."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise InvalidInputError("samples must be a nonempty (N, d) array")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def from_ensemble(cls, ensemble: PathEnsemble, s: int) -> "EmpiricalMeasure":
        return cls(ensemble.epoch_states(s))


def _equalize(a: np.ndarray, b: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    # Unequal counts are resolved by seeded resampling (with replacement)
    # of the larger cloud down to the smaller count, never by interpolation.
    if a.shape[0] == b.shape[0]:
        return a, b
    rng = np.random.default_rng(seed)
    n = min(a.shape[0], b.shape[0])
    if a.shape[0] > n:
        a = a[rng.integers(0, a.shape[0], size=n)]
    else:
        b = b[rng.integers(0, b.shape[0], size=n)]
    return a, b


def w1_exact_1d(a: EmpiricalMeasure, b: EmpiricalMeasure, seed: int = 0) -> float:
    """Exact 1-D transport cost between uniform clouds: mean |sorted - sorted|."""
    if a.dim != 1 or b.dim != 1:
        raise InvalidInputError("w1_exact_1d requires 1-D samples")
    xs, ys = _equalize(a.samples[:, 0], b.samples[:, 0], seed)
    return float(np.mean(np.abs(np.sort(xs) - np.sort(ys))))


def sliced_w1(
    a: EmpiricalMeasure, b: EmpiricalMeasure, projections: int = 128, seed: int = 0
) -> tuple[float, float]:
    """Mean and standard error of the exact 1-D cost over random projections."""
    if a.dim != b.dim:
        raise InvalidInputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if projections < 1:
        raise InvalidInputError("need at least one projection")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((projections, a.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    xs, ys = _equalize(a.samples, b.samples, seed)
    pa = np.sort(xs @ dirs.T, axis=0)
    pb = np.sort(ys @ dirs.T, axis=0)
    costs = np.mean(np.abs(pa - pb), axis=0)
    mean = float(np.mean(costs))
    stderr = float(np.std(costs, ddof=1) / np.sqrt(projections)) if projections > 1 else 0.0
    return mean, stderr


def moment(a: EmpiricalMeasure, p: int) -> float:
    """Empirical E |x|^p for p in {1, 2, 4, 8}, compensated summation."""
    if p not in (1, 2, 4, 8):
        raise InvalidInputError(f"unsupported moment order {p}")
    norms = np.linalg.norm(a.samples, axis=1)
    return math.fsum((norms**p).tolist()) / a.count


def coupled_distance(
    paths_a: PathEnsemble, paths_b: PathEnsemble, s: int, p: int = 1
) -> float:
    """Mean coupled deviation E |A_s - B_s|^p (p-th root for p = 2).

    Requires both ensembles to have been driven by the same Gaussian streams
    (equal coupling tokens); this upper-bounds the W1 distance between the
    epoch-s laws.
    """
    if p not in (1, 2):
        raise InvalidInputError("p must be 1 or 2")
    if paths_a.coupling != paths_b.coupling:
        raise InvalidInputError(
            "ensembles are not coupled: "
            f"{paths_a.coupling!r} vs {paths_b.coupling!r}"
        )
    if paths_a.replicas != paths_b.replicas:
        raise InvalidInputError("coupled ensembles must share the replica count")
    diff = np.linalg.norm(paths_a.epoch_states(s) - paths_b.epoch_states(s), axis=1)
    if p == 1:
        return float(np.mean(diff))
    return float(np.sqrt(np.mean(diff**2)))
