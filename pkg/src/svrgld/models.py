"""Finite-sum objective models with gradient-noise covariance machinery.

Two concrete model families are provided: a randomized quadratic whose
component Hessians share an eigenbasis, and ridge-penalized logistic
regression on synthetic Gaussian features.  Both expose exact component
gradients, the averaged full gradient, the conditional covariance
``sigma(x, y)`` of the variance-reduced gradient estimator, and the
diffusion factor ``q_factor = (sigma + (delta/eta) I)^{1/2}``.

Models are immutable after generation and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from io import BufferedReader
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, NoConvergenceError
from .linalg import SymMatrix, psd_sqrt, psd_sqrt_batch


def sigmoid(t: np.ndarray) -> np.ndarray:
    """Numerically stable logistic sigmoid."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class ObjectiveModel:
    """Interface shared by all finite-sum objectives.

    Subclasses must set ``n`` and ``d`` and implement the two gradient
    primitives; everything else has generic (enumeration-based) defaults.
    """

    n: int
    d: int

    # -- gradient primitives -------------------------------------------------

    def component_gradients(self, x: np.ndarray) -> np.ndarray:
        """All n component gradients at a single point, shape (n, d)."""
        raise NotImplementedError

    def component_gradient_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Gradient of component ``idx[...]`` at the matching row of ``x``.

        ``idx`` has any leading shape, ``x`` the same leading shape plus a
        trailing d axis; used by the replica-vectorized runners.
        """
        raise NotImplementedError

    def component_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.component_gradient_at(np.asarray(i), np.asarray(x, dtype=np.float64))

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        """Average of the component gradients (pairwise summation, ascending i)."""
        return np.mean(self.component_gradients(x), axis=0)

    def full_gradient_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.full_gradient(x) for x in np.asarray(xs, dtype=np.float64)])

    # -- second-order information --------------------------------------------

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.hessian(x) for x in np.asarray(xs, dtype=np.float64)])

    # -- gradient-noise covariance --------------------------------------------

    def sigma_matrix(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Exact enumeration of the estimator covariance, as a raw array."""
        g = self.component_gradients(x) - self.component_gradients(y)
        centered = g - np.mean(g, axis=0)
        return np.einsum("ni,nj->ij", centered, centered) / self.n

    def sigma_batch(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Stack of sigma matrices for paired rows of xs, ys; shape (R, d, d)."""
        return np.stack([self.sigma_matrix(x, y) for x, y in zip(xs, ys)])

    # -- analytic metadata (None when unknown) ---------------------------------

    @property
    def smoothness_hint(self) -> float | None:
        return None

    @property
    def dissipativity_hint(self) -> tuple[float, float] | None:
        return None

    @property
    def minimizer_hint(self) -> np.ndarray | None:
        return None


class QuadraticAlternateModel(ObjectiveModel):
    """Random quadratic: component i has Hessian Qt (D + diag(a_i)) Qt^T.

    ``qmat`` is orthogonal, ``dvec`` holds the positive target eigenvalues,
    and the rows of ``samples`` are the standard-normal perturbations a_i.
    The full gradient of the generated instance is exactly linear,
    Hhat x with Hhat = Qt (D + diag(mean a)) Qt^T.
    """

    def __init__(self, qmat: np.ndarray, dvec: np.ndarray, samples: np.ndarray, seed: int):
        qmat = np.asarray(qmat, dtype=np.float64)
        dvec = np.asarray(dvec, dtype=np.float64)
        samples = np.asarray(samples, dtype=np.float64)
        d = dvec.shape[0]
        if qmat.shape != (d, d):
            raise InvalidInputError("qmat and dvec dimensions disagree")
        if np.max(np.abs(qmat.T @ qmat - np.eye(d))) > 1e-12:
            raise InvalidInputError("qmat must be orthogonal")
        if np.any(dvec <= 0):
            raise InvalidInputError("eigenvalues must be positive")
        if samples.ndim != 2 or samples.shape[1] != d:
            raise InvalidInputError("samples must be (n, d)")
        self.qmat = qmat
        self.dvec = dvec
        self.samples = samples
        self.seed = int(seed)
        self.n = samples.shape[0]
        self.d = d
        self._abar = np.mean(samples, axis=0)
        centered = samples - self._abar
        self._acov = np.einsum("ni,nj->ij", centered, centered) / self.n
        self._hhat = qmat @ np.diag(dvec + self._abar) @ qmat.T
        for a in (self.qmat, self.dvec, self.samples, self._abar, self._acov, self._hhat):
            a.flags.writeable = False

    # Gradient kernels use einsum so each output row is computed by the same
    # fixed-order loop regardless of the batch shape: replica rows are then
    # bitwise independent of how many replicas run together.

    # component gradient: Qt [D + diag(a_i)] Qt^T x
    def component_gradients(self, x: np.ndarray) -> np.ndarray:
        u = np.einsum("ij,j->i", self.qmat.T, np.asarray(x, dtype=np.float64))
        return np.einsum("ni,ji->nj", self.dvec * u + self.samples * u, self.qmat)

    def component_gradient_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        u = np.einsum("...i,ij->...j", np.asarray(x, dtype=np.float64), self.qmat)
        return np.einsum("...i,ji->...j", (self.dvec + self.samples[idx]) * u, self.qmat)

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ji,i->j", self._hhat, np.asarray(x, dtype=np.float64))

    def full_gradient_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.einsum("ri,ji->rj", np.asarray(xs, dtype=np.float64), self._hhat)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return self._hhat

    def hessian_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self._hhat, (np.asarray(xs).shape[0], self.d, self.d))

    def sigma_batch(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        # Exact refactoring of the enumeration: in the Qt basis the
        # covariance is (u u^T) hadamard Cov(a), u = Qt^T (x - y).
        u = (np.asarray(xs, dtype=np.float64) - np.asarray(ys, dtype=np.float64)) @ self.qmat
        inner = np.einsum("ri,rj,ij->rij", u, u, self._acov)
        return np.einsum("ai,rij,bj->rab", self.qmat, inner, self.qmat)

    def sigma_closed_form(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Large-n limit Qt diag(u)^2 Qt^T with u = Qt^T (x - y)."""
        u = self.qmat.T @ (np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64))
        return (self.qmat * u**2) @ self.qmat.T

    def q_closed_form(self, x: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
        """Large-n limit Qt [diag(u)^2 + ridge I]^{1/2} Qt^T."""
        u = self.qmat.T @ (np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64))
        return (self.qmat * np.sqrt(u**2 + ridge)) @ self.qmat.T

    @property
    def smoothness_hint(self) -> float:
        # each component Hessian is diagonal in the Qt basis
        return float(np.max(np.abs(self.dvec + self.samples)))

    @property
    def dissipativity_hint(self) -> tuple[float, float]:
        return float(np.min(self.dvec + self._abar)), 0.0

    @property
    def minimizer_hint(self) -> np.ndarray:
        return np.zeros(self.d)


class LogisticModel(ObjectiveModel):
    """Ridge-penalized logistic regression on synthetic rows a_i, labels b_i."""

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        lam: float,
        true_param: np.ndarray,
        seed: int,
    ):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if lam <= 0:
            raise InvalidInputError("ridge strength lambda must be positive")
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise InvalidInputError("features must be (n, d) with matching labels")
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise InvalidInputError("labels must be 0/1")
        self.features = features
        self.labels = labels
        self.lam = float(lam)
        self.true_param = np.asarray(true_param, dtype=np.float64)
        self.seed = int(seed)
        self.n, self.d = features.shape
        for a in (self.features, self.labels, self.true_param):
            a.flags.writeable = False

    def component_gradients(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s = sigmoid(np.einsum("ni,i->n", self.features, x))
        return self.features * (s - self.labels)[:, None] + self.lam * x

    def component_gradient_at(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        rows = self.features[idx]
        s = sigmoid(np.sum(rows * x, axis=-1))
        return rows * (s - self.labels[idx])[..., None] + self.lam * x

    def full_gradient_batch(self, xs: np.ndarray) -> np.ndarray:
        # pairwise mean over components, built exactly like the scalar path
        # so batch rows reproduce full_gradient(x) bitwise
        xs = np.asarray(xs, dtype=np.float64)
        s = sigmoid(np.einsum("ri,ni->rn", xs, self.features))
        rows = (s - self.labels)[:, :, None] * self.features[None, :, :] + self.lam * xs[:, None, :]
        return np.mean(rows, axis=1)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        s = sigmoid(self.features @ np.asarray(x, dtype=np.float64))
        w = s * (1.0 - s)
        mat = np.einsum("n,ni,nj->ij", w, self.features, self.features) / self.n
        return mat + self.lam * np.eye(self.d)

    def hessian_batch(self, xs: np.ndarray) -> np.ndarray:
        s = sigmoid(np.asarray(xs, dtype=np.float64) @ self.features.T)
        w = s * (1.0 - s)
        mats = np.einsum("rn,ni,nj->rij", w, self.features, self.features) / self.n
        return mats + self.lam * np.eye(self.d)

    def sigma_batch(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        # The ridge term is common to every component, so it drops out of the
        # covariance; only a_i (sigma(a_i.x) - sigma(a_i.y)) remains.
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        c = sigmoid(xs @ self.features.T) - sigmoid(ys @ self.features.T)
        second = np.einsum("rn,ni,nj->rij", c * c, self.features, self.features) / self.n
        mean = np.einsum("rn,ni->ri", c, self.features) / self.n
        return second - np.einsum("ri,rj->rij", mean, mean)

    def loss(self, x: np.ndarray) -> float:
        t = self.features @ np.asarray(x, dtype=np.float64)
        # log(1 + e^t) evaluated stably
        soft = np.where(t > 0, t + np.log1p(np.exp(-np.abs(t))), np.log1p(np.exp(-np.abs(t))))
        return float(np.mean(soft - self.labels * t) + 0.5 * self.lam * np.dot(x, x))

    @property
    def smoothness_hint(self) -> float:
        return float(np.max(np.sum(self.features**2, axis=1)) / 4.0 + self.lam)

    @property
    def dissipativity_hint(self) -> tuple[float, float]:
        g0 = np.linalg.norm(self.full_gradient(np.zeros(self.d)))
        return 0.5 * self.lam, float(g0**2 / (2.0 * self.lam))


@dataclass(frozen=True)
class DiffusionSpec:
    """Step size eta, noise scale delta, and the model they apply to.

    The standing regime is 0 < eta <= delta <= 1.  delta = 0 is additionally
    accepted as the noiseless (plain variance-reduced descent) limit, in
    which case the eta <= delta constraint is waived.
    """

    eta: float
    delta: float
    model: ObjectiveModel

    def __post_init__(self) -> None:
        if not (self.eta > 0):
            raise InvalidConfigError(f"eta must be positive, got {self.eta}")
        if not (0.0 <= self.delta <= 1.0):
            raise InvalidConfigError(f"delta must lie in [0, 1], got {self.delta}")
        if self.delta > 0 and self.eta > self.delta:
            raise InvalidConfigError(
                f"standing regime requires eta <= delta (got eta={self.eta}, delta={self.delta})"
            )

    @property
    def ridge(self) -> float:
        return self.delta / self.eta


def generate_quadratic_model(
    d: int, n: int, eigenvalues, seed: int
) -> QuadraticAlternateModel:
    """Sample a quadratic instance: Haar-orthogonal basis, N(0, I) rows."""
    if d < 1 or n < 1:
        raise InvalidInputError("d and n must be at least 1")
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    if eigenvalues.shape != (d,):
        raise InvalidInputError(f"expected {d} eigenvalues")
    if np.any(eigenvalues <= 0):
        raise InvalidInputError("eigenvalues must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # sign-fixed R diagonal -> Haar measure
    samples = rng.standard_normal((n, d))
    return QuadraticAlternateModel(q, eigenvalues, samples, seed)


def generate_logistic_model(
    d: int, n: int, true_param, lam: float, seed: int
) -> LogisticModel:
    """Sample features N(0, I) and Bernoulli labels from the logistic link."""
    if lam <= 0:
        raise InvalidInputError("lambda must be positive")
    if d < 1 or n < 1:
        raise InvalidInputError("d and n must be at least 1")
    true_param = np.asarray(true_param, dtype=np.float64)
    if true_param.shape != (d,):
        raise InvalidInputError(f"true_param must have length {d}")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, d))
    p = sigmoid(features @ true_param)
    labels = (rng.random(n) < p).astype(np.float64)
    return LogisticModel(features, labels, lam, true_param, seed)


def sigma(model: ObjectiveModel, x: np.ndarray, y: np.ndarray) -> SymMatrix:
    """Conditional covariance of the variance-reduced gradient estimator.

    Exact enumeration over all n components; symmetric PSD up to round-off.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("sigma arguments must be finite")
    return SymMatrix(model.sigma_matrix(x, y))


def q_factor(spec: DiffusionSpec, x: np.ndarray, y: np.ndarray) -> SymMatrix:
    """Diffusion factor (sigma(x, y) + (delta/eta) I)^{1/2}."""
    return psd_sqrt(sigma(spec.model, x, y), spec.ridge)


def q_factor_batch(
    model: ObjectiveModel, eta: float, delta: float, xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """Replica-batched diffusion factors, shape (R, d, d)."""
    return psd_sqrt_batch(model.sigma_batch(xs, ys), delta / eta)


def minimizer(model: ObjectiveModel, max_iter: int = 200, tol: float = 1e-10) -> np.ndarray:
    """Minimizer of the averaged objective.

    The quadratic family is homogeneous, so the origin minimizes it whenever
    the averaged Hessian is positive definite.  The logistic family is
    solved by damped Newton down to |grad| <= tol.
    """
    if isinstance(model, QuadraticAlternateModel):
        return np.zeros(model.d)
    x = np.zeros(model.d)
    for _ in range(max_iter):
        g = model.full_gradient(x)
        if np.linalg.norm(g) <= tol:
            return x
        step = np.linalg.solve(model.hessian(x), g)
        t = 1.0
        if isinstance(model, LogisticModel):
            base = model.loss(x)
            slope = float(np.dot(g, step))
            while t > 1e-12 and model.loss(x - t * step) > base - 1e-4 * t * slope:
                t *= 0.5
        x = x - t * step
    if np.linalg.norm(model.full_gradient(x)) <= tol:
        return x
    raise NoConvergenceError(f"Newton did not reach |grad| <= {tol} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# Serialization: one JSON header line, then the arrays either as raw
# little-endian float64 (binary, bit-exact round trip) or as one
# 17-significant-digit decimal per line (text).
# ---------------------------------------------------------------------------

_FORMAT = "svrgld-model"
_VERSION = 1


def _array_specs(model: ObjectiveModel) -> tuple[str, dict, list[tuple[str, np.ndarray]]]:
    if isinstance(model, QuadraticAlternateModel):
        return (
            "quadratic",
            {},
            [("qmat", model.qmat), ("dvec", model.dvec), ("samples", model.samples)],
        )
    if isinstance(model, LogisticModel):
        return (
            "logistic",
            {"lambda": model.lam},
            [
                ("features", model.features),
                ("labels", model.labels),
                ("true_param", model.true_param),
            ],
        )
    raise InvalidInputError(f"cannot serialize model type {type(model).__name__}")


def save_model(model: ObjectiveModel, path: str | Path, mode: str = "binary") -> None:
    if mode not in ("binary", "text"):
        raise InvalidInputError(f"mode must be 'binary' or 'text', got {mode!r}")
    kind, scalars, arrays = _array_specs(model)
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "type": kind,
        "mode": mode,
        "d": model.d,
        "n": model.n,
        "seed": model.seed,
        "scalars": scalars,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in arrays:
            if mode == "binary":
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
            else:
                lines = "\n".join("%.17g" % v for v in np.ravel(a))
                fh.write(lines.encode("ascii") + b"\n")


def _read_array(fh: BufferedReader, shape: tuple[int, ...], mode: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    if mode == "binary":
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise InvalidInputError("model file truncated")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    vals = [float(fh.readline()) for _ in range(count)]
    return np.array(vals, dtype=np.float64).reshape(shape)


def load_model(path: str | Path) -> ObjectiveModel:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != _FORMAT or header.get("version") != _VERSION:
            raise InvalidInputError(f"unrecognized model file header in {path}")
        mode = header["mode"]
        arrays = {
            name: _read_array(fh, tuple(shape), mode) for name, shape in header["arrays"]
        }
    if header["type"] == "quadratic":
        return QuadraticAlternateModel(
            arrays["qmat"], arrays["dvec"], arrays["samples"], header["seed"]
        )
    if header["type"] == "logistic":
        return LogisticModel(
            arrays["features"],
            arrays["labels"],
            header["scalars"]["lambda"],
            arrays["true_param"],
            header["seed"],
        )
    raise InvalidInputError(f"unknown model type {header['type']!r}")
