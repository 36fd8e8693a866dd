"""The SVRG-LD iteration: epochs of m inner steps around a frozen anchor.

Inner update for step k of epoch s, with anchor w = state at epoch start:

    x <- x - eta * [ mean_B( grad_i(x) - grad_i(w) ) + full_grad(w) ]
           + sqrt(eta * delta) * W,    W ~ N(0, I_d)

Randomness layout: one root seed; replica r draws its component indices
from stream (seed, r, 0) and its Gaussians from stream (seed, r, 1), each
as a single batched call in global step order.  Changing the batch size
or the epoch split therefore never perturbs the Gaussian sequence, and
replica r's path depends only on (seed, r).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidConfigError
from .models import DiffusionSpec, ObjectiveModel
from .paths import PathEnsemble

INDEX_STREAM = 0
NOISE_STREAM = 1
SDDE_NOISE_STREAM = 2

# Soft cap on the pre-drawn noise block per replica chunk (~256 MB of f8).
_BLOCK_BUDGET = 32_000_000


@dataclass(frozen=True)
class RunConfig:
    """Algorithm hyperparameters shared by the iteration and the integrator.

    The standing regime is 0 < eta <= delta <= 1; delta = 0 is accepted as
    the noiseless variance-reduced-descent limit (the eta <= delta
    constraint is then waived).
    """

    eta: float
    delta: float
    m: int
    batch: int = 1
    epochs: int = 0
    replicas: int = 1
    seed: int = 0
    record_inner: bool = False
    replace: bool = True  # index draws with replacement (the analyzed case)

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise InvalidConfigError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.delta <= 1.0:
            raise InvalidConfigError(f"delta must lie in [0, 1], got {self.delta}")
        if self.delta > 0 and self.eta > self.delta:
            raise InvalidConfigError(
                f"standing regime requires eta <= delta (eta={self.eta}, delta={self.delta})"
            )
        for name in ("m", "batch", "replicas"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be at least 1")
        if self.epochs < 0:
            raise InvalidConfigError("epochs must be nonnegative")


def replica_stream(seed: int, replica: int, stream: int) -> np.random.Generator:
    """The canonical per-replica substream generator."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica, stream)))


def draw_indices(
    seed: int, replica: int, n: int, epochs: int, m: int, batch: int, replace: bool = True
) -> np.ndarray:
    """Component indices for one replica, shape (epochs, m, batch)."""
    rng = replica_stream(seed, replica, INDEX_STREAM)
    if replace:
        return rng.integers(0, n, size=(epochs, m, batch))
    out = np.empty((epochs, m, batch), dtype=np.int64)
    for s in range(epochs):
        for t in range(m):
            out[s, t] = rng.choice(n, size=batch, replace=False)
    return out


def draw_noise(
    seed: int, replica: int, count: int, d: int, stream: int = NOISE_STREAM
) -> np.ndarray:
    """Gaussian increments for one replica in global step order, shape (count, d)."""
    return replica_stream(seed, replica, stream).standard_normal((count, d))


def coupling_token(seed: int, replicas: int, m: int, epochs: int, stream: int) -> str:
    return f"seed={seed};replicas={replicas};m={m};epochs={epochs};stream={stream}"


def svrgld_update(
    model: ObjectiveModel,
    eta: float,
    delta: float,
    state: np.ndarray,
    anchor: np.ndarray,
    anchor_grad: np.ndarray,
    indices: np.ndarray,
    noise: np.ndarray,
) -> np.ndarray:
    """Pure one-step update given already-drawn indices and Gaussians.

    Accepts a single state (d,) with indices (B,), or a replica stack (R, d)
    with indices (R, B); ``noise`` matches the state shape.
    """
    state = np.asarray(state, dtype=np.float64)
    indices = np.atleast_1d(np.asarray(indices))
    single = state.ndim == 1
    if single:
        state = state[None, :]
        anchor = np.asarray(anchor, dtype=np.float64)[None, :]
        anchor_grad = np.asarray(anchor_grad, dtype=np.float64)[None, :]
        indices = indices[None, :]
        noise = np.asarray(noise, dtype=np.float64)[None, :]
    r, b = indices.shape
    d = state.shape[1]
    x_rows = np.broadcast_to(state[:, None, :], (r, b, d))
    a_rows = np.broadcast_to(np.asarray(anchor)[:, None, :], (r, b, d))
    control = np.mean(
        model.component_gradient_at(indices, x_rows)
        - model.component_gradient_at(indices, a_rows),
        axis=1,
    )
    new = state - eta * (control + anchor_grad) + np.sqrt(eta * delta) * noise
    return new[0] if single else new


def svrgld_step(
    model: ObjectiveModel,
    spec: DiffusionSpec,
    state: np.ndarray,
    anchor: np.ndarray,
    anchor_grad: np.ndarray,
    rng: np.random.Generator,
    batch: int = 1,
    replace: bool = True,
) -> np.ndarray:
    """One inner step, drawing the component indices and then the Gaussian."""
    if replace:
        idx = rng.integers(0, model.n, size=batch)
    else:
        idx = rng.choice(model.n, size=batch, replace=False)
    w = rng.standard_normal(model.d)
    return svrgld_update(model, spec.eta, spec.delta, state, anchor, anchor_grad, idx, w)


def _replica_blocks(replicas: int, per_replica_cost: int) -> list[tuple[int, int]]:
    block = max(1, min(replicas, _BLOCK_BUDGET // max(1, per_replica_cost)))
    return [(lo, min(lo + block, replicas)) for lo in range(0, replicas, block)]


def run_svrgld(
    model: ObjectiveModel,
    config: RunConfig,
    x0: np.ndarray,
    on_step: Callable[[int, int, int, np.ndarray, np.ndarray], None] | None = None,
) -> PathEnsemble:
    """Run the full ensemble; replica r's path is a function of (seed, r) only.

    ``on_step(epoch, step, replica_offset, anchors, anchor_grads)`` is an
    instrumentation hook invoked before each inner step with the anchor
    state/gradient rows actually used.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    d = model.d
    s_tot, m, b = config.epochs, config.m, config.batch
    states = np.empty((config.replicas, s_tot + 1, d))
    inner = np.empty((config.replicas, s_tot, m, d)) if config.record_inner else None

    for lo, hi in _replica_blocks(config.replicas, s_tot * m * (d + b)):
        rb = hi - lo
        idx = np.stack(
            [draw_indices(config.seed, r, model.n, s_tot, m, b, config.replace) for r in range(lo, hi)]
        )
        noise = np.stack(
            [draw_noise(config.seed, r, s_tot * m, d) for r in range(lo, hi)]
        ).reshape(rb, s_tot, m, d)
        x = np.tile(x0, (rb, 1))
        states[lo:hi, 0] = x
        for s in range(s_tot):
            anchors = x.copy()
            anchor_grads = model.full_gradient_batch(anchors)
            for t in range(m):
                if on_step is not None:
                    on_step(s, t, lo, anchors, anchor_grads)
                x = svrgld_update(
                    model, config.eta, config.delta, x, anchors, anchor_grads,
                    idx[:, s, t, :], noise[:, s, t, :],
                )
                if inner is not None:
                    inner[lo:hi, s, t] = x
            states[lo:hi, s + 1] = x

    return PathEnsemble(
        component="svrgld",
        states=states,
        seed=config.seed,
        coupling=coupling_token(config.seed, config.replicas, m, s_tot, NOISE_STREAM),
        inner=inner,
    )
