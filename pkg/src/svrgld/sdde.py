"""Euler-Maruyama integration of the delayed diffusion surrogate.

The integrated equation is

    dX_t = -full_grad(X_t) dt + sqrt(eta) * Q(X_t, A_t) dB_t,

where the delayed anchor A_t is frozen at the state seen at the last epoch
boundary (every m*eta time units) and Q(x, y) = (sigma(x, y) + (delta/eta) I)^{1/2}.
The integrator step is h = eta / substeps, so epoch boundaries always land
on grid points; the diffusion factor is re-evaluated at every substep at the
current state while the anchor stays frozen within the epoch.

Coupled mode (substeps = 1) consumes the same per-replica Gaussian stream as
the algorithm runner, making the k-th increment of replica r identical
across the two processes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .algorithm import (
    NOISE_STREAM,
    SDDE_NOISE_STREAM,
    RunConfig,
    _replica_blocks,
    coupling_token,
    draw_noise,
)
from .errors import DivergedError, InvalidConfigError, InvalidInputError
from .linalg import _EPS
from .models import ObjectiveModel, q_factor_batch
from .paths import JacobianEnsemble, PathEnsemble

DIVERGENCE_THRESHOLD = 1e12


@dataclass(frozen=True)
class SddeConfig(RunConfig):
    """RunConfig plus the number of integrator substeps per algorithm step."""

    substeps: int = 1

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.substeps < 1:
            raise InvalidConfigError("substeps must be at least 1")


def _check_divergence(x: np.ndarray) -> None:
    worst = float(np.max(np.abs(x)))
    if not np.isfinite(worst) or worst > DIVERGENCE_THRESHOLD:
        raise DivergedError(
            f"state reached |x| ~ {worst:.3e}; step size likely violates the "
            "dissipativity threshold"
        )


def _apply_diffusion(q: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.einsum("rij,rj->ri", q, z)


def run_sdde_em(
    model: ObjectiveModel,
    config: SddeConfig,
    x0: np.ndarray,
    coupled: bool = False,
    on_substep: Callable[[int, int, int, np.ndarray], None] | None = None,
) -> PathEnsemble:
    """Integrate the ensemble and record the epoch-boundary states.

    ``on_substep(epoch, substep, replica_offset, anchors)`` is invoked before
    each substep with the anchor rows in force, so tests can pin the delayed
    argument within an epoch.
    """
    if coupled and config.substeps != 1:
        raise InvalidConfigError("coupled mode requires substeps == 1")
    stream = NOISE_STREAM if coupled else SDDE_NOISE_STREAM
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    d, kappa = model.d, config.substeps
    s_tot, m = config.epochs, config.m
    h = config.eta / kappa
    root_h = np.sqrt(h)
    root_eta = np.sqrt(config.eta)
    states = np.empty((config.replicas, s_tot + 1, d))

    for lo, hi in _replica_blocks(config.replicas, s_tot * m * kappa * d):
        rb = hi - lo
        noise = np.stack(
            [draw_noise(config.seed, r, s_tot * m * kappa, d, stream) for r in range(lo, hi)]
        ).reshape(rb, s_tot, m, kappa, d)
        x = np.tile(x0, (rb, 1))
        states[lo:hi, 0] = x
        for s in range(s_tot):
            anchors = x.copy()
            for t in range(m):
                for j in range(kappa):
                    if on_substep is not None:
                        on_substep(s, t * kappa + j, lo, anchors)
                    q = q_factor_batch(model, config.eta, config.delta, x, anchors)
                    x = (
                        x
                        - h * model.full_gradient_batch(x)
                        + root_eta * _apply_diffusion(q, root_h * noise[:, s, t, j, :])
                    )
                _check_divergence(x)
            states[lo:hi, s + 1] = x

    return PathEnsemble(
        component="sdde",
        states=states,
        seed=config.seed,
        coupling=coupling_token(config.seed, config.replicas, m, s_tot, stream),
    )


def _q_directional(
    model: ObjectiveModel,
    eta: float,
    delta: float,
    x: np.ndarray,
    y: np.ndarray,
    direction: np.ndarray,
    slot: int,
) -> np.ndarray:
    """Directional derivative of the diffusion factor along a (non-unit)
    direction in slot 1 (state) or 2 (anchor), batched over replicas."""
    norms = np.linalg.norm(direction, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = direction / safe[:, None]
    step = _EPS ** (1.0 / 3.0) * (1.0 + np.linalg.norm(x, axis=1))
    bump = step[:, None] * unit
    if slot == 1:
        hi = q_factor_batch(model, eta, delta, x + bump, y)
        lo = q_factor_batch(model, eta, delta, x - bump, y)
    else:
        hi = q_factor_batch(model, eta, delta, x, y + bump)
        lo = q_factor_batch(model, eta, delta, x, y - bump)
    scale = norms / (2.0 * step)
    return (hi - lo) * scale[:, None, None]


def run_jacobian_flow(
    model: ObjectiveModel,
    config: SddeConfig,
    x0: np.ndarray,
    v: np.ndarray,
    record_every: int = 1,
) -> JacobianEnsemble:
    """Joint EM integration of the state and its initial-condition derivative.

    The derivative flow shares the state's Brownian increments:

        dG = -hess(X) G dt + sqrt(eta) [ d1Q(X, A)[G] + d2Q(X, A)[G_A] ] dB,

    with G_0 = v.  Within an epoch the frozen anchor A contributes through
    the second-slot derivative taken along G_A, the derivative flow value at
    the epoch start (equal to v on the first epoch, so the delayed argument
    is felt from time zero).
    """
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise InvalidInputError("direction v must be a unit vector")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    d, kappa = model.d, config.substeps
    s_tot, m = config.epochs, config.m
    h = config.eta / kappa
    root_h = np.sqrt(h)
    root_eta = np.sqrt(config.eta)
    total = s_tot * m * kappa
    rec = [k for k in range(total + 1) if k % record_every == 0 or k == total]
    times = np.array([k * h for k in rec])

    grads = np.empty((config.replicas, len(rec), d))
    for lo, hi in _replica_blocks(config.replicas, total * d):
        rb = hi - lo
        noise = np.stack(
            [draw_noise(config.seed, r, total, d, SDDE_NOISE_STREAM) for r in range(lo, hi)]
        ).reshape(rb, s_tot, m, kappa, d)
        x = np.tile(x0, (rb, 1))
        g = np.tile(v, (rb, 1))
        cursor = 0
        if rec[0] == 0:
            grads[lo:hi, 0] = g
            cursor = 1
        k = 0
        for s in range(s_tot):
            anchors = x.copy()
            anchor_g = g.copy()
            for t in range(m):
                for j in range(kappa):
                    z = root_h * noise[:, s, t, j, :]
                    q = q_factor_batch(model, config.eta, config.delta, x, anchors)
                    d1 = _q_directional(model, config.eta, config.delta, x, anchors, g, slot=1)
                    d2 = _q_directional(model, config.eta, config.delta, x, anchors, anchor_g, slot=2)
                    hess = model.hessian_batch(x)
                    g = (
                        g
                        - h * np.einsum("rij,rj->ri", hess, g)
                        + root_eta * _apply_diffusion(d1 + d2, z)
                    )
                    x = x - h * model.full_gradient_batch(x) + root_eta * _apply_diffusion(q, z)
                    k += 1
                    if cursor < len(rec) and rec[cursor] == k:
                        grads[lo:hi, cursor] = g
                        cursor += 1
                _check_divergence(x)
                _check_divergence(g)

    return JacobianEnsemble(times=times, grads=grads, direction=v, seed=config.seed)


def linear_form(u: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Lipschitz-1 test function <u/|u|, x> applied rowwise."""
    u = np.asarray(u, dtype=np.float64)
    u = u / np.linalg.norm(u)

    def h(x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ u

    return h


def distance_to(c: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Lipschitz-1 test function |x - c| applied rowwise."""
    c = np.asarray(c, dtype=np.float64)

    def h(x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(x, dtype=np.float64) - c, axis=-1)

    return h


def _em_final_states(
    model: ObjectiveModel, config: SddeConfig, x0: np.ndarray, n_substeps: int
) -> np.ndarray:
    """Integrate all replicas for a fixed number of substeps; returns (R, d).

    Anchors reset at epoch boundaries (every m * substeps grid points) just
    as in :func:`run_sdde_em`; the run may stop mid-epoch.
    """
    d, kappa = model.d, config.substeps
    h = config.eta / kappa
    root_h = np.sqrt(h)
    root_eta = np.sqrt(config.eta)
    per_epoch = config.m * kappa
    out = np.empty((config.replicas, d))
    for lo, hi in _replica_blocks(config.replicas, n_substeps * d):
        rb = hi - lo
        noise = np.stack(
            [draw_noise(config.seed, r, n_substeps, d, SDDE_NOISE_STREAM) for r in range(lo, hi)]
        )
        x = np.tile(np.asarray(x0, dtype=np.float64), (rb, 1))
        anchors = x.copy()
        for k in range(n_substeps):
            if k % per_epoch == 0:
                anchors = x.copy()
            q = q_factor_batch(model, config.eta, config.delta, x, anchors)
            x = (
                x
                - h * model.full_gradient_batch(x)
                + root_eta * _apply_diffusion(q, root_h * noise[:, k, :])
            )
        _check_divergence(x)
        out[lo:hi] = x
    return out


def semigroup_gradient(
    model: ObjectiveModel,
    config: SddeConfig,
    x0: np.ndarray,
    v: np.ndarray,
    h_test: Callable[[np.ndarray], np.ndarray],
    t: float,
    replicas: int | None = None,
) -> tuple[float, float]:
    """Common-random-numbers estimate of d/d(eps) E h(X_t^{x0 + eps v}).

    Two ensembles start from x0 +/- eps*v with eps = 1e-3 (1 + |x0|) and are
    driven by identical Gaussian increments; returns the central-difference
    estimate and its standard error.  ``t`` must land on the integrator grid.
    """
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise InvalidInputError("direction v must be a unit vector")
    if replicas is not None:
        from dataclasses import replace

        config = replace(config, replicas=replicas)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    h = config.eta / config.substeps
    n_substeps = int(round(t / h))
    if n_substeps < 0 or abs(n_substeps * h - t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidInputError(f"t={t} does not align with the integrator grid h={h}")
    eps = 1e-3 * (1.0 + float(np.linalg.norm(x0)))
    plus = _em_final_states(model, config, x0 + eps * v, n_substeps)
    minus = _em_final_states(model, config, x0 - eps * v, n_substeps)
    diff = (np.asarray(h_test(plus), dtype=np.float64) - np.asarray(h_test(minus))) / (2.0 * eps)
    est = float(np.mean(diff))
    stderr = float(np.std(diff, ddof=1) / np.sqrt(diff.shape[0])) if diff.shape[0] > 1 else 0.0
    return est, stderr
