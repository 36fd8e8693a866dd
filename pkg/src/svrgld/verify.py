"""Numerical verification of the standing assumptions on concrete instances.

Every estimator here draws from a seeded sample set and reports maxima over
it, so reported values are reproducible bitwise and are lower bounds on the
true suprema; pass/fail compares those sampled maxima against the analytic
ceilings (a necessary condition, never a claim about the supremum itself).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .linalg import SymMatrix, directional_derivative, eig_sym, psd_sqrt
from .models import (
    DiffusionSpec,
    LogisticModel,
    ObjectiveModel,
    QuadraticAlternateModel,
    q_factor,
    sigma,
)


def _ball_points(rng: np.random.Generator, count: int, d: int, radius: float) -> np.ndarray:
    """Uniform draws from the radius-ball in R^d, shape (count, d)."""
    dirs = rng.standard_normal((count, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1.0 / d)
    return dirs * radii[:, None]


def _unit_vectors(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    v = rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Assumption 1 (smoothness)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothnessEstimate:
    l_hat: float  # fourth-moment component constant
    full_gradient_l_hat: float  # Lipschitz constant of the averaged gradient


def estimate_smoothness(
    model: ObjectiveModel, trials: int, radius: float, seed: int
) -> SmoothnessEstimate:
    """Max over sampled pairs of (E_I |g_I(x) - g_I(y)|^4)^{1/4} / |x - y|.

    The component expectation is exact (enumeration over all n components);
    the full-gradient ratio is reported alongside.
    """
    rng = np.random.default_rng(seed)
    xs = _ball_points(rng, trials, model.d, radius)
    ys = _ball_points(rng, trials, model.d, radius)
    l4_max = 0.0
    lp_max = 0.0
    for x, y in zip(xs, ys):
        gap = float(np.linalg.norm(x - y))
        if gap < 1e-12:
            continue
        diffs = model.component_gradients(x) - model.component_gradients(y)
        fourth = float(np.mean(np.sum(diffs**2, axis=1) ** 2))
        l4_max = max(l4_max, fourth**0.25 / gap)
        full = float(np.linalg.norm(model.full_gradient(x) - model.full_gradient(y)))
        lp_max = max(lp_max, full / gap)
    return SmoothnessEstimate(l_hat=l4_max, full_gradient_l_hat=lp_max)


# ---------------------------------------------------------------------------
# Assumption 2 (dissipativity)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DissipativityEstimate:
    gamma_hat: float
    k_hat: float
    dissipative: bool  # False is a report, not an exception


def estimate_dissipativity(
    model: ObjectiveModel, trials: int, radius: float, seed: int
) -> DissipativityEstimate:
    """Tightest supporting line z >= gamma*w - K under the sampled scatter
    of (w, z) = (|x|^2, <grad P(x), x>).

    Selection rule: the minimal feasible intercept is K0 = (-min z)^+; the
    slope is then maximized under the intercept budget 2*K0, which has the
    closed form gamma = min_i (z_i + 2*K0) / w_i.  With an all-nonnegative
    scatter this degenerates to the steepest through-origin line (K = 0),
    and it recovers the completion-of-squares pair on shifted-linear
    gradients.
    """
    rng = np.random.default_rng(seed)
    xs = _ball_points(rng, trials, model.d, radius)
    grads = np.stack([model.full_gradient(x) for x in xs])
    w = np.sum(xs**2, axis=1)
    z = np.einsum("ri,ri->r", grads, xs)
    keep = w > 1e-12
    w, z = w[keep], z[keep]
    k0 = max(0.0, float(-np.min(z)))
    budget = 2.0 * k0
    gamma = float(np.min((z + budget) / w))
    k_hat = max(0.0, float(np.max(gamma * w - z)))
    dissipative = gamma > 0.0 and k_hat <= gamma * float(np.max(w))
    return DissipativityEstimate(gamma_hat=gamma, k_hat=k_hat, dissipative=dissipative)


# ---------------------------------------------------------------------------
# Assumption 4 (derivative ceilings)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Assumption4Report:
    a1_hat: float  # sup |second directional derivative of grad P|
    a2_hat: float  # sup |third directional derivative of grad P|
    d1q_hat: float  # sup ||d/dx Q||_HS
    d2q_hat: float  # sup ||d/dy Q||_HS
    d11q_hat: float  # sup ||d2/dx2 Q||_HS
    d111q_hat: float  # sup ||d3/dx3 Q||_HS

    @property
    def a_hats(self) -> tuple[float, float, float, float, float]:
        """(A1..A5) in the assumption's convention: Q ceilings are squared."""
        return (
            self.a1_hat,
            self.a2_hat,
            max(self.d1q_hat, self.d2q_hat) ** 2,
            self.d11q_hat**2,
            self.d111q_hat**2,
        )


def check_assumption4(
    spec: DiffusionSpec, trials: int, radius: float, seed: int
) -> Assumption4Report:
    """Finite-difference maxima of the gradient and diffusion-factor
    derivatives over sampled points and unit directions."""
    model = spec.model
    rng = np.random.default_rng(seed)
    xs = _ball_points(rng, trials, model.d, radius)
    ys = _ball_points(rng, trials, model.d, radius)
    v1 = _unit_vectors(rng, trials, model.d)
    v2 = _unit_vectors(rng, trials, model.d)
    v3 = _unit_vectors(rng, trials, model.d)

    grad = lambda x: model.full_gradient(x)
    a1 = a2 = d1q = d2q = d11q = d111q = 0.0
    for x, y, u1, u2, u3 in zip(xs, ys, v1, v2, v3):
        a1 = max(a1, float(np.linalg.norm(directional_derivative(grad, x, (u1, u2), 2))))
        a2 = max(a2, float(np.linalg.norm(directional_derivative(grad, x, (u1, u2, u3), 3))))
        q_in_x = lambda xx: q_factor(spec, xx, y).entries
        q_in_y = lambda yy: q_factor(spec, x, yy).entries
        d1q = max(d1q, float(np.linalg.norm(directional_derivative(q_in_x, x, (u1,), 1), "fro")))
        d2q = max(d2q, float(np.linalg.norm(directional_derivative(q_in_y, y, (u1,), 1), "fro")))
        d11q = max(
            d11q, float(np.linalg.norm(directional_derivative(q_in_x, x, (u1, u2), 2), "fro"))
        )
        d111q = max(
            d111q,
            float(np.linalg.norm(directional_derivative(q_in_x, x, (u1, u2, u3), 3), "fro")),
        )
    return Assumption4Report(a1, a2, d1q, d2q, d11q, d111q)


# ---------------------------------------------------------------------------
# Matrix square-root derivative inequalities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SqrtLemmaReport:
    checked: int
    skipped: int
    worst_ratio: dict  # order -> max LHS/RHS over checked points
    passed: bool


def check_sqrt_derivative_lemma(
    family: Callable[[np.ndarray], np.ndarray],
    points: np.ndarray,
    seed: int,
    floor: float = 1e-8,
    tolerance: float = 1e-6,
) -> SqrtLemmaReport:
    """Check the square-root derivative bounds along a parametric PSD family.

    ``family`` maps a parameter point to a symmetric positive matrix; both
    sides of the order-1/2/3 inequalities are evaluated by finite
    differences.  Points where the smallest eigenvalue falls below ``floor``
    are skipped (reported, not failed).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rng = np.random.default_rng(seed)
    p_dim = points.shape[1]
    hs = lambda m: float(np.linalg.norm(m, "fro"))
    sqrt_family = lambda x: psd_sqrt(SymMatrix(family(x))).entries

    worst = {1: 0.0, 2: 0.0, 3: 0.0}
    checked = skipped = 0
    for x in points:
        mat = SymMatrix(family(x))
        lam = float(eig_sym(mat).eigenvalues[0])
        if lam < floor:
            skipped += 1
            continue
        checked += 1
        dmat = mat.dim
        u1, u2, u3 = _unit_vectors(rng, 3, p_dim)
        s1 = {  # first-order family derivatives, keyed by direction tag
            "1": directional_derivative(family, x, (u1,), 1),
            "2": directional_derivative(family, x, (u2,), 1),
            "3": directional_derivative(family, x, (u3,), 1),
        }
        s12 = directional_derivative(family, x, (u1, u2), 2)
        s13 = directional_derivative(family, x, (u1, u3), 2)
        s23 = directional_derivative(family, x, (u2, u3), 2)
        s123 = directional_derivative(family, x, (u1, u2, u3), 3)

        lhs1 = hs(directional_derivative(sqrt_family, x, (u1,), 1))
        rhs1 = 0.5 * lam**-0.5 * hs(s1["1"])
        lhs2 = hs(directional_derivative(sqrt_family, x, (u1, u2), 2))
        rhs2 = 0.25 * dmat**0.5 * lam**-1.5 * hs(s1["1"]) * hs(s1["2"]) + 0.5 * lam**-0.5 * hs(s12)
        lhs3 = hs(directional_derivative(sqrt_family, x, (u1, u2, u3), 3))
        rhs3 = (
            0.25 * dmat**0.5 * lam**-1.5 * (hs(s1["2"]) * hs(s13) + hs(s12) * hs(s1["3"]))
            + 0.375 * dmat * lam**-2.5 * hs(s1["1"]) * hs(s1["2"]) * hs(s1["3"])
            + 0.25 * dmat**0.5 * lam**-1.5 * hs(s1["1"]) * hs(s23)
            + 0.5 * lam**-0.5 * hs(s123)
        )
        for order, lhs, rhs in ((1, lhs1, rhs1), (2, lhs2, rhs2), (3, lhs3, rhs3)):
            if rhs > 0:
                worst[order] = max(worst[order], lhs / rhs)
            elif lhs > tolerance:
                worst[order] = math.inf
    passed = checked > 0 and all(r <= 1.0 + tolerance for r in worst.values())
    return SqrtLemmaReport(checked=checked, skipped=skipped, worst_ratio=worst, passed=passed)


# ---------------------------------------------------------------------------
# Chebyshev concentration checks (quadratic family)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConcentrationResult:
    statistic: str
    n: int
    epsilon: float
    bound: float
    rate: float
    passed: bool  # rate <= bound + 3 * binomial stderr at the bound


def _gauss_norm_moment(d: int, p: int) -> float:
    """E |a|^p for a ~ N(0, I_d), p even: product over chi-square factors."""
    out = 1.0
    for k in range(p // 2):
        out *= d + 2 * k
    return out


def check_concentration(
    d: int,
    n_grid: Iterable[int],
    repetitions: int,
    seed: int,
    bound_target: float = 0.1,
) -> list[ConcentrationResult]:
    """Empirical exceedance rates for the sample-average concentration
    inequalities of the quadratic family, one regenerated instance per
    repetition, with epsilon chosen per n so the Chebyshev bound equals
    ``bound_target`` (capped at 1)."""
    if repetitions < 100:
        raise ValueError("need at least 100 repetitions for stable rates")
    root = np.random.default_rng(seed)
    v = _unit_vectors(root, 3, d)
    results = []
    for n in n_grid:
        numerators = {
            "ineq21": float(d),
            "ineq22": _gauss_norm_moment(d, 8),
            "ineq23": 6.0 * d**6,
        }
        eps = {k: math.sqrt(num / (n * bound_target)) for k, num in numerators.items()}
        bounds = {k: min(1.0, num / (n * eps[k] ** 2)) for k, num in numerators.items()}
        exceed = {k: 0 for k in numerators}
        for rep in range(repetitions):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n, rep)))
            g = rng.standard_normal((d, d))
            qmat, r = np.linalg.qr(g)
            qmat = qmat * np.sign(np.diag(r))
            samples = rng.standard_normal((n, d))
            abar = np.mean(samples, axis=0)
            p, q, rr = qmat.T @ v[0], qmat.T @ v[1], qmat.T @ v[2]
            # |(1/n) sum Qt diag(a_i) Qt^T v| = |abar o (Qt^T v)|
            if np.linalg.norm(abar * p) > eps["ineq21"]:
                exceed["ineq21"] += 1
            m4 = float(np.mean(np.sum(samples**2, axis=1) ** 2))
            if abs(m4 - _gauss_norm_moment(d, 4)) > eps["ineq22"]:
                exceed["ineq22"] += 1
            inner = (samples * q) @ rr
            stat = np.mean(samples * p * inner[:, None], axis=0) - p * q * rr
            if np.linalg.norm(stat) > eps["ineq23"]:
                exceed["ineq23"] += 1
        for k in numerators:
            rate = exceed[k] / repetitions
            slack = 3.0 * math.sqrt(bounds[k] * max(0.0, 1.0 - bounds[k]) / repetitions)
            results.append(
                ConcentrationResult(
                    statistic=k,
                    n=n,
                    epsilon=eps[k],
                    bound=bounds[k],
                    rate=rate,
                    passed=rate <= bounds[k] + slack,
                )
            )
    return results


# ---------------------------------------------------------------------------
# Closed-form covariance residuals (quadratic family)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedFormReport:
    residuals: list[float]
    bound: float  # Chebyshev radius at 1% failure probability
    n_within: int
    passed: bool  # all but at most 1 in 20 within the bound


def check_sigma_closed_form(
    model: QuadraticAlternateModel,
    pairs: int,
    max_separation: float,
    seed: int,
    radius: float = 5.0,
) -> ClosedFormReport:
    """Frobenius residual between the enumerated covariance and the
    rotated-diagonal closed form over sampled pairs with |x - y| bounded."""
    rng = np.random.default_rng(seed)
    bound = math.sqrt(600.0 * model.d**6 / model.n)
    residuals = []
    for _ in range(pairs):
        x = _ball_points(rng, 1, model.d, radius)[0]
        step = _unit_vectors(rng, 1, model.d)[0] * (max_separation * rng.random())
        y = x + step
        res = float(
            np.linalg.norm(sigma(model, x, y).entries - model.sigma_closed_form(x, y), "fro")
        )
        residuals.append(res)
    n_within = sum(r <= bound for r in residuals)
    allowed_misses = max(1, pairs // 20)
    return ClosedFormReport(
        residuals=residuals,
        bound=bound,
        n_within=n_within,
        passed=pairs - n_within <= allowed_misses,
    )


# ---------------------------------------------------------------------------
# Theorem step-size regime
# ---------------------------------------------------------------------------


def theorem_eta_ceiling(gamma: float, l: float, a3: float, delta: float) -> float:
    """Largest eta admitted by the main approximation theorem's conditions."""
    candidates = [
        delta,
        (gamma / (432.0 * l**4)) ** (1.0 / 3.0),
        gamma / (96.0 * l**2),
        (gamma / (576.0 * l**3)) ** 0.5,
        gamma / (math.sqrt(6.0 * (1.0 + gamma)) * 100.0 * l**2),
        gamma / (48.0 * a3) if a3 > 0 else math.inf,
        gamma / (8.0 * l**2),
    ]
    return min(candidates)


# ---------------------------------------------------------------------------
# Full report
# ---------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    l_hat: float
    full_gradient_l_hat: float
    gamma_hat: float
    k_hat: float
    dissipative: bool
    a_hats: tuple[float, float, float, float, float]
    q_derivative_norms: dict
    closed_form_errors: dict
    concentration: list[ConcentrationResult] = field(default_factory=list)
    sqrt_lemma: SqrtLemmaReport | None = None
    ceilings: dict = field(default_factory=dict)
    eta: float = 0.0
    delta: float = 0.0
    theorem_regime: bool = False
    eta_ceiling: float = 0.0
    passes: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        return {
            "L_hat": self.l_hat,
            "full_gradient_L_hat": self.full_gradient_l_hat,
            "gamma_hat": self.gamma_hat,
            "K_hat": self.k_hat,
            "dissipative": self.dissipative,
            "A": list(self.a_hats),
            "q_derivative_norms": self.q_derivative_norms,
            "lemma_residuals": {
                "sigma_closed_form": self.closed_form_errors,
                "sqrt_derivative": None
                if self.sqrt_lemma is None
                else {
                    "checked": self.sqrt_lemma.checked,
                    "skipped": self.sqrt_lemma.skipped,
                    "worst_ratio": {str(k): v for k, v in self.sqrt_lemma.worst_ratio.items()},
                    "passed": self.sqrt_lemma.passed,
                },
            },
            "concentration": {
                f"{r.statistic}@n={r.n}": {"rate": r.rate, "bound": r.bound, "pass": r.passed}
                for r in self.concentration
            },
            "ceilings": self.ceilings,
            "eta": self.eta,
            "delta": self.delta,
            "eta_ceiling": self.eta_ceiling,
            "theorem_regime": self.theorem_regime,
            "passes": self.passes,
        }


def assumption_report(
    model: ObjectiveModel,
    eta: float,
    delta: float,
    seed: int,
    smooth_trials: int = 400,
    diss_trials: int = 4000,
    a4_trials: int = 25,
    radius: float = 4.0,
    concentration_reps: int = 200,
    concentration_grid: Iterable[int] | None = None,
    closed_form_pairs: int = 20,
    sqrt_lemma_points: int = 10,
) -> AssumptionReport:
    """Assemble the full verification report for one model instance."""
    spec = DiffusionSpec(eta=eta, delta=delta, model=model)
    smooth = estimate_smoothness(model, smooth_trials, radius, seed)
    diss = estimate_dissipativity(model, diss_trials, radius, seed + 1)
    a4 = check_assumption4(spec, a4_trials, radius, seed + 2)

    passes: dict[str, bool] = {"dissipative": diss.dissipative}
    ceilings: dict[str, float] = {}
    closed_form: dict = {}
    concentration: list[ConcentrationResult] = []

    if isinstance(model, QuadraticAlternateModel):
        d = model.d
        ceilings = {
            "a1": 1e-4,
            "a2": 1e-4,
            "d1q": 1.05 * d**2,
            "d2q": 1.05 * d**2,
            "L4": 1.1 * 8.0 * (np.sum((model.dvec) ** 2) ** 2 + 3.0 * d**6),
        }
        passes["a1_ceiling"] = a4.a1_hat <= ceilings["a1"]
        passes["a2_ceiling"] = a4.a2_hat <= ceilings["a2"]
        passes["d1q_ceiling"] = a4.d1q_hat <= ceilings["d1q"]
        passes["d2q_ceiling"] = a4.d2q_hat <= ceilings["d2q"]
        passes["L4_ceiling"] = smooth.l_hat**4 <= ceilings["L4"]
        cf = check_sigma_closed_form(model, closed_form_pairs, 2.0, seed + 3)
        closed_form = {
            "bound": cf.bound,
            "max_residual": max(cf.residuals),
            "n_within": cf.n_within,
            "pairs": len(cf.residuals),
        }
        passes["sigma_closed_form"] = cf.passed
        if concentration_grid is not None:
            concentration = check_concentration(
                model.d, concentration_grid, concentration_reps, seed + 4
            )
            passes["concentration"] = all(r.passed for r in concentration)
    elif isinstance(model, LogisticModel):
        norms = np.linalg.norm(model.features, axis=1)
        mom = {k: float(np.mean(norms**k)) for k in (3, 4, 5, 6, 7, 9)}
        ratio = eta / delta if delta > 0 else math.inf
        ceilings = {
            "a1": 1.1 * 3.0 * mom[3],
            "a2": 1.1 * 13.0 * mom[4],
            "d1q": 1.1 * 2.0 * mom[3] * math.sqrt(ratio),
            "d2q": 1.1 * 2.0 * mom[3] * math.sqrt(ratio),
            "d11q": 1.1 * 4.0 * math.sqrt(ratio) * (2.0 * mom[4] + mom[6] * math.sqrt(model.d) * ratio),
            "d111q": 1.1
            * 4.0
            * math.sqrt(ratio)
            * (12.0 * math.sqrt(model.d) * mom[7] * ratio + 6.0 * model.d * mom[9] * ratio**2 + 11.0 * mom[5]),
            "L4": 1.1 * 8.0 * (float(np.mean(norms**8)) + model.lam**4),
            "gamma_floor": model.lam * (1.0 - 1e-6),
        }
        passes["a1_ceiling"] = a4.a1_hat <= ceilings["a1"]
        passes["a2_ceiling"] = a4.a2_hat <= ceilings["a2"]
        passes["d1q_ceiling"] = a4.d1q_hat <= ceilings["d1q"]
        passes["d2q_ceiling"] = a4.d2q_hat <= ceilings["d2q"]
        passes["d11q_ceiling"] = a4.d11q_hat <= ceilings["d11q"]
        passes["d111q_ceiling"] = a4.d111q_hat <= ceilings["d111q"]
        passes["L4_ceiling"] = smooth.l_hat**4 <= ceilings["L4"]
        passes["gamma_floor"] = diss.gamma_hat >= ceilings["gamma_floor"]

    sqrt_lemma = None
    if sqrt_lemma_points > 0:
        rng = np.random.default_rng(seed + 5)
        anchor = _ball_points(rng, 1, model.d, radius)[0]
        ridge = spec.ridge if spec.ridge > 0 else 1.0
        family = lambda x: model.sigma_matrix(x, anchor) + ridge * np.eye(model.d)
        pts = _ball_points(rng, sqrt_lemma_points, model.d, radius)
        sqrt_lemma = check_sqrt_derivative_lemma(family, pts, seed + 6)
        passes["sqrt_derivative_lemma"] = sqrt_lemma.passed

    a3_hat = max(a4.d1q_hat, a4.d2q_hat) ** 2
    ceiling = theorem_eta_ceiling(diss.gamma_hat, smooth.l_hat, a3_hat, delta)
    return AssumptionReport(
        l_hat=smooth.l_hat,
        full_gradient_l_hat=smooth.full_gradient_l_hat,
        gamma_hat=diss.gamma_hat,
        k_hat=diss.k_hat,
        dissipative=diss.dissipative,
        a_hats=a4.a_hats,
        q_derivative_norms={
            "d1q": a4.d1q_hat,
            "d2q": a4.d2q_hat,
            "d11q": a4.d11q_hat,
            "d111q": a4.d111q_hat,
        },
        closed_form_errors=closed_form,
        concentration=concentration,
        sqrt_lemma=sqrt_lemma,
        ceilings=ceilings,
        eta=eta,
        delta=delta,
        theorem_regime=eta <= ceiling,
        eta_ceiling=ceiling,
        passes=passes,
    )
