import numpy as np
import pytest
import scipy.linalg

from svrgld.algorithm import RunConfig, run_svrgld
from svrgld.errors import DivergedError, InvalidConfigError, InvalidInputError
from svrgld.models import QuadraticAlternateModel, generate_quadratic_model
from svrgld.sdde import (
    SddeConfig,
    distance_to,
    linear_form,
    run_jacobian_flow,
    run_sdde_em,
    semigroup_gradient,
)
from svrgld.verify import estimate_dissipativity, estimate_smoothness


def pure_quadratic(dvec, qmat=None):
    """Single-component quadratic (sigma vanishes identically)."""
    d = len(dvec)
    return QuadraticAlternateModel(
        qmat=np.eye(d) if qmat is None else qmat,
        dvec=np.asarray(dvec, dtype=np.float64),
        samples=np.zeros((1, d)),
        seed=0,
    )


def test_config_requires_positive_substeps():
    with pytest.raises(InvalidConfigError):
        SddeConfig(eta=0.01, delta=0.1, m=5, substeps=0)


def test_deterministic_limit_matches_exponential_decay():
    # n=1, delta=0: gradient flow of P(x) = x^2/2; EM error envelope 2 h t e
    model = pure_quadratic([1.0])
    eta, m, kappa, epochs = 0.5, 1, 50, 10
    cfg = SddeConfig(eta=eta, delta=0.0, m=m, epochs=epochs, replicas=2, seed=1, substeps=kappa)
    ens = run_sdde_em(model, cfg, np.array([1.0]))
    h = eta / kappa
    for s in range(epochs + 1):
        t = s * m * eta
        assert abs(ens.states[0, s, 0] - np.exp(-t)) <= max(2.0 * h * t * np.e, 1e-14)
    assert np.array_equal(ens.states[0], ens.states[1])  # no noise -> replicas agree


def test_anchor_frozen_within_epochs():
    model = generate_quadratic_model(d=2, n=30, eigenvalues=[1.0, 2.0], seed=2)
    cfg = SddeConfig(eta=0.05, delta=0.2, m=4, epochs=3, replicas=2, seed=3, substeps=2)
    seen = {}

    def hook(epoch, substep, offset, anchors):
        seen.setdefault(epoch, []).append(anchors.copy())

    ens = run_sdde_em(model, cfg, np.zeros(2), on_substep=hook)
    for epoch, anchor_list in seen.items():
        assert len(anchor_list) == 4 * 2
        for anchors in anchor_list:
            assert np.array_equal(anchors, anchor_list[0])  # frozen within the epoch
        assert np.array_equal(anchor_list[0], ens.states[:, epoch, :])  # = recorded state


def test_epoch_states_form_markov_recursion():
    # restarting from the recorded epoch state with the same stream suffix
    # reproduces the next epoch state: no hidden cross-epoch carryover
    model = generate_quadratic_model(d=2, n=30, eigenvalues=[1.0, 2.0], seed=5)
    cfg = SddeConfig(eta=0.05, delta=0.2, m=5, epochs=4, replicas=1, seed=11)
    ens = run_sdde_em(model, cfg, np.array([1.0, -1.0]))

    from svrgld.algorithm import SDDE_NOISE_STREAM, draw_noise
    from svrgld.models import q_factor_batch

    noise = draw_noise(11, 0, 4 * 5, 2, SDDE_NOISE_STREAM)
    for s in range(4):
        x = ens.states[0, s][None, :].copy()
        anchor = x.copy()
        for t in range(5):
            q = q_factor_batch(model, cfg.eta, cfg.delta, x, anchor)
            z = np.sqrt(cfg.eta) * np.einsum("rij,rj->ri", q, np.sqrt(cfg.eta) * noise[[5 * s + t]])
            x = x - cfg.eta * model.full_gradient_batch(x) + z
        assert np.array_equal(x[0], ens.states[0, s + 1])


def test_divergence_detection():
    model = pure_quadratic([2.0])
    cfg = SddeConfig(eta=5.0, delta=0.0, m=50, epochs=40, replicas=1, seed=0)
    with pytest.raises(DivergedError):
        run_sdde_em(model, cfg, np.array([1.0]))


def test_coupled_requires_unit_substeps():
    model = pure_quadratic([1.0])
    cfg = SddeConfig(eta=0.1, delta=0.1, m=2, epochs=2, replicas=1, seed=0, substeps=2)
    with pytest.raises(InvalidConfigError):
        run_sdde_em(model, cfg, np.zeros(1), coupled=True)


def test_coupled_run_shares_gaussians_with_algorithm():
    # n=1: the control variate vanishes, so svrgld and the kappa=1 EM chain
    # are the same affine recursion of the shared Gaussians: paths coincide
    model = pure_quadratic([1.0])
    run_cfg = RunConfig(eta=0.1, delta=0.1, m=3, epochs=4, replicas=3, seed=21)
    sdde_cfg = SddeConfig(eta=0.1, delta=0.1, m=3, epochs=4, replicas=3, seed=21)
    alg = run_svrgld(model, run_cfg, np.array([2.0]))
    em = run_sdde_em(model, sdde_cfg, np.array([2.0]), coupled=True)
    assert alg.coupling == em.coupling
    assert np.allclose(alg.states, em.states, atol=1e-12)


def test_refinement_bias_is_first_order_in_eta():
    # deterministic sub-case: the kappa-refinement gap of the mean trajectory
    # scales like eta (ratio ~2 when eta halves)
    model = pure_quadratic([1.0])
    horizon = 2.0

    def gap(eta):
        epochs = int(round(horizon / eta))
        base = SddeConfig(eta=eta, delta=0.0, m=1, epochs=epochs, replicas=1, seed=0, substeps=1)
        fine = SddeConfig(eta=eta, delta=0.0, m=1, epochs=epochs, replicas=1, seed=0, substeps=4)
        a = run_sdde_em(model, base, np.array([1.0]))
        b = run_sdde_em(model, fine, np.array([1.0]))
        return abs(a.states[0, -1, 0] - b.states[0, -1, 0])

    g1, g2 = gap(0.1), gap(0.05)
    assert 1.5 <= g1 / g2 <= 2.7


def test_second_moment_bounded_in_regime():
    model = generate_quadratic_model(d=2, n=50, eigenvalues=[1.0, 2.0], seed=7)
    smooth = estimate_smoothness(model, 200, 3.0, 0)
    gamma = estimate_dissipativity(model, 1000, 3.0, 1).gamma_hat
    eta = min(0.05, gamma / (8.0 * smooth.l_hat**2) * 0.9)
    cfg = SddeConfig(eta=eta, delta=2 * eta, m=10, epochs=20, replicas=400, seed=9)
    ens = run_sdde_em(model, cfg, np.array([3.0, -3.0]))
    m2 = np.mean(np.sum(ens.states**2, axis=2), axis=0)
    assert np.all(m2 <= m2[0] + 1.0)


def test_minimizer_contraction_bound_small():
    # Appendix-style contraction envelope with hatted constants, module scale
    model = generate_quadratic_model(d=2, n=200, eigenvalues=[1.0, 2.0], seed=15)
    smooth = estimate_smoothness(model, 300, 3.0, 2)
    gamma = estimate_dissipativity(model, 2000, 3.0, 3).gamma_hat
    eta, delta, m = 0.002, 0.02, 10
    assert eta <= gamma / (3.0 * smooth.l_hat**2)
    cfg = SddeConfig(eta=eta, delta=delta, m=m, epochs=12, replicas=2000, seed=16)
    x0 = np.array([2.0, 1.0])
    ens = run_sdde_em(model, cfg, x0)
    rate = gamma - smooth.l_hat**2 * eta
    b = np.exp(-2.0 * rate * m * eta) + eta * smooth.l_hat**2 / rate
    assert b < 1.0
    tail = delta * model.d / (2.0 * rate * (1.0 - b))
    m2 = np.mean(np.sum(ens.states**2, axis=2), axis=0)
    for s in range(13):
        assert m2[s] <= 1.2 * (b**s * np.sum(x0**2) + tail)


# ---------------------------------------------------------------------------
# jacobian flow
# ---------------------------------------------------------------------------


def test_jacobian_flow_starts_at_direction():
    model = generate_quadratic_model(d=2, n=20, eigenvalues=[1.0, 2.0], seed=4)
    cfg = SddeConfig(eta=0.05, delta=0.1, m=2, epochs=2, replicas=3, seed=5)
    v = np.array([0.6, 0.8])
    jac = run_jacobian_flow(model, cfg, np.zeros(2), v)
    assert jac.times[0] == 0.0
    assert np.array_equal(jac.grads[:, 0, :], np.tile(v, (3, 1)))


def test_jacobian_flow_matrix_exponential_oracle():
    # n=1, delta=0: dG = -H G dt exactly; matches expm(-Ht) v
    rng = np.random.default_rng(8)
    g = rng.standard_normal((2, 2))
    qmat, r = np.linalg.qr(g)
    qmat = qmat * np.sign(np.diag(r))
    model = pure_quadratic([1.0, 3.0], qmat=qmat)
    h_mat = model.hessian(np.zeros(2))
    eta, m, kappa, epochs = 0.1, 5, 10, 10
    cfg = SddeConfig(eta=eta, delta=0.0, m=m, epochs=epochs, replicas=1, seed=6, substeps=kappa)
    v = np.array([1.0, 0.0])
    jac = run_jacobian_flow(model, cfg, np.ones(2), v, record_every=kappa)
    h = eta / kappa
    norm_h = np.linalg.norm(h_mat, 2)
    for k, t in enumerate(jac.times):
        oracle = scipy.linalg.expm(-h_mat * t) @ v
        tol = max(2.0 * h * t * norm_h * np.exp(norm_h * t), 1e-12)
        assert np.linalg.norm(jac.grads[0, k] - oracle) <= tol


def test_jacobian_flow_eighth_moment_decays():
    model = generate_quadratic_model(d=2, n=100, eigenvalues=[1.5, 2.5], seed=9)
    gamma = estimate_dissipativity(model, 1500, 3.0, 10).gamma_hat
    cfg = SddeConfig(eta=0.02, delta=0.04, m=5, epochs=20, replicas=500, seed=11)
    v = np.array([1.0, 0.0])
    jac = run_jacobian_flow(model, cfg, np.zeros(2), v, record_every=10)
    m8 = jac.eighth_moment()
    mask = m8 > 0
    slope = np.polyfit(jac.times[mask], np.log(m8[mask]), 1)[0]
    assert -slope >= gamma / 2.0


def test_jacobian_flow_rejects_non_unit_direction():
    model = pure_quadratic([1.0])
    cfg = SddeConfig(eta=0.1, delta=0.1, m=2, epochs=1, replicas=1, seed=0)
    with pytest.raises(InvalidInputError):
        run_jacobian_flow(model, cfg, np.zeros(1), np.array([2.0]))


# ---------------------------------------------------------------------------
# semigroup gradient
# ---------------------------------------------------------------------------


def test_semigroup_gradient_at_time_zero_is_test_function_derivative():
    model = generate_quadratic_model(d=3, n=20, eigenvalues=[1.0, 1.0, 2.0], seed=12)
    cfg = SddeConfig(eta=0.1, delta=0.2, m=2, epochs=1, replicas=50, seed=13)
    u = np.array([0.0, 1.0, 0.0])
    v = np.array([1.0, 0.0, 0.0])
    est, stderr = semigroup_gradient(model, cfg, np.zeros(3), v, linear_form(u), t=0.0)
    assert est == pytest.approx(float(u @ v), abs=1e-12)
    assert stderr == 0.0


def test_semigroup_gradient_ou_closed_form():
    # constant diffusion (n=1): CRN cancels the noise exactly, the estimate
    # equals the discrete decay product (1 - h)^{t/h}
    model = pure_quadratic([1.0])
    eta, m = 0.05, 10
    cfg = SddeConfig(eta=eta, delta=0.05, m=m, epochs=0, replicas=200, seed=14)
    t = 1.0
    est, stderr = semigroup_gradient(
        model, cfg, np.array([0.5]), np.array([1.0]), linear_form(np.array([1.0])), t=t
    )
    steps = int(round(t / eta))
    oracle = (1.0 - eta) ** steps
    assert abs(est - oracle) <= 1e-10
    assert stderr <= 1e-10
    assert abs(est - np.exp(-t)) <= abs(oracle - np.exp(-t)) + 1e-10


def test_semigroup_gradient_decay_bound_quadratic():
    model = generate_quadratic_model(d=1, n=100, eigenvalues=[1.0], seed=17)
    gamma = estimate_dissipativity(model, 1500, 3.0, 18).gamma_hat
    eta, m = 0.05, 10
    cfg = SddeConfig(eta=eta, delta=0.05, m=m, epochs=10, replicas=4000, seed=19)
    for t in (1.0, 2.0):
        est, stderr = semigroup_gradient(
            model, cfg, np.array([1.0]), np.array([1.0]), linear_form(np.array([1.0])), t=t
        )
        assert est <= np.exp(-gamma * t / 8.0) + 3.0 * stderr


def test_semigroup_gradient_misaligned_time_rejected():
    model = pure_quadratic([1.0])
    cfg = SddeConfig(eta=0.1, delta=0.1, m=2, epochs=1, replicas=10, seed=0)
    with pytest.raises(InvalidInputError):
        semigroup_gradient(
            model, cfg, np.zeros(1), np.array([1.0]), distance_to(np.zeros(1)), t=0.05
        )
