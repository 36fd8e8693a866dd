import numpy as np
import pytest

from svrgld.errors import InvalidConfigError, InvalidInputError
from svrgld.linalg import directional_derivative
from svrgld.models import (
    DiffusionSpec,
    LogisticModel,
    QuadraticAlternateModel,
    generate_logistic_model,
    generate_quadratic_model,
    load_model,
    minimizer,
    q_factor,
    q_factor_batch,
    save_model,
    sigma,
)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def test_quadratic_d1_gradient_unrolls_definition():
    m = generate_quadratic_model(d=1, n=1, eigenvalues=[2.0], seed=5)
    a1 = m.samples[0, 0]
    x = np.array([1.7])
    assert np.allclose(m.component_gradient(0, x), (2.0 + a1) * x)


def test_quadratic_mean_perturbation_concentrates():
    # Chebyshev at 1%: |mean_i Qt diag(a_i) Qt^T v| <= sqrt(100 d / n)
    d, n = 3, 100_000
    m = generate_quadratic_model(d=d, n=n, eigenvalues=[1.0, 2.0, 3.0], seed=31)
    v = np.array([1.0, 0.0, 0.0])
    dev = (m.qmat * np.mean(m.samples, axis=0)) @ (m.qmat.T @ v)
    assert np.linalg.norm(dev) <= np.sqrt(100.0 * d / n)


def test_quadratic_generation_deterministic():
    a = generate_quadratic_model(4, 50, [1.0, 1.0, 2.0, 2.0], seed=9)
    b = generate_quadratic_model(4, 50, [1.0, 1.0, 2.0, 2.0], seed=9)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.qmat, b.qmat)


def test_quadratic_rejects_nonpositive_eigenvalue():
    with pytest.raises(InvalidInputError):
        generate_quadratic_model(2, 10, [1.0, 0.0], seed=0)


def test_logistic_label_symmetry_at_zero_param():
    n = 4000
    m = generate_logistic_model(d=3, n=n, true_param=[0.0, 0.0, 0.0], lam=0.1, seed=77)
    assert abs(np.mean(m.labels) - 0.5) <= 5.0 / np.sqrt(n)


def test_logistic_hessian_lower_bound(small_logistic, rng):
    lam = small_logistic.lam
    for _ in range(10):
        x = rng.standard_normal(3)
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        h = small_logistic.hessian(x)
        assert v @ h @ v >= lam * (1.0 - 1e-12)


def test_logistic_single_sample_gradient():
    m = LogisticModel(
        features=np.array([[1.0, 0.0]]),
        labels=np.array([1.0]),
        lam=1.0,
        true_param=np.zeros(2),
        seed=0,
    )
    g = m.component_gradient(0, np.zeros(2))
    assert np.allclose(g, [-0.5, 0.0])


def test_logistic_rejects_nonpositive_lambda():
    with pytest.raises(InvalidInputError):
        generate_logistic_model(2, 10, [0.0, 0.0], lam=0.0, seed=0)


# ---------------------------------------------------------------------------
# gradients and batch APIs
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("fixture", ["small_quadratic", "small_logistic"])
def test_full_gradient_matches_component_mean(fixture, rng, request):
    model = request.getfixturevalue(fixture)
    for _ in range(5):
        x = rng.standard_normal(model.d) * 3.0
        mean = np.mean(model.component_gradients(x), axis=0)
        err = np.linalg.norm(model.full_gradient(x) - mean)
        assert err <= 1e-12 * (1.0 + np.linalg.norm(x))


@pytest.mark.parametrize("fixture", ["small_quadratic", "small_logistic"])
def test_batch_apis_agree_with_scalar(fixture, rng, request):
    model = request.getfixturevalue(fixture)
    xs = rng.standard_normal((7, model.d))
    ys = rng.standard_normal((7, model.d))
    idx = rng.integers(0, model.n, size=(7, 2))
    grads = model.full_gradient_batch(xs)
    sig = model.sigma_batch(xs, ys)
    hess = model.hessian_batch(xs)
    rows = np.broadcast_to(xs[:, None, :], (7, 2, model.d))
    comp = model.component_gradient_at(idx, rows)
    for r in range(7):
        assert np.allclose(grads[r], model.full_gradient(xs[r]), atol=1e-12, rtol=1e-10)
        assert np.allclose(sig[r], model.sigma_matrix(xs[r], ys[r]), atol=1e-11)
        assert np.allclose(hess[r], model.hessian(xs[r]), atol=1e-12)
        for b in range(2):
            assert np.allclose(
                comp[r, b], model.component_gradient(int(idx[r, b]), xs[r]), atol=1e-12
            )


@pytest.mark.parametrize("fixture", ["small_quadratic", "small_logistic"])
def test_hessian_matches_finite_difference(fixture, rng, request):
    model = request.getfixturevalue(fixture)
    x = rng.standard_normal(model.d) * 0.5
    h = model.hessian(x)
    for j in range(model.d):
        v = np.zeros(model.d)
        v[j] = 1.0
        col = directional_derivative(model.full_gradient, x, (v,), 1)
        assert np.linalg.norm(col - h @ v) <= 1e-6 * (1.0 + np.linalg.norm(h))


# ---------------------------------------------------------------------------
# sigma
# ---------------------------------------------------------------------------


def test_sigma_vanishes_at_equal_points(small_quadratic):
    x = np.array([1.0, -2.0, 0.5])
    s = sigma(small_quadratic, x, x)
    assert np.array_equal(s.entries, np.zeros((3, 3)))


def test_sigma_hand_enumeration_oracle():
    # n=2, d=1, gradient diffs 2 and 4 -> (4+16)/2 - 9 = 1
    m = QuadraticAlternateModel(
        qmat=np.array([[1.0]]),
        dvec=np.array([3.0]),
        samples=np.array([[-1.0], [1.0]]),  # diffs (3-1)*1, (3+1)*1 at x-y=1
        seed=0,
    )
    s = sigma(m, np.array([1.0]), np.array([0.0]))
    assert np.allclose(s.entries, [[1.0]])


def test_sigma_symmetric_in_arguments(small_logistic, rng):
    x = rng.standard_normal(3)
    y = rng.standard_normal(3)
    a = sigma(small_logistic, x, y).entries
    b = sigma(small_logistic, y, x).entries
    assert np.allclose(a, a.T, atol=1e-14)
    assert np.allclose(a, b, atol=1e-12)


def test_sigma_trace_bound(small_quadratic, rng):
    # trace(sigma) <= mean |g_i(x) - g_i(y)|^2 <= Lhat^2 |x-y|^2
    x = rng.standard_normal(3)
    y = rng.standard_normal(3)
    diffs = small_quadratic.component_gradients(x) - small_quadratic.component_gradients(y)
    mean_sq = float(np.mean(np.sum(diffs**2, axis=1)))
    tr = float(np.trace(sigma(small_quadratic, x, y).entries))
    assert tr <= mean_sq * (1.0 + 1e-12)
    lhat = small_quadratic.smoothness_hint
    assert mean_sq <= lhat**2 * np.sum((x - y) ** 2) * (1.0 + 1e-12)


def test_sigma_closed_form_orientation():
    # Open-question resolution: the rotated-diagonal closed form uses
    # Qt^T (x - y); the printed Qt (x - y) orientation must fit strictly worse.
    m = generate_quadratic_model(d=4, n=100_000, eigenvalues=[1.0, 2.0, 3.0, 4.0], seed=13)
    rng = np.random.default_rng(3)
    bound = np.sqrt(600.0 * 4**6 / m.n)
    for _ in range(3):
        x = rng.standard_normal(4)
        y = x + 0.5 * rng.standard_normal(4)
        enum = m.sigma_matrix(x, y)
        good = np.linalg.norm(enum - m.sigma_closed_form(x, y), "fro")
        u_printed = m.qmat @ (x - y)
        printed = np.linalg.norm(
            enum - (m.qmat * u_printed**2) @ m.qmat.T, "fro"
        )
        assert good <= bound
        assert good < 0.25 * printed


def test_logistic_monotone_gradient(small_logistic, rng):
    lam = small_logistic.lam
    for _ in range(8):
        x = rng.standard_normal(3)
        y = rng.standard_normal(3)
        gap = small_logistic.full_gradient(x) - small_logistic.full_gradient(y)
        assert gap @ (x - y) >= lam * np.sum((x - y) ** 2) * (1.0 - 1e-10)


# ---------------------------------------------------------------------------
# q_factor
# ---------------------------------------------------------------------------


def test_q_factor_at_equal_points_is_scaled_identity(small_quadratic):
    spec = DiffusionSpec(eta=0.01, delta=0.09, model=small_quadratic)
    x = np.array([0.4, 0.0, -1.0])
    q = q_factor(spec, x, x)
    assert np.allclose(q.entries, 3.0 * np.eye(3), atol=1e-12)


def test_q_factor_squaring_oracle(small_logistic, rng):
    spec = DiffusionSpec(eta=0.02, delta=0.5, model=small_logistic)
    x = rng.standard_normal(3)
    y = rng.standard_normal(3)
    s = sigma(small_logistic, x, y)
    q = q_factor(spec, x, y).entries
    err = np.linalg.norm(q @ q - s.entries - spec.ridge * np.eye(3), "fro")
    assert err <= 1e-10 * (1.0 + np.linalg.norm(s.entries) + spec.ridge * np.sqrt(3))


def test_q_factor_closed_form_large_n():
    m = generate_quadratic_model(d=3, n=100_000, eigenvalues=[1.0, 2.0, 3.0], seed=17)
    spec = DiffusionSpec(eta=0.01, delta=0.04, model=m)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(3)
    y = x + rng.standard_normal(3)
    q = q_factor(spec, x, y).entries
    cf = m.q_closed_form(x, y, spec.ridge)
    # residual propagates through the square root: |x-y| O(1), n = 1e5
    assert np.linalg.norm(q - cf, "fro") <= 0.05


def test_q_factor_hs_growth_bound(small_quadratic, rng):
    spec = DiffusionSpec(eta=0.01, delta=0.25, model=small_quadratic)
    lhat = small_quadratic.smoothness_hint
    for _ in range(5):
        x = rng.standard_normal(3)
        y = rng.standard_normal(3)
        q = q_factor(spec, x, y).entries
        bound = lhat * np.linalg.norm(x - y) + np.sqrt(spec.delta * 3 / spec.eta)
        assert np.linalg.norm(q, "fro") <= bound * (1.0 + 1e-12)


def test_q_factor_batch_matches_scalar(small_logistic, rng):
    xs = rng.standard_normal((5, 3))
    ys = rng.standard_normal((5, 3))
    spec = DiffusionSpec(eta=0.1, delta=0.4, model=small_logistic)
    batch = q_factor_batch(small_logistic, 0.1, 0.4, xs, ys)
    for r in range(5):
        ref = q_factor(spec, xs[r], ys[r]).entries
        assert np.linalg.norm(batch[r] - ref, "fro") <= 1e-8 * (1.0 + np.linalg.norm(ref))


# ---------------------------------------------------------------------------
# DiffusionSpec regime
# ---------------------------------------------------------------------------


def test_diffusion_spec_enforces_regime(small_quadratic):
    with pytest.raises(InvalidConfigError):
        DiffusionSpec(eta=0.5, delta=0.1, model=small_quadratic)
    with pytest.raises(InvalidConfigError):
        DiffusionSpec(eta=0.5, delta=1.5, model=small_quadratic)
    spec = DiffusionSpec(eta=0.5, delta=0.0, model=small_quadratic)  # noiseless limit
    assert spec.ridge == 0.0


# ---------------------------------------------------------------------------
# minimizer
# ---------------------------------------------------------------------------


def test_minimizer_quadratic_is_origin(small_quadratic):
    w = minimizer(small_quadratic)
    assert np.array_equal(w, np.zeros(3))
    assert np.linalg.norm(small_quadratic.full_gradient(w)) <= 1e-10


def test_minimizer_logistic_strong_ridge_bound():
    m = generate_logistic_model(d=3, n=100, true_param=[1.0, -1.0, 0.5], lam=1e3, seed=23)
    w = minimizer(m)
    assert np.linalg.norm(m.full_gradient(w)) <= 1e-10
    # first-order condition: lam |w| <= max_i |a_i|
    assert np.linalg.norm(w) <= np.max(np.linalg.norm(m.features, axis=1)) / m.lam


def test_minimizer_logistic_gradient_contract(small_logistic):
    w = minimizer(small_logistic)
    assert np.linalg.norm(small_logistic.full_gradient(w)) <= 1e-10


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("fixture", ["small_quadratic", "small_logistic"])
def test_binary_round_trip_bit_exact(fixture, tmp_path, request):
    model = request.getfixturevalue(fixture)
    p1 = tmp_path / "m1.bin"
    p2 = tmp_path / "m2.bin"
    save_model(model, p1, mode="binary")
    loaded = load_model(p1)
    save_model(loaded, p2, mode="binary")
    assert p1.read_bytes() == p2.read_bytes()
    if isinstance(model, QuadraticAlternateModel):
        assert np.array_equal(model.samples, loaded.samples)
        assert np.array_equal(model.qmat, loaded.qmat)
    else:
        assert np.array_equal(model.features, loaded.features)
        assert np.array_equal(model.labels, loaded.labels)
        assert loaded.lam == model.lam


def test_text_round_trip_exact_values(small_quadratic, tmp_path):
    p = tmp_path / "m.txt"
    save_model(small_quadratic, p, mode="text")
    loaded = load_model(p)
    assert np.array_equal(loaded.samples, small_quadratic.samples)
    assert np.array_equal(loaded.qmat, small_quadratic.qmat)
