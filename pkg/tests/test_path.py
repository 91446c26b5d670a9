import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpsmc.path import (
    CvSchedule,
    DiffusionPath,
    action_bound,
    action_bound_integrand,
    cosine_lambda,
    exact_path_sample,
    exact_posterior_sample,
    gaussian_marginal_score,
    linear_lambda,
    mixture_marginal_score,
    select_T,
    sigma_from_target,
)
from dpsmc.targets import make_bimodal, make_funnel, make_gaussian, make_gmm40


def _gauss_path(d=3, s2=0.6, sigma_sq=1.3, mean=None):
    mean = np.linspace(-1, 1, d) if mean is None else mean
    target = make_gaussian(mean, s2)
    return DiffusionPath(target, sigma_sq, 10.0, 100), target


def test_cosine_values():
    assert cosine_lambda(0.0) == 0.0
    assert cosine_lambda(0.5) == pytest.approx(0.5)
    assert cosine_lambda(1 / 3) == pytest.approx(0.25)
    assert cosine_lambda(1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine_lambda(1.1)


@pytest.mark.parametrize("schedule", [cosine_lambda, linear_lambda])
def test_schedule_monotone(schedule):
    lam = schedule(np.linspace(0, 1, 1000))
    assert lam[0] == 0 and lam[-1] == pytest.approx(1)
    assert np.all(np.diff(lam) >= 0)


def test_sigma_and_T():
    assert np.sqrt(sigma_from_target(268.98, 2)) == pytest.approx(11.60, abs=5e-3)
    assert np.sqrt(sigma_from_target(7.52, 2)) == pytest.approx(1.94, abs=5e-3)
    assert sigma_from_target(5.0, 5) == 1.0
    with pytest.raises(ValueError):
        sigma_from_target(0.0, 2)
    assert select_T(2**3.5, 1024, 134.49 * 2, 2) == pytest.approx(584.25, abs=0.5)
    assert select_T(2**-0.1, 1024, 43.34, 10) == pytest.approx(15.33, abs=0.05)
    assert select_T(1, 1, 1, 1) == 1


def test_step_size():
    path, _ = _gauss_path()
    assert path.step_size == pytest.approx(0.1)
    with pytest.raises(ValueError):
        DiffusionPath(path.target, 1.0, 1.0, 0)


def test_posterior_gaussian_closed_form():
    path, target = _gauss_path()
    rs = np.random.default_rng(0)
    t = 0.4
    lam = cosine_lambda(t)
    prec = lam / (path.sigma_sq * (1 - lam)) + 1 / target.variance
    for _ in range(10):
        x, y1, y2 = rs.standard_normal((3, path.dim))
        mean = (np.sqrt(lam) * x / (path.sigma_sq * (1 - lam)) + target.mean / target.variance) / prec
        # differences in y remove every y-independent constant
        got = path.posterior_logdensity_unnorm(t, x, y1) - path.posterior_logdensity_unnorm(t, x, y2)
        want = -0.5 * prec * (np.sum((y1 - mean) ** 2) - np.sum((y2 - mean) ** 2))
        assert got == pytest.approx(want, rel=1e-10, abs=1e-10)
        np.testing.assert_allclose(path.posterior_grad(t, x, y1), -prec * (y1 - mean), rtol=1e-10, atol=1e-12)


def test_posterior_endpoint_cases():
    path, target = _gauss_path()
    rs = np.random.default_rng(1)
    x, y = rs.standard_normal((2, path.dim))
    diff = path.posterior_logdensity_unnorm(0.0, x, y) - path.posterior_logdensity_unnorm(0.0, x, 2 * y)
    assert diff == pytest.approx(target.log_density_unnorm(y) - target.log_density_unnorm(2 * y))
    np.testing.assert_allclose(path.posterior_grad(0.0, x, y), target.grad_log_density(y))
    lam = cosine_lambda(0.3)
    assert path.posterior_logdensity_unnorm(0.3, x, x / np.sqrt(lam)) == pytest.approx(target.log_density_unnorm(x / np.sqrt(lam)))
    with pytest.raises(ValueError):
        path.posterior_logdensity_unnorm(1.0, x, y)


def test_posterior_grad_finite_differences():
    target = make_gmm40(3, seed=1)
    path = DiffusionPath.for_target(target, 64)
    rs = np.random.default_rng(2)
    for _ in range(100):
        t = rs.uniform(0.01, 0.99)
        x = 10 * rs.standard_normal(3)
        y = 10 * rs.standard_normal(3)
        g = path.posterior_grad(t, x, y)
        step = 1e-5 * (1 + np.linalg.norm(y))
        fd = np.array(
            [
                (path.posterior_logdensity_unnorm(t, x, y + step * e) - path.posterior_logdensity_unnorm(t, x, y - step * e)) / (2 * step)
                for e in np.eye(3)
            ]
        )
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1.0)


def test_score_test_fn_endpoints():
    path, target = _gauss_path()
    rs = np.random.default_rng(3)
    x, y = rs.standard_normal((2, path.dim))
    t = 0.6
    lam = cosine_lambda(t)
    s1 = (np.sqrt(lam) * y - x) / (path.sigma_sq * (1 - lam))
    s2 = target.grad_log_density(y) / np.sqrt(lam)
    np.testing.assert_allclose(path.score_test_fn(t, x, y, CvSchedule.dsi()), s1)
    np.testing.assert_allclose(path.score_test_fn(t, x, y, CvSchedule.tsi()), s2)
    np.testing.assert_allclose(path.score_test_fn(t, x, y, CvSchedule.msi(lam)), (1 - lam) * s1 + lam * s2)
    a = np.array([0.2, 0.5, 0.9])
    np.testing.assert_allclose(path.score_test_fn(t, x, y, CvSchedule("diagonal", a)), a * s1 + (1 - a) * s2)
    m = rs.standard_normal((3, 3))
    np.testing.assert_allclose(path.score_test_fn(t, x, y, CvSchedule("matrix", m)), m @ s1 + (np.eye(3) - m) @ s2)
    with pytest.raises(ValueError):
        path.score_test_fn(0.0, x, y, CvSchedule.dsi())


@pytest.mark.parametrize("t", [0.2, 0.5, 0.85])
def test_score_identities_match_marginal_score(t):
    path, target = _gauss_path(d=2)
    rs = np.random.default_rng(4)
    x = np.array([[0.7, -1.2]])
    ref = gaussian_marginal_score(path, t, x[0], target.mean, target.variance)
    ys = exact_posterior_sample(path, t, x, target, 100_000, rs)[0]
    grad = target.grad_log_density(ys)
    lam = cosine_lambda(t)
    for cv in (CvSchedule.dsi(), CvSchedule.tsi(), CvSchedule.msi(lam), CvSchedule("matrix", [[0.3, 0.1], [0.1, 0.6]])):
        vals = path.score_test_fn(t, x[0], ys, cv, grad)
        se = vals.std(axis=0) / np.sqrt(len(vals))
        assert np.all(np.abs(vals.mean(axis=0) - ref) < 3 * se + 1e-12)


def test_gaussian_marginal_score_cases():
    path, _ = _gauss_path(d=2, sigma_sq=2.0)
    x = np.array([1.0, -3.0])
    m = np.array([0.5, 0.5])
    np.testing.assert_allclose(gaussian_marginal_score(path, 0.0, x, m, 0.7), -x / 2.0)
    np.testing.assert_allclose(gaussian_marginal_score(path, 1.0, x, m, 0.7), -(x - m) / 0.7)
    np.testing.assert_allclose(gaussian_marginal_score(path, 0.5, x, m, 2.0), -(x - m / np.sqrt(2)) / 2.0)


def test_mixture_marginal_score_matches_gaussian_and_fd():
    path, target = _gauss_path(d=2)
    x = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_allclose(
        mixture_marginal_score(path, 0.3, x, target), gaussian_marginal_score(path, 0.3, x, target.mean, target.variance)
    )
    bim = make_bimodal()
    bpath = DiffusionPath.for_target(bim, 10)
    t = 0.4
    lam = cosine_lambda(t)
    # marginal density of the bimodal mixture is itself a mixture; difference its log
    marg_var = lam * bim.variances + bpath.sigma_sq * (1 - lam)

    def logm(p):
        diff = p - np.sqrt(lam) * bim.means
        return np.log(np.sum(bim.weights * np.exp(-0.5 * np.sum(diff**2 / marg_var + np.log(2 * np.pi * marg_var), axis=1))))

    for p in x:
        fd = np.array([(logm(p + 1e-6 * e) - logm(p - 1e-6 * e)) / 2e-6 for e in np.eye(2)])
        np.testing.assert_allclose(mixture_marginal_score(bpath, t, p, bim), fd, rtol=1e-6)


def test_exact_posterior_sampler_moments_on_mixture():
    bim = make_bimodal()
    path = DiffusionPath.for_target(bim, 10)
    t = 0.5
    rs = np.random.default_rng(6)
    x = np.array([[0.3, 0.2]])
    ys = exact_posterior_sample(path, t, x, bim, 200_000, rs)[0]
    # importance-reweighted prior draws give the same posterior mean
    prior = bim.sample(400_000, rs)
    logw = path.gaussian_factor(cosine_lambda(t), x[0], prior)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    is_mean = w @ prior
    ess = 1 / np.sum(w**2)
    tol = 4 * (ys.std(0) / np.sqrt(len(ys)) + prior.std(0) / np.sqrt(ess))
    assert np.all(np.abs(ys.mean(0) - is_mean) < tol)


def test_exact_path_sample():
    target = make_gaussian(np.array([1.0, 2.0]), 0.5)
    path = DiffusionPath.for_target(target, 10)
    rs = np.random.default_rng(7)
    x, y = exact_path_sample(path, 1.0, target, 10, rs)
    np.testing.assert_allclose(x, y)
    x, _ = exact_path_sample(path, 0.0, target, 100_000, rs)
    assert np.all(np.abs(x.var(0) - path.sigma_sq) < 0.02 * path.sigma_sq)
    with pytest.raises(NotImplementedError):
        from dpsmc.targets import Target

        exact_path_sample(path, 0.5, Target(), 1, rs)


@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
def test_second_moment_conserved(t):
    target = make_funnel(1.0)
    path = DiffusionPath.for_target(target, 10)
    x, _ = exact_path_sample(path, t, target, 400_000, np.random.default_rng(8))
    sq = np.sum(x**2, axis=1)
    assert abs(sq.mean() - target.second_moment) < 3 * sq.std() / np.sqrt(sq.size)


def test_fisher_identity():
    # E_mu E_rho <grad log pi(Y), grad log rho(Y)> = E_pi ||grad log pi||^2 = d / s^2
    path, target = _gauss_path(d=2, s2=0.5)
    t = 0.5
    rs = np.random.default_rng(9)
    x, _ = exact_path_sample(path, t, target, 20_000, rs)
    ys = exact_posterior_sample(path, t, x, target, 4, rs)
    g = target.grad_log_density(ys)
    vals = np.sum(g * path.posterior_grad(t, x[:, None, :], ys), axis=-1).ravel()
    assert abs(vals.mean() - 2 / 0.5) < 3 * vals.std() / np.sqrt(vals.size)


def test_action_bound_cosine():
    for m2, d in [(10.0, 2), (268.98, 2), (43.34, 10)]:
        target = make_gaussian(np.zeros(d), m2 / d)
        path = DiffusionPath.for_target(target, 10)
        assert action_bound(path) == pytest.approx(m2 * np.pi**2 / 4, rel=1e-3)
        t = np.linspace(0.05, 0.95, 7)
        np.testing.assert_allclose(action_bound_integrand(path, t), m2 * np.pi**2 / 4, rtol=1e-6)


def test_action_bound_linear_diverges():
    target = make_gaussian(np.zeros(2), 1.0)
    path = DiffusionPath.for_target(target, 10, schedule="linear")
    vals = [action_bound(path, n) for n in (10**2, 10**4, 10**6)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] - vals[1] > 0.5 * (vals[1] - vals[0])


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.38, 0.38), st.floats(-0.9, 0.9))
def test_cosine_minimises_bound(c, a):
    target = make_gaussian(np.zeros(2), 3.0)
    base = DiffusionPath.for_target(target, 10)
    ref = action_bound(base)

    def bumped(t, c=c):
        return np.sin(0.5 * np.pi * t) ** 2 + c * np.sin(2 * np.pi * t) * t * (1 - t)

    def warped(t, a=a):
        return np.sin(0.5 * np.pi * (t + a * np.sin(np.pi * t) / np.pi)) ** 2

    for sched in (bumped, warped):
        assert np.all(np.diff(sched(np.linspace(0, 1, 2001))) >= 0)
        path = DiffusionPath(target, base.sigma_sq, base.horizon, base.n_steps, sched)
        assert action_bound(path) >= ref * (1 - 1e-6)
