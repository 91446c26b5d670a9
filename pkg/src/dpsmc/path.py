"""Gaussian-convolution diffusion path between N(0, sigma_sq I) and the target.

A point on the path at time ``t`` is ``x = sqrt(1 - lam) z + sqrt(lam) y`` with
``z ~ N(0, sigma_sq I)`` and ``y`` drawn from the target, where ``lam = schedule(t)``.
The conditional law of ``y`` given ``x`` (the posterior) is the sequence of auxiliary
targets tracked by the particle clouds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .targets import GaussianMixture, IsotropicGaussian

LAM_EPS = 1e-12


def cosine_lambda(t):
    """The cosine schedule sin^2(pi t / 2)."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    return np.sin(0.5 * np.pi * t) ** 2


def _cosine_derivative(t):
    return 0.5 * np.pi * np.sin(np.pi * np.asarray(t, dtype=float))


cosine_lambda.derivative = _cosine_derivative


def linear_lambda(t):
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    return t.copy() if t.ndim else float(t)


linear_lambda.derivative = lambda t: np.ones_like(np.asarray(t, dtype=float))

SCHEDULES = {"cosine": cosine_lambda, "linear": linear_lambda}


def get_schedule(name):
    try:
        return SCHEDULES[name]
    except KeyError:
        raise ValueError(f"unknown schedule {name!r}; choose from {sorted(SCHEDULES)}") from None


def schedule_derivative(schedule, t, step=1e-6):
    """d lambda / dt, analytic when the schedule provides it, else a centred difference."""
    deriv = getattr(schedule, "derivative", None)
    if deriv is not None:
        return deriv(t)
    t = np.asarray(t, dtype=float)
    lo = np.clip(t - step, 0.0, 1.0)
    hi = np.clip(t + step, 0.0, 1.0)
    return (schedule(hi) - schedule(lo)) / (hi - lo)


def sigma_from_target(second_moment, dim):
    """Base variance that keeps E||X_t||^2 constant along the path."""
    if not second_moment > 0:
        raise ValueError("second moment must be positive")
    return second_moment / dim


def select_T(xi, n_steps, second_moment, dim):
    """Time horizon xi * (K * M2 / d)^(1/3)."""
    if min(xi, n_steps, second_moment, dim) <= 0:
        raise ValueError("all arguments must be positive")
    return xi * (n_steps * second_moment / dim) ** (1.0 / 3.0)


@dataclass(frozen=True)
class CvSchedule:
    """Weighting between the denoising and target score identities.

    ``kind`` is ``"scalar"`` (float), ``"diagonal"`` (length-d vector) or
    ``"matrix"`` (d x d). The combined test function is ``s2 + A (s1 - s2)``.
    """

    kind: str
    value: object

    def __post_init__(self):
        if self.kind not in ("scalar", "diagonal", "matrix"):
            raise ValueError(f"unknown CV kind {self.kind!r}")

    def apply(self, s1, s2):
        diff = s1 - s2
        if self.kind == "matrix":
            return s2 + diff @ np.asarray(self.value).T
        return s2 + np.asarray(self.value) * diff

    def as_matrix(self, dim):
        if self.kind == "matrix":
            return np.asarray(self.value, dtype=float)
        return np.diag(np.broadcast_to(np.asarray(self.value, dtype=float), (dim,)))

    def trace_per_dim(self, dim):
        return float(np.trace(self.as_matrix(dim)) / dim)

    @classmethod
    def dsi(cls):
        return cls("scalar", 1.0)

    @classmethod
    def tsi(cls):
        return cls("scalar", 0.0)

    @classmethod
    def msi(cls, lam):
        return cls("scalar", 1.0 - lam)


@dataclass(frozen=True)
class DiffusionPath:
    """Diffusion path with base N(0, sigma_sq I), time horizon and step count.

    Parameters
    ----------
    target : Target
    sigma_sq : float
    horizon : float
        Total Langevin time T; the step size is T / n_steps.
    n_steps : int
    schedule : callable
        Map from normalised time in [0, 1] to lambda in [0, 1].
    """

    target: object
    sigma_sq: float
    horizon: float
    n_steps: int
    schedule: object = cosine_lambda

    def __post_init__(self):
        if not self.sigma_sq > 0 or not self.horizon > 0 or self.n_steps < 1:
            raise ValueError("sigma_sq, horizon and n_steps must be positive")

    @classmethod
    def for_target(cls, target, n_steps, xi=1.0, horizon=None, schedule="cosine"):
        """Path with the second-moment-matching base and cube-root horizon rule."""
        sigma_sq = sigma_from_target(target.second_moment, target.dim)
        if horizon is None:
            horizon = select_T(xi, n_steps, target.second_moment, target.dim)
        if isinstance(schedule, str):
            schedule = get_schedule(schedule)
        return cls(target, sigma_sq, float(horizon), int(n_steps), schedule)

    @property
    def dim(self):
        return self.target.dim

    @property
    def step_size(self):
        return self.horizon / self.n_steps

    def lam(self, t):
        return self.schedule(t)

    def lam_at(self, k):
        return float(self.schedule(k / self.n_steps))

    # -- posterior over the clean variable -------------------------------------------

    def gaussian_factor(self, lam, x, y):
        """log N(sqrt(lam) y; x, sigma_sq (1 - lam) I), normalisation included."""
        lam = float(np.clip(lam, 0.0, 1.0 - LAM_EPS))
        var = self.sigma_sq * (1.0 - lam)
        resid = np.sqrt(lam) * y - x
        return -0.5 * np.sum(resid**2, axis=-1) / var - 0.5 * self.dim * np.log(2 * np.pi * var)

    def gaussian_factor_grad(self, lam, x, y):
        lam = float(np.clip(lam, 0.0, 1.0 - LAM_EPS))
        return np.sqrt(lam) * (x - np.sqrt(lam) * y) / (self.sigma_sq * (1.0 - lam))

    def posterior_logdensity_unnorm(self, t, x, y):
        """Unnormalised log posterior of the clean variable ``y`` given ``x`` at time ``t``."""
        lam = self._interior_lam(t, allow_zero=True)
        var = self.sigma_sq * (1.0 - lam)
        resid = x - np.sqrt(lam) * y
        return -0.5 * np.sum(resid**2, axis=-1) / var + self.target.log_density_unnorm(y)

    def posterior_grad(self, t, x, y):
        lam = self._interior_lam(t, allow_zero=True)
        return self.gaussian_factor_grad(lam, x, y) + self.target.grad_log_density(y)

    def _interior_lam(self, t, allow_zero=False):
        lam = float(self.schedule(t))
        if lam >= 1.0 or (not allow_zero and lam <= 0.0):
            raise ValueError(f"lambda={lam} is outside the open interval where this is defined")
        return float(np.clip(lam, 0.0 if allow_zero else LAM_EPS, 1.0 - LAM_EPS))

    # -- score identities -------------------------------------------------------------

    def denoising_score(self, lam, x, y):
        return (np.sqrt(lam) * y - x) / (self.sigma_sq * (1.0 - lam))

    def target_score(self, lam, grad_y):
        return grad_y / np.sqrt(lam)

    def score_test_fn(self, t, x, y, cv, grad_y=None):
        """Control-variate blend of the denoising and target score identities."""
        lam = self._interior_lam(t)
        if grad_y is None:
            grad_y = self.target.grad_log_density(y)
        return cv.apply(self.denoising_score(lam, x, y), self.target_score(lam, grad_y))


# -- exact oracles --------------------------------------------------------------------


def gaussian_marginal_score(path, t, x, mean, variance):
    """Score of the path marginal when the target is N(mean, variance I)."""
    lam = float(path.schedule(t))
    return -(np.asarray(x) - np.sqrt(lam) * np.asarray(mean)) / (lam * variance + (1.0 - lam) * path.sigma_sq)


def exact_path_sample(path, t, target, n, rng):
    """Draw ``(x, y)`` with ``y`` from the target and ``x`` the noisy interpolant."""
    if not target.has_sampler:
        raise NotImplementedError(f"target {target.name!r} has no exact sampler")
    lam = float(path.schedule(t))
    y = target.sample(n, rng)
    z = np.sqrt(path.sigma_sq) * rng.standard_normal(y.shape)
    return np.sqrt(1.0 - lam) * z + np.sqrt(lam) * y, y


def _mixture_parts(target):
    if isinstance(target, IsotropicGaussian):
        return np.ones(1), target.mean[None, :], np.full((1, target.dim), target.variance)
    if isinstance(target, GaussianMixture):
        return target.weights, target.means, target.variances
    raise NotImplementedError("closed-form posterior needs a Gaussian or Gaussian-mixture target")


def _posterior_components(path, lam, x, target):
    weights, means, variances = _mixture_parts(target)
    noise = path.sigma_sq * (1.0 - lam)
    marg_var = lam * variances + noise
    diff = x[..., None, :] - np.sqrt(lam) * means
    log_resp = np.log(weights) - 0.5 * np.sum(diff**2 / marg_var + np.log(2 * np.pi * marg_var), axis=-1)
    return log_resp, diff, marg_var, means, variances


def mixture_marginal_score(path, t, x, target):
    """Exact path-marginal score for Gaussian or diagonal Gaussian-mixture targets."""
    lam = float(path.schedule(t))
    log_resp, diff, marg_var, _, _ = _posterior_components(path, lam, np.asarray(x, dtype=float), target)
    resp = np.exp(log_resp - logsumexp(log_resp, axis=-1, keepdims=True))
    return -np.sum(resp[..., None] * diff / marg_var, axis=-2)


def exact_posterior_sample(path, t, x, target, n_particles, rng):
    """Exact draws from the posterior of ``y`` given each row of ``x``.

    Returns an array of shape ``(len(x), n_particles, d)``. Each mixture component is
    conjugate to the Gaussian factor, so the posterior is again a mixture.
    """
    lam = float(path.schedule(t))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    log_resp, _, _, means, variances = _posterior_components(path, lam, x, target)
    resp = np.exp(log_resp - logsumexp(log_resp, axis=-1, keepdims=True))
    cum = np.cumsum(resp, axis=-1)
    u = rng.uniform(size=(x.shape[0], n_particles))
    comp = np.minimum((u[..., None] > cum[:, None, :]).sum(-1), len(resp[0]) - 1)
    noise = path.sigma_sq * (1.0 - lam)
    prec = lam / noise + 1.0 / variances[comp]
    mean = (np.sqrt(lam) * x[:, None, :] / noise + means[comp] / variances[comp]) / prec
    return mean + rng.standard_normal(mean.shape) / np.sqrt(prec)


# -- action bound ---------------------------------------------------------------------


def action_bound_integrand(path, t):
    """Integrand of the action upper bound for the path's schedule."""
    lam = np.asarray(path.schedule(t), dtype=float)
    if np.any((lam <= 0) | (lam >= 1)):
        raise ValueError("integrand is singular at the endpoints")
    dlam = schedule_derivative(path.schedule, t)
    d = path.dim
    return (path.sigma_sq * d / (4 * (1 - lam)) + path.target.second_moment / (4 * lam)) * dlam**2


def action_bound(path, n_points=10_000):
    """Midpoint-rule quadrature of the integrand over (0, 1)."""
    t = (np.arange(n_points) + 0.5) / n_points
    return float(np.mean(action_bound_integrand(path, t)))
