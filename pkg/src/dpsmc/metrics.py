"""Sample-quality metrics and the score-estimator MSE experiment."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import log_expit

from .estimation import ScoreCovEstimate, build_cv, estimate_score_cov, estimate_scores
from .path import exact_path_sample, exact_posterior_sample, mixture_marginal_score

ESTIMATORS = ("dsi", "tsi", "msi", "scv", "dcv", "mcv")
_CV_FOR = {"dsi": "dsi", "tsi": "tsi", "msi": "msi", "scv": "scalar", "dcv": "diagonal", "mcv": "matrix"}


@dataclass
class MetricReport:
    metric: str
    value: float
    config: dict = field(default_factory=dict)
    sizes: tuple = ()
    seed: int = None
    converged: bool = True


@dataclass
class SinkhornResult:
    value: float
    converged: bool
    iterations: int
    marginal_error: float


def _row_lse(m):
    top = m.max(axis=1)
    return top + np.log(np.exp(m - top[:, None]).sum(axis=1))


def sinkhorn(a, b, epsilon=0.05, max_iter=5_000, tol=1e-6, scaling=0.5, absorb_at=1e30, stage_tol=1e-3):
    """Entropy-regularised optimal transport with squared-Euclidean cost.

    Sinkhorn iterations on uniform marginals in the stabilised form: the dual
    potentials are kept in log space and the Gibbs kernel is rebuilt from them whenever
    the scaling vectors grow past ``absorb_at``. Epsilon is annealed geometrically from
    the cost scale down to ``epsilon``. The reported value is the square root of the
    transport cost of the final plan.

    Parameters
    ----------
    a : (n, d) array
    b : (m, d) array
    epsilon : float
    max_iter : int
        Iteration budget for each epsilon stage.
    tol : float
        Stop once the L1 error of the row marginal falls below this.
    stage_tol : float
        Looser tolerance used for the intermediate, larger epsilons.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ValueError("both point sets must be nonempty")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    # solve in a canonical orientation so the result is exactly symmetric in (a, b)
    spread_a = float(np.var(a, axis=0).sum())
    spread_b = float(np.var(b, axis=0).sum())
    if (b.shape[0], spread_b) > (a.shape[0], spread_a):
        a, b = b, a
    n, m = a.shape[0], b.shape[0]
    cost = cdist(a, b, "sqeuclidean")
    mu = np.full(n, 1.0 / n)
    nu = np.full(m, 1.0 / m)
    f = np.zeros(n)
    g = np.zeros(m)
    eps_path = [epsilon]
    top = float(cost.max())
    while eps_path[-1] < top:
        eps_path.append(eps_path[-1] / scaling)
    eps_path = eps_path[::-1]

    def kernel(eps):
        return np.exp((f[:, None] + g[None, :] - cost) / eps)

    err = np.inf
    it = 0
    for stage, eps in enumerate(eps_path):
        final = stage == len(eps_path) - 1
        stop_at = tol if final else max(stage_tol, tol)
        # a log-domain half step puts the potentials on the right scale for this epsilon
        f = eps * (np.log(mu) - _row_lse((g[None, :] - cost) / eps))
        g = eps * (np.log(nu) - _row_lse((f[:, None] - cost).T / eps))
        k_mat = kernel(eps)
        u = np.ones(n)
        v = np.ones(m)
        for inner in range(max_iter):
            u = mu / (k_mat @ v)
            v = nu / (k_mat.T @ u)
            it += 1
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise FloatingPointError("Sinkhorn scalings overflowed")
            if max(u.max(), v.max(), 1.0 / u.min(), 1.0 / v.min()) > absorb_at:
                f += eps * np.log(u)
                g += eps * np.log(v)
                u[:] = 1.0
                v[:] = 1.0
                k_mat = kernel(eps)
            if inner % 10 == 9 or inner == max_iter - 1:
                err = float(np.abs(u * (k_mat @ v) - mu).sum())
                if err < stop_at:
                    break
        f += eps * np.log(u)
        g += eps * np.log(v)
    plan = kernel(epsilon)
    value = float(np.sqrt(max(np.sum(plan * cost), 0.0)))
    return SinkhornResult(value, err < tol, it, err)


def sinkhorn_w2(a, b, epsilon=0.05, max_iter=5_000, tol=1e-6):
    """Entropy-regularised W2 between two equally weighted point clouds."""
    res = sinkhorn(a, b, epsilon, max_iter, tol)
    if not res.converged:
        warnings.warn(f"Sinkhorn did not converge (marginal error {res.marginal_error:.2e})", RuntimeWarning)
    return res.value


def ks_2samp_stat(a, b):
    """Two-sample Kolmogorov-Smirnov statistic of 1-d samples."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def random_directions(n_proj, dim, rng):
    v = rng.standard_normal((n_proj, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_ks(a, ref, n_proj=128, rng=None, seed=0):
    """Mean two-sample KS statistic over random one-dimensional projections."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    if a.shape[0] == 0 or ref.shape[0] == 0:
        raise ValueError("sample sets must be nonempty")
    if n_proj < 1:
        raise ValueError("n_proj must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    dirs = random_directions(n_proj, a.shape[1], rng)
    pa = a @ dirs.T
    pr = ref @ dirs.T
    return float(np.mean([ks_2samp_stat(pa[:, i], pr[:, i]) for i in range(n_proj)]))


def predictive_loglik(samples, data):
    """Held-out log predictive likelihood of posterior draws of ``(w, b)``.

    Sums, over test points, the log of the predictive probability averaged over draws.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    feats = data.features[data.test]
    labels = data.labels[data.test].astype(float)
    z = samples[:, :-1] @ feats.T + samples[:, -1:]
    log_lik = labels * log_expit(z) + (1 - labels) * log_expit(-z)
    top = log_lik.max(axis=0)
    per_point = top + np.log(np.mean(np.exp(log_lik - top), axis=0))
    return float(per_point.sum())


def score_mse_experiment(target, path, estimators=("dsi", "tsi", "msi", "scv", "mcv"), t_grid=None, n_x=1000, n_y=16, rng=None, cov="pooled"):
    """Mean squared error of each score estimator along the path, using exact particles.

    For every ``t`` samples ``x`` from the path marginal, draws ``n_y`` exact posterior
    particles per sample and compares the estimates to the analytic marginal score.
    The control-variate schedules use the pooled covariance estimate from the same
    particles (``cov="pooled"``) or, if a matrix is passed, that fixed matrix.

    Returns
    -------
    list of ``(t, estimator, mse)`` tuples.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if t_grid is None:
        t_grid = (np.arange(20) + 0.5) / 20
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}")
    rows = []
    d = target.dim
    for t in t_grid:
        lam = float(path.schedule(t))
        x, _ = exact_path_sample(path, t, target, n_x, rng)
        ys = exact_posterior_sample(path, t, x, target, n_y, rng)
        grad = target.grad_log_density(ys)
        w = np.full((n_x, n_y), 1.0 / n_y)
        ref = mixture_marginal_score(path, t, x, target)
        if isinstance(cov, str):
            est = estimate_score_cov(w, ys, x, path, lam=lam, grad_target=grad)
        else:
            est = ScoreCovEstimate(np.asarray(cov, dtype=float))
        for name in estimators:
            cv = build_cv(_CV_FOR[name], lam, path.sigma_sq, d, est)
            s = estimate_scores(x, ys, w, path, cv, lam=lam, grad_target=grad)
            rows.append((float(t), name, float(np.mean(np.sum((s - ref) ** 2, axis=1)))))
    return rows
