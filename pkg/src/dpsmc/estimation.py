"""Control-variate schedules and weighted score estimates from the particle clouds."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .path import CvSchedule

CV_KINDS = ("dsi", "tsi", "msi", "scalar", "diagonal", "matrix")


@dataclass
class ScoreCovEstimate:
    """Pooled estimate of the target score covariance.

    Attributes
    ----------
    matrix : (d, d) array, symmetric
    n_excluded : int
        Particles dropped because a gradient was not finite.
    """

    matrix: np.ndarray
    n_excluded: int = 0
    jitter: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def trace(self):
        return float(np.trace(self.matrix))

    @property
    def diag(self):
        return np.diag(self.matrix).copy()


def _finite_rows(weights, *arrays):
    ok = np.ones(weights.shape, dtype=bool)
    for a in arrays:
        ok &= np.all(np.isfinite(a), axis=-1)
    if ok.all():
        return weights, arrays, 0
    w = np.where(ok, weights, 0.0)
    tot = w.sum(axis=-1, keepdims=True)
    w = np.divide(w, tot, out=np.zeros_like(w), where=tot > 0)
    arrays = tuple(np.where(ok[..., None], a, 0.0) for a in arrays)
    return w, arrays, int(np.count_nonzero(~ok))


def estimate_score_cov(weights, ys, xs, path, t=None, grad_target=None, lam=None):
    """Weighted ensemble estimate of Cov_pi[grad log pi].

    Uses ``mean_i sum_j w_ij grad log pi(y_ij) grad log rho_{t, x_i}(y_ij)^T``, which has the
    score covariance as its expectation, and then symmetrises.

    Parameters
    ----------
    weights : (n_x, n_y) normalised weights per cloud
    ys : (n_x, n_y, d) particles
    xs : (n_x, d) samples owning each cloud
    path : DiffusionPath
    t : float, optional
        Normalised time; alternatively pass ``lam`` directly.
    grad_target : (n_x, n_y, d) array, optional
        Cached target gradients at ``ys``.
    """
    if lam is None:
        lam = float(path.schedule(t))
    if grad_target is None:
        grad_target = path.target.grad_log_density(ys)
    grad_post = path.gaussian_factor_grad(lam, xs[:, None, :], ys) + grad_target
    w, (g_pi, g_rho), n_bad = _finite_rows(np.asarray(weights, dtype=float), grad_target, grad_post)
    m = np.einsum("ij,ijk,ijl->kl", w, g_pi, g_rho) / w.shape[0]
    m = 0.5 * (m + m.T)
    return ScoreCovEstimate(m, n_bad)


def cv_scalar(trace, lam, sigma_sq, dim):
    """Variance-optimal scalar weight on the denoising identity."""
    num = (1.0 - lam) * trace
    den = lam * dim / sigma_sq + num
    if den <= 0:
        return 0.0
    return float(np.clip(num / den, 0.0, 1.0))


def cv_diag(diag, lam, sigma_sq):
    """Per-coordinate optimal weights."""
    diag = np.asarray(diag, dtype=float)
    num = (1.0 - lam) * diag
    den = lam / sigma_sq + num
    out = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return np.clip(out, 0.0, 1.0)


def cv_matrix(cov, lam, sigma_sq, diagnostics=None):
    """Matrix schedule ``I (lam / (sigma_sq (1 - lam)) Id + I + jitter Id)^{-1}``.

    ``I`` commutes with the bracketed matrix, so the product equals a symmetric solve
    with ``I`` as right-hand side. The first solve is exact; on failure a relative jitter
    is added and escalated, and after three escalations the scalar schedule is used.
    """
    cov = np.asarray(cov, dtype=float)
    dim = cov.shape[0]
    trace = float(np.trace(cov))
    jitter = 0.0
    eye = np.eye(dim)
    base = lam / (sigma_sq * (1.0 - lam)) * eye + cov
    for _ in range(4):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                a = scipy.linalg.solve(base + jitter * eye, cov, assume_a="sym")
            if np.all(np.isfinite(a)):
                return a
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
            pass
        jitter = max(jitter * 10, 1e-10 * abs(trace) / dim, 1e-300)
    if diagnostics is not None:
        diagnostics["matrix_fallbacks"] = diagnostics.get("matrix_fallbacks", 0) + 1
    return cv_scalar(trace, lam, sigma_sq, dim) * eye


def cv_per_sample(weights, grad_target, grad_post):
    """Scalar weight optimised separately for every cloud, clipped to [0, 1]."""
    num = np.einsum("ij,ijk,ijk->i", weights, grad_target, grad_post)
    den = np.einsum("ij,ijk,ijk->i", weights, grad_post, grad_post)
    alpha = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return np.clip(alpha, 0.0, 1.0)


def build_cv(kind, lam, sigma_sq, dim, cov=None, diagnostics=None):
    """CvSchedule of the requested kind at interpolation level ``lam``."""
    if kind == "dsi":
        return CvSchedule.dsi()
    if kind == "tsi":
        return CvSchedule.tsi()
    if kind == "msi":
        return CvSchedule.msi(lam)
    if cov is None:
        raise ValueError(f"CV kind {kind!r} needs a score covariance estimate")
    if kind == "scalar":
        return CvSchedule("scalar", cv_scalar(cov.trace, lam, sigma_sq, dim))
    if kind == "diagonal":
        return CvSchedule("diagonal", cv_diag(cov.diag, lam, sigma_sq))
    if kind == "matrix":
        return CvSchedule("matrix", cv_matrix(cov.matrix, lam, sigma_sq, diagnostics))
    raise ValueError(f"unknown CV kind {kind!r}; choose from {CV_KINDS}")


def estimate_scores(xs, ys, weights, path, cv, t=None, grad_target=None, lam=None):
    """Self-normalised estimate of the path score for every sample.

    The test function is linear in the two identities, so the weighted averages of each
    identity are formed first and blended afterwards.
    """
    if lam is None:
        lam = float(path.schedule(t))
    if grad_target is None:
        grad_target = path.target.grad_log_density(ys)
    weights = np.asarray(weights, dtype=float)
    mean_y = np.einsum("ij,ijk->ik", weights, ys)
    mean_grad = np.einsum("ij,ijk->ik", weights, grad_target)
    s1 = path.denoising_score(lam, xs, mean_y)
    s2 = path.target_score(lam, mean_grad)
    if isinstance(cv, np.ndarray) and cv.ndim == 1 and cv.shape[0] == xs.shape[0]:
        # one scalar weight per sample
        return s2 + cv[:, None] * (s1 - s2)
    return cv.apply(s1, s2)
