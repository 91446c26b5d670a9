"""Weighted particle machinery shared by the samplers.

All functions work on batches of clouds: positions have shape ``(n_clouds, n_particles, d)``
and log-weights ``(n_clouds, n_particles)``. Weights live in log space throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


@dataclass
class ParticleCloud:
    """Auxiliary particles for a block of samples.

    Attributes
    ----------
    positions : (n_samples, n_particles, d) array
    log_accum : (n_samples, n_particles) array
        Running log importance weights, reset to zero on resampling.
    owners : (n_samples,) int array
        Global indices of the samples that own each cloud.
    log_target, grad_target : arrays
        Cached target log-density and gradient at ``positions``.
    step_size : float
    halted : bool
    """

    positions: np.ndarray
    log_accum: np.ndarray
    owners: np.ndarray
    log_target: np.ndarray = None
    grad_target: np.ndarray = None
    step_size: float = 0.1
    halted: bool = False
    extras: dict = field(default_factory=dict)

    def weights(self):
        return normalize_log_weights(self.log_accum)


def normalize_log_weights(log_weights, axis=-1):
    """Softmax along ``axis`` with the max-subtraction trick."""
    log_weights = np.asarray(log_weights, dtype=float)
    top = np.max(log_weights, axis=axis, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise ValueError("every log-weight in a cloud is -inf or nan")
    w = np.exp(log_weights - top)
    return w / np.sum(w, axis=axis, keepdims=True)


def ess(log_weights, axis=-1):
    """Effective sample size 1 / sum(w^2) of the normalised weights."""
    w = normalize_log_weights(log_weights, axis)
    return 1.0 / np.sum(w**2, axis=axis)


def stratified_resample(log_weights, rng=None, uniforms=None):
    """Stratified resampling, one uniform per stratum ``[i/N, (i+1)/N)``.

    Parameters
    ----------
    log_weights : (..., N) array
    rng : numpy Generator, optional
        Used when ``uniforms`` is not given.
    uniforms : (..., N) array in [0, 1), optional

    Returns
    -------
    int array of ancestor indices with the same shape as ``log_weights``.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    shape = log_weights.shape
    n = shape[-1]
    w = normalize_log_weights(log_weights).reshape(-1, n)
    if uniforms is None:
        uniforms = rng.uniform(size=w.shape)
    uniforms = np.asarray(uniforms, dtype=float).reshape(w.shape)
    rows = np.arange(w.shape[0])[:, None]
    cum = np.cumsum(w, axis=1)
    cum[:, -1] = 1.0
    # offset each row by its index so one searchsorted covers every cloud
    positions = (np.arange(n) + uniforms) / n + rows
    idx = np.searchsorted((cum + rows).ravel(), positions.ravel(), side="right").reshape(w.shape)
    idx = np.clip(idx - rows * n, 0, n - 1)
    return idx.reshape(shape)


def adapt_step(h, acc_rate, target=0.75, factor=1.1):
    """Grow the step when acceptance beats the target, otherwise shrink it."""
    return h * factor if acc_rate > target else h / factor


def mala_step(y, state, logdensity_and_grad, h, normals, log_uniforms, beta=1.0):
    """One Metropolis-adjusted Langevin step, batched over all particles.

    Parameters
    ----------
    y : (..., d) array
        Current positions.
    state : dict
        Arrays evaluated at ``y``; must hold ``"logp"`` and ``"grad"`` of the density being
        sampled. Any further entries are carried along and swapped on acceptance.
    logdensity_and_grad : callable
        Maps proposals to a dict with the same keys as ``state``.
    h : float
        Drift step size. The proposal is ``N(y + h grad, (2h / beta) I)``.
    normals : (..., d) array
        Standard normal noise.
    log_uniforms : (...) array
        Logs of the uniforms used for the accept test.
    beta : float
        Temperature; the chain targets ``exp(beta * logp)``.

    Returns
    -------
    y_new, state_new, accepted, n_nonfinite
    """
    scale = np.sqrt(2.0 * h / beta)
    proposal = y + h * state["grad"] + scale * normals
    new = logdensity_and_grad(proposal)
    fwd = proposal - y - h * state["grad"]
    bwd = y - proposal - h * new["grad"]
    log_q_ratio = -beta * (np.sum(bwd**2, axis=-1) - np.sum(fwd**2, axis=-1)) / (4.0 * h)
    log_alpha = beta * (new["logp"] - state["logp"]) + log_q_ratio
    finite = np.isfinite(log_alpha) & np.all(np.isfinite(new["grad"]), axis=-1)
    accepted = finite & (log_uniforms < log_alpha)
    out = {}
    for key, cur in state.items():
        mask = accepted.reshape(accepted.shape + (1,) * (cur.ndim - accepted.ndim))
        out[key] = np.where(mask, new[key], cur)
    y_new = np.where(accepted[..., None], proposal, y)
    return y_new, out, accepted, int(np.count_nonzero(~finite))


def incremental_logweight(path, k, x_prev, x_new, y):
    """log rho_k(y) - log rho_{k-1}(y) with the shared target term cancelled.

    ``x_prev`` and ``x_new`` must broadcast against ``y`` (e.g. shape ``(n, 1, d)``).
    """
    return path.gaussian_factor(path.lam_at(k), x_new, y) - path.gaussian_factor(path.lam_at(k - 1), x_prev, y)


def tempered_logweight(path, k, x_prev, x_new, y, beta_prev, beta_k, log_target=None):
    """Accumulator increment and score-estimation correction for tempered clouds.

    Returns ``(beta_k log rho_k(y) - beta_prev log rho_{k-1}(y), (1 - beta_k) log rho_k(y))``
    where ``rho_k`` is the unnormalised posterior including the target density.
    """
    if log_target is None:
        log_target = path.target.log_density_unnorm(y)
    g_new = path.gaussian_factor(path.lam_at(k), x_new, y)
    g_prev = path.gaussian_factor(path.lam_at(k - 1), x_prev, y)
    increment = beta_k * g_new - beta_prev * g_prev
    if beta_k != beta_prev:
        increment = increment + (beta_k - beta_prev) * log_target
    correction = (1.0 - beta_k) * (g_new + log_target)
    return increment, correction


def log_mean_exp(log_values, axis=None):
    log_values = np.asarray(log_values)
    n = log_values.size if axis is None else log_values.shape[axis]
    return logsumexp(log_values, axis=axis) - np.log(n)
