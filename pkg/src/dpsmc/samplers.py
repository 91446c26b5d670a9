"""Outer sampling loops: DPSMC (plain and tempered) and geometric-path AIS/SMC baselines.

Every sample owns a cloud of auxiliary particles. The clouds evolve independently
apart from three pooled quantities per step: the score-covariance estimate behind the
control-variate schedule, the MALA acceptance rate, and the shared MALA step size.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .estimation import CV_KINDS, build_cv, cv_per_sample, estimate_score_cov, estimate_scores
from .path import DiffusionPath, SCHEDULES
from .rng import CounterRNG
from .smc import adapt_step, ess, mala_step, normalize_log_weights, stratified_resample

ALGORITHMS = ("dpsmc", "dpsmc_tempered", "ais", "smc_geometric")


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class SamplerError(RuntimeError):
    """A run produced a non-finite state."""


@dataclass
class RunConfig:
    """Declarative description of one sampler run.

    ``mala_steps`` defaults to 1 for DPSMC and 128 for the baselines; ``mala_factor``
    defaults to 1.1 for DPSMC and 1.02 for the baselines.
    """

    target: str = "gaussian"
    target_params: dict = field(default_factory=dict)
    algorithm: str = "dpsmc"
    n_samples: int = 1024
    n_particles: int = 64
    steps: int = 256
    xi: float = 1.0
    horizon: float = None
    schedule: str = "cosine"
    cv: str = "matrix"
    per_sample_cv: bool = False
    interacting: bool = True
    beta_floor: float = 1e-2
    mala_target: float = 0.75
    mala_factor: float = None
    mala_step_size: float = 0.1
    mala_steps: int = None
    halt_threshold: float = 0.10
    resample_threshold: float = 0.5
    init_variance: float = None
    seed: int = 0
    workers: int = 1
    block_size: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {ALGORITHMS}")
        for name in ("n_samples", "n_particles", "steps", "workers", "block_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.mala_steps is not None and (not isinstance(self.mala_steps, (int, np.integer)) or self.mala_steps < 0):
            raise ConfigError("mala_steps", "must be a non-negative integer")
        if not self.xi > 0:
            raise ConfigError("xi", "must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError("horizon", "must be positive")
        if self.schedule not in SCHEDULES:
            raise ConfigError("schedule", f"must be one of {sorted(SCHEDULES)}")
        if self.cv not in CV_KINDS:
            raise ConfigError("cv", f"must be one of {CV_KINDS}")
        if not self.interacting and self.cv not in ("dsi", "tsi", "msi"):
            raise ConfigError("cv", "the non-interacting variant needs a fixed schedule (dsi, tsi or msi)")
        if not 0 < self.beta_floor <= 1:
            raise ConfigError("beta_floor", "must lie in (0, 1]")
        for name in ("mala_target", "halt_threshold", "resample_threshold"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(name, "must lie in (0, 1)")
        if self.mala_factor is not None and not self.mala_factor >= 1:
            raise ConfigError("mala_factor", "must be at least 1")
        if not self.mala_step_size > 0:
            raise ConfigError("mala_step_size", "must be positive")
        if self.init_variance is not None and not self.init_variance > 0:
            raise ConfigError("init_variance", "must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must fit in 64 unsigned bits")

    @property
    def is_baseline(self):
        return self.algorithm in ("ais", "smc_geometric")

    @property
    def n_mala(self):
        if self.mala_steps is not None:
            return self.mala_steps
        return 128 if self.is_baseline else 1

    @property
    def adapt_factor(self):
        if self.mala_factor is not None:
            return self.mala_factor
        return 1.02 if self.is_baseline else 1.1

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class RunResult:
    """Output of a sampler run.

    Attributes
    ----------
    samples : (n_samples, d) array
    log_weights : (n_samples,) array or None
        Importance log-weights of the baselines; ``None`` for equally weighted output.
    diagnostics : dict of per-step lists
    batched_evals : int
        Number of sequential rounds of target evaluations.
    point_evals : int
        Total number of points at which the target was evaluated.
    halt_step : int or None
    """

    samples: np.ndarray
    diagnostics: dict
    batched_evals: int
    point_evals: int
    wall_clock: float
    halt_step: int = None
    log_weights: np.ndarray = None
    extras: dict = field(default_factory=dict)

    def equal_weight_samples(self, seed=0):
        """Samples with equal weights, stratified-resampled when log-weights are present."""
        if self.log_weights is None:
            return self.samples
        idx = stratified_resample(self.log_weights, np.random.default_rng(seed))
        return self.samples[idx]


def expected_batched_evals(config, halt_step=None):
    """Closed-form count of batched target evaluations for a configuration.

    DPSMC spends one round on the initial particles and ``n_mala`` per interior step.
    After a halt at step ``s`` it spends one round at ``s`` and every later interior
    step on the target score of the samples.
    """
    if config.is_baseline:
        return 1 + config.steps * config.n_mala
    if config.steps == 1:
        return 0
    if halt_step is None:
        return 1 + (config.steps - 1) * config.n_mala
    return 1 + halt_step * config.n_mala + 1 + (config.steps - 1 - halt_step)


class _Evaluator:
    """Target evaluation over fixed blocks of samples.

    Blocks have a fixed size that does not depend on the worker count, so every
    floating-point operation is identical however many threads run.
    """

    def __init__(self, target, block_size, workers):
        self.target = target
        self.block_size = block_size
        self.workers = workers
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None
        self.batched = 0
        self.points = 0

    def __call__(self, y):
        n = y.shape[0]
        slices = [slice(s, min(s + self.block_size, n)) for s in range(0, n, self.block_size)]
        logp = np.empty(y.shape[:-1])
        grad = np.empty_like(y)

        def work(sl):
            logp[sl], grad[sl] = self.target.log_density_and_grad(y[sl])

        if self.pool is None:
            for sl in slices:
                work(sl)
        else:
            list(self.pool.map(work, slices))
        self.batched += 1
        self.points += int(np.prod(y.shape[:-1]))
        return logp, grad

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _check_finite(arr, what, step):
    if not np.all(np.isfinite(arr)):
        raise SamplerError(f"non-finite {what} at step {step}")


def ald_step(x, score, h, noise):
    """Euler-Maruyama step of Langevin dynamics: ``x + h score + sqrt(2h) noise``."""
    score = np.asarray(score)
    if not np.all(np.isfinite(score)):
        raise SamplerError("non-finite score in Langevin step")
    return x + h * score + np.sqrt(2.0 * h) * noise


def make_path(config, target):
    return DiffusionPath.for_target(target, config.steps, config.xi, config.horizon, config.schedule)


def run_dpsmc(config, target, rng=None, path=None):
    """Diffusion-path SMC with interacting particle clouds.

    Samples follow annealed Langevin dynamics whose drift is estimated, at every step,
    from the sample's own cloud of weighted auxiliary particles. Use
    ``algorithm="dpsmc_tempered"`` for tempered auxiliary targets.
    """
    start = time.perf_counter()
    rng = rng if rng is not None else CounterRNG(config.seed)
    path = path if path is not None else make_path(config, target)
    tempered = config.algorithm == "dpsmc_tempered"
    n_x, n_y, d, K = config.n_samples, config.n_particles, target.dim, config.steps
    owners = np.arange(n_x)
    parts = np.arange(n_y)
    h = path.step_size
    sigma_sq = path.sigma_sq
    evaluate = _Evaluator(target, config.block_size, config.workers)

    def beta_at(lam):
        return max(lam, config.beta_floor) if tempered else 1.0

    q0_var = config.init_variance or target.init_variance()
    x = np.sqrt(sigma_sq) * rng.normal(streams.INIT_X, 0, owners, (0,), d)[:, 0, :]
    diag = {k: [] for k in ("step", "ess_min", "ess_median", "acc_rate", "h_mala", "resamples", "alpha_trace")}
    diag_extra = {"matrix_fallbacks": 0, "nonfinite_proposals": 0}
    halt_step = None

    if K == 1:
        noise = rng.normal(streams.ALD_NOISE, 1, owners, (0,), d)[:, 0, :]
        x = ald_step(x, -x / sigma_sq, h, noise)
        evaluate.close()
        return RunResult(x, diag, 0, 0, time.perf_counter() - start)

    y = np.sqrt(q0_var) * rng.normal(streams.INIT_Y, 0, owners, parts, d)
    log_pi, grad_pi = evaluate(y)
    log_q0 = -0.5 * np.sum(y**2, axis=-1) / q0_var - 0.5 * d * np.log(2 * np.pi * q0_var)
    beta_prev = beta_at(path.lam_at(0))
    log_accum = beta_prev * log_pi - log_q0
    score = -x / sigma_sq
    h_mala = config.mala_step_size
    halted = False

    for k in range(1, K):
        x_prev = x
        noise = rng.normal(streams.ALD_NOISE, k, owners, (0,), d)[:, 0, :]
        x = ald_step(x, score, h, noise)
        _check_finite(x, "sample", k)
        if halted:
            score = evaluate(x[:, None, :])[1][:, 0, :]
            continue

        lam, lam_prev = path.lam_at(k), path.lam_at(k - 1)
        beta = beta_at(lam)
        xb, xb_prev = x[:, None, :], x_prev[:, None, :]
        g_new = path.gaussian_factor(lam, xb, y)
        g_prev = path.gaussian_factor(lam_prev, xb_prev, y)
        increment = beta * g_new - beta_prev * g_prev
        if beta != beta_prev:
            increment = increment + (beta - beta_prev) * log_pi
        log_accum = log_accum + increment

        def posterior(prop):
            lp, gp = evaluate(prop)
            gf = path.gaussian_factor(lam, xb, prop)
            return {
                "logp": gf + lp,
                "grad": path.gaussian_factor_grad(lam, xb, prop) + gp,
                "log_pi": lp,
                "grad_pi": gp,
                "gf": gf,
            }

        state = {
            "logp": g_new + log_pi,
            "grad": path.gaussian_factor_grad(lam, xb, y) + grad_pi,
            "log_pi": log_pi,
            "grad_pi": grad_pi,
            "gf": g_new,
        }
        n_acc = 0
        for m in range(config.n_mala):
            normals = rng.normal(streams.MALA_NOISE, k, owners, parts, d, sub=m)
            log_u = np.log(rng.uniform(streams.MALA_ACCEPT, k, owners, parts, sub=m))
            y, state, accepted, n_bad = mala_step(y, state, posterior, h_mala, normals, log_u, beta)
            n_acc += int(np.count_nonzero(accepted))
            diag_extra["nonfinite_proposals"] += n_bad
        log_pi, grad_pi = state["log_pi"], state["grad_pi"]
        acc_rate = n_acc / (n_x * n_y * max(config.n_mala, 1)) if config.n_mala else 1.0

        # weights for score estimation; tempered clouds are corrected back to beta = 1
        if beta != 1.0:
            log_w_est = log_accum + (1.0 - beta) * (state["gf"] + log_pi)
        else:
            log_w_est = log_accum
        w = normalize_log_weights(log_w_est)

        if config.cv in ("dsi", "tsi", "msi"):
            cv = build_cv(config.cv, lam, sigma_sq, d)
        else:
            cov = estimate_score_cov(w, y, x, path, lam=lam, grad_target=grad_pi)
            cv = build_cv(config.cv, lam, sigma_sq, d, cov, diag_extra)
        if config.per_sample_cv:
            grad_post = path.gaussian_factor_grad(lam, xb, y) + grad_pi
            alpha = cv_per_sample(w, grad_pi, grad_post)
            score = estimate_scores(x, y, w, path, alpha, lam=lam, grad_target=grad_pi)
            alpha_trace = float(alpha.mean())
        else:
            score = estimate_scores(x, y, w, path, cv, lam=lam, grad_target=grad_pi)
            alpha_trace = cv.trace_per_dim(d)

        ess_vals = ess(log_accum)
        low = ess_vals < config.resample_threshold * n_y
        if np.any(low):
            rows = np.flatnonzero(low)
            u = rng.uniform(streams.RESAMPLE, k, owners[rows], parts)
            idx = stratified_resample(log_accum[rows], uniforms=u)
            y[rows] = np.take_along_axis(y[rows], idx[..., None], axis=1)
            log_pi[rows] = np.take_along_axis(log_pi[rows], idx, axis=1)
            grad_pi[rows] = np.take_along_axis(grad_pi[rows], idx[..., None], axis=1)
            log_accum[rows] = 0.0

        diag["step"].append(k)
        diag["ess_min"].append(float(ess_vals.min()))
        diag["ess_median"].append(float(np.median(ess_vals)))
        diag["acc_rate"].append(acc_rate)
        diag["h_mala"].append(h_mala)
        diag["resamples"].append(int(low.sum()))
        diag["alpha_trace"].append(alpha_trace)

        beta_prev = beta
        if config.interacting:
            h_mala = adapt_step(h_mala, acc_rate, config.mala_target, config.adapt_factor)
            if acc_rate < config.halt_threshold:
                halted = True
                halt_step = k
                score = evaluate(x[:, None, :])[1][:, 0, :]
        _check_finite(score, "score", k)

    noise = rng.normal(streams.ALD_NOISE, K, owners, (0,), d)[:, 0, :]
    x = ald_step(x, score, h, noise)
    _check_finite(x, "sample", K)
    evaluate.close()
    diag.update({k: v for k, v in diag_extra.items()})
    return RunResult(
        x, diag, evaluate.batched, evaluate.points, time.perf_counter() - start, halt_step,
        extras={"sigma_sq": sigma_sq, "horizon": path.horizon, "init_variance": q0_var},
    )


def run_dpsmc_tempered(config, target, rng=None, path=None):
    """DPSMC whose clouds target tempered posteriors ``rho^beta`` with ``beta = max(lam, floor)``."""
    return run_dpsmc(config.replace(algorithm="dpsmc_tempered"), target, rng, path)


def _run_geometric(config, target, rng, resample):
    start = time.perf_counter()
    rng = rng if rng is not None else CounterRNG(config.seed)
    n, d, K = config.n_samples, target.dim, config.steps
    owners = np.arange(n)
    evaluate = _Evaluator(target, config.block_size * config.n_particles, config.workers)
    var0 = config.init_variance or target.init_variance()

    def log_ref(z):
        return -0.5 * np.sum(z**2, axis=-1) / var0 - 0.5 * d * np.log(2 * np.pi * var0)

    y = np.sqrt(var0) * rng.normal(streams.BASELINE_INIT, 0, owners, (0,), d)[:, 0, :]
    log_pi, grad_pi = evaluate(y)
    log_w = np.zeros(n)
    h_mala = config.mala_step_size
    diag = {k: [] for k in ("step", "ess_min", "ess_median", "acc_rate", "h_mala", "resamples", "alpha_trace")}
    n_resample = 0

    for k in range(1, K + 1):
        beta, beta_prev = k / K, (k - 1) / K
        log_w = log_w + (beta - beta_prev) * (log_pi - log_ref(y))
        cur_ess = float(ess(log_w))
        did = 0
        if resample and cur_ess < config.resample_threshold * n:
            u = rng.uniform(streams.BASELINE_RESAMPLE, k, (0,), owners)[0]
            idx = stratified_resample(log_w, uniforms=u)
            y, log_pi, grad_pi = y[idx], log_pi[idx], grad_pi[idx]
            log_w = np.zeros(n)
            did = 1
            n_resample += 1

        def annealed(prop, beta=beta):
            lp, gp = evaluate(prop)
            return {
                "logp": (1 - beta) * log_ref(prop) + beta * lp,
                "grad": -(1 - beta) * prop / var0 + beta * gp,
                "log_pi": lp,
                "grad_pi": gp,
            }

        state = {
            "logp": (1 - beta) * log_ref(y) + beta * log_pi,
            "grad": -(1 - beta) * y / var0 + beta * grad_pi,
            "log_pi": log_pi,
            "grad_pi": grad_pi,
        }
        acc_total = 0
        for m in range(config.n_mala):
            normals = rng.normal(streams.BASELINE_NOISE, k, owners, (0,), d, sub=m)[:, 0, :]
            log_u = np.log(rng.uniform(streams.BASELINE_ACCEPT, k, owners, (0,), sub=m)[:, 0])
            y, state, accepted, _ = mala_step(y, state, annealed, h_mala, normals, log_u)
            rate = float(np.mean(accepted))
            acc_total += rate
            h_mala = adapt_step(h_mala, rate, config.mala_target, config.adapt_factor)
        log_pi, grad_pi = state["log_pi"], state["grad_pi"]
        _check_finite(y, "particle", k)

        diag["step"].append(k)
        diag["ess_min"].append(cur_ess)
        diag["ess_median"].append(cur_ess)
        diag["acc_rate"].append(acc_total / max(config.n_mala, 1))
        diag["h_mala"].append(h_mala)
        diag["resamples"].append(did)
        diag["alpha_trace"].append(beta)

    evaluate.close()
    diag["resample_count"] = n_resample
    return RunResult(
        y, diag, evaluate.batched, evaluate.points, time.perf_counter() - start, None, log_w.copy(),
        extras={"init_variance": var0},
    )


def run_ais(config, target, rng=None):
    """Annealed importance sampling on the geometric path from a wide Gaussian to the target."""
    return _run_geometric(config, target, rng, resample=False)


def run_smc_geometric(config, target, rng=None):
    """Geometric-path SMC: AIS plus stratified resampling whenever the ESS halves."""
    return _run_geometric(config, target, rng, resample=True)


RUNNERS = {
    "dpsmc": run_dpsmc,
    "dpsmc_tempered": run_dpsmc_tempered,
    "ais": run_ais,
    "smc_geometric": run_smc_geometric,
}


def run(config, target, rng=None):
    return RUNNERS[config.algorithm](config, target, rng)
