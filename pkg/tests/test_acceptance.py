"""Acceptance checks, one per numbered criterion.

Run under pytest (each criterion is one test, and a pass/fail line per criterion is
printed in the terminal summary) or directly with ``python tests/test_acceptance.py``.
Criteria 7 and 8 run full desk-scale sampler runs and take tens of minutes on one core.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from dpsmc.estimation import build_cv, cv_diag, cv_matrix, cv_scalar, estimate_score_cov, estimate_scores
from dpsmc.metrics import predictive_loglik, score_mse_experiment, sinkhorn, sliced_ks
from dpsmc.path import (
    DiffusionPath,
    action_bound,
    action_bound_integrand,
    exact_path_sample,
    exact_posterior_sample,
    gaussian_marginal_score,
    select_T,
    sigma_from_target,
)
from dpsmc.samplers import RunConfig, expected_batched_evals, run_ais, run_dpsmc, run_dpsmc_tempered, run_smc_geometric
from dpsmc.smc import incremental_logweight, stratified_resample
from dpsmc.targets import load_dataset, make_bimodal, make_funnel, make_gaussian, make_gmm40, make_logreg, make_rings, split_and_standardize

# desk-scale settings for the benchmark reproduction
DESK = dict(n_samples=1024, n_particles=64, steps=1024)
GMM40_XI = 2**3.5
FUNNEL_XI = 2**-0.1
RINGS_XI = 2**0.5
LOGREG_XI = 2**-2.5
GMM40_SEEDS = range(10)
FUNNEL_SEEDS = range(3)
RINGS_SEEDS = range(3)
REFERENCE_SIZE = 10_000


def _line(n, passed, detail):
    return f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}"


# ---------------------------------------------------------------------------
# criterion 1: constants


def criterion_1():
    t_gmm = select_T(2**3.5, 1024, 268.98, 2)
    t_funnel = select_T(2**-0.1, 1024, 43.34, 10)
    sigmas = [np.sqrt(sigma_from_target(m2, d)) for m2, d in ((268.98, 2), (6840.25, 50), (7.52, 2), (43.34, 10))]
    want_sigma = [11.60, 11.70, 1.94, 2.08]
    ok = f"{t_gmm:.3g}" == f"{584.25:.3g}" and f"{t_funnel:.3g}" == f"{15.33:.3g}"
    ok = ok and all(round(s, 2) == w for s, w in zip(sigmas, want_sigma))
    detail = f"T = {t_gmm:.2f} (584.25), {t_funnel:.2f} (15.33); sigma = " + ", ".join(f"{s:.2f}" for s in sigmas)
    return ok, detail


# ---------------------------------------------------------------------------
# criterion 2: action bound


def _bumped(c):
    def sched(t):
        return np.sin(0.5 * np.pi * t) ** 2 + c * np.sin(2 * np.pi * t) * t * (1 - t)

    return sched


def _warped(a):
    def sched(t):
        return np.sin(0.5 * np.pi * (t + a * np.sin(np.pi * t) / np.pi)) ** 2

    return sched


def _truncated_linear(a, b):
    def sched(t):
        return np.clip((np.asarray(t, dtype=float) - a) / (b - a), 0.0, 1.0)

    return sched


def _interior_action(path, n_points=10_000):
    # midpoint rule over grid points where the schedule is strictly inside (0, 1);
    # flat pieces have zero derivative and contribute nothing
    t = (np.arange(n_points) + 0.5) / n_points
    lam = path.schedule(t)
    inside = (lam > 0) & (lam < 1)
    return float(np.sum(action_bound_integrand(path, t[inside])) / n_points)


def criterion_2():
    details = []
    ok = True
    for target in (make_gmm40(2), make_rings(), make_funnel()):
        path = DiffusionPath.for_target(target, 1024)
        m2 = target.second_moment
        cosine = action_bound(path)
        rel = abs(cosine / (m2 * np.pi**2 / 4) - 1)
        ok &= rel < 1e-3
        others = [_bumped(c) for c in (-0.38, -0.2, 0.2, 0.38)] + [_warped(0.5)]
        linear = [_truncated_linear(a, b) for a, b in ((0.0, 1.0), (0.1, 0.9), (0.0, 0.5), (0.25, 1.0), (0.4, 0.6))]
        worst = np.inf
        for sched in others + linear:
            grid = sched(np.linspace(0, 1, 4001))
            assert np.all(np.diff(grid) >= -1e-15), "perturbed schedule must stay monotone"
            alt = DiffusionPath(target, path.sigma_sq, path.horizon, path.n_steps, sched)
            value = _interior_action(alt)
            worst = min(worst, value / cosine)
        ok &= worst >= 1.0
        details.append(f"{target.name}: rel err {rel:.1e}, min alt/cosine {worst:.3f}")
    return ok, "; ".join(details)


# ---------------------------------------------------------------------------
# criterion 3: closed forms of the CV schedules


def criterion_3():
    rs = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        d = int(rs.integers(1, 6))
        s2 = float(rs.uniform(0.1, 10))
        lam = float(rs.uniform(0.01, 0.99))
        worst = max(worst, abs(cv_scalar(d / s2, lam, s2, d) - (1 - lam)))
        worst = max(worst, np.max(np.abs(cv_matrix(np.eye(d) / s2, lam, s2) - (1 - lam) * np.eye(d))))
        diag = rs.uniform(1e-3, 50, d)
        worst = max(worst, np.max(np.abs(cv_matrix(np.diag(diag), lam, s2) - np.diag(cv_diag(diag, lam, s2)))))
        c = diag[0]
        worst = max(worst, np.max(np.abs(cv_matrix(c * np.eye(d), lam, s2) - cv_scalar(c * d, lam, s2, d) * np.eye(d))))
        worst = max(worst, np.max(np.abs(cv_diag(np.full(d, c), lam, s2) - cv_scalar(c * d, lam, s2, d))))
    return worst <= 1e-12, f"max deviation {worst:.1e} over 200 random cases"


# ---------------------------------------------------------------------------
# criterion 4: score estimators against the Gaussian oracle


def criterion_4():
    mean = np.array([1.0, -1.0])
    target = make_gaussian(mean, 0.5)
    path = DiffusionPath.for_target(target, 1024)
    rs = np.random.default_rng(4)
    names = {"dsi": "dsi", "tsi": "tsi", "msi": "msi", "scv": "scalar", "mcv": "matrix"}
    ok = True
    max_z = 0.0
    slopes = {}
    for t in (0.1, 0.5, 0.9):
        lam = float(path.schedule(t))
        # the schedules are estimated from an independent pool of exact particles
        xp, _ = exact_path_sample(path, t, target, 2000, rs)
        yp = exact_posterior_sample(path, t, xp, target, 16, rs)
        cov = estimate_score_cov(np.full(yp.shape[:2], 1 / 16), yp, xp, path, lam=lam)
        cvs = {k: build_cv(v, lam, path.sigma_sq, 2, cov) for k, v in names.items()}
        x, _ = exact_path_sample(path, t, target, 4000, rs)
        ys = exact_posterior_sample(path, t, x, target, 16, rs)
        w = np.full(ys.shape[:2], 1 / 16)
        ref = gaussian_marginal_score(path, t, x, mean, 0.5)
        for name, cv in cvs.items():
            err = estimate_scores(x, ys, w, path, cv, lam=lam) - ref
            se = err.std(axis=0) / np.sqrt(len(err))
            z = np.abs(err.mean(axis=0)) / np.maximum(se, 1e-300)
            max_z = max(max_z, float(z.max()))
            ok &= bool(np.all(np.abs(err.mean(axis=0)) <= 3 * se + 1e-14))
        sizes = (16, 64, 256, 1024)
        mses = {name: [] for name in cvs}
        x, _ = exact_path_sample(path, t, target, 1000, rs)
        ref = gaussian_marginal_score(path, t, x, mean, 0.5)
        for n_y in sizes:
            ys = exact_posterior_sample(path, t, x, target, n_y, rs)
            w = np.full(ys.shape[:2], 1 / n_y)
            for name, cv in cvs.items():
                mses[name].append(np.mean(np.sum((estimate_scores(x, ys, w, path, cv, lam=lam) - ref) ** 2, axis=1)))
        for name in cvs:
            slope = float(np.polyfit(np.log(sizes), np.log(mses[name]), 1)[0])
            slopes[(t, name)] = slope
            ok &= abs(slope + 1) <= 0.15
    worst = max(slopes.items(), key=lambda kv: abs(kv[1] + 1))
    return ok, f"max |bias|/SE {max_z:.2f}; MSE slopes in [{min(slopes.values()):.3f}, {max(slopes.values()):.3f}] (worst {worst[0][1]} at t={worst[0][0]})"


# ---------------------------------------------------------------------------
# criterion 5: control-variate curves stay under the DSI/TSI envelope


def criterion_5():
    target = make_bimodal()
    path = DiffusionPath.for_target(target, 1024)
    rows = score_mse_experiment(target, path, ("dsi", "tsi", "scv", "mcv"), n_x=2000, n_y=16, rng=np.random.default_rng(5))
    by_t = {}
    for t, name, mse in rows:
        by_t.setdefault(t, {})[name] = mse
    ratios = {"scv": [], "mcv": []}
    for vals in by_t.values():
        env = min(vals["dsi"], vals["tsi"])
        for name in ratios:
            ratios[name].append(vals[name] / env)
    ok = all(max(r) <= 1.1 for r in ratios.values())
    return ok, f"{len(by_t)} times; max SCV/envelope {max(ratios['scv']):.3f}, max MCV/envelope {max(ratios['mcv']):.3f}"


# ---------------------------------------------------------------------------
# criterion 6: Gaussian end to end


def criterion_6():
    mean = np.array([1.0, -2.0])
    target = make_gaussian(mean, 1.0)
    cfg = RunConfig(target="gaussian", n_samples=1024, n_particles=64, steps=512, seed=0)
    res = run_dpsmc(cfg, target)
    ref = target.sample(REFERENCE_SIZE, np.random.default_rng([0, 1]))
    err = np.abs(res.samples.mean(axis=0) - mean)
    ks = sliced_ks(res.samples, ref, seed=0)
    ok = bool(np.all(err <= 0.2)) and ks <= 0.1
    return ok, f"mean error {np.round(err, 3).tolist()}, sliced KS {ks:.3f}"


# ---------------------------------------------------------------------------
# criterion 7: desk-scale benchmarks


def _desk_run(name, target, xi, seed):
    cfg = RunConfig(target=name, xi=xi, seed=seed, **DESK)
    res = run_dpsmc(cfg, target)
    ref = target.sample(REFERENCE_SIZE, np.random.default_rng([seed, 1]))
    return res, ref


def criterion_7():
    parts = []
    gmm = make_gmm40(2)
    w2s, covered = [], 0
    for seed in GMM40_SEEDS:
        res, ref = _desk_run("gmm40", gmm, GMM40_XI, seed)
        nearest = np.argmin(((res.samples[:, None, :] - gmm.means[None]) ** 2).sum(-1), axis=1)
        covered += len(np.unique(nearest)) == len(gmm.means)
        w2s.append(sinkhorn(res.samples, ref).value)
    gmm_ok = np.mean(w2s) <= 3.0 and covered >= 8
    parts.append(f"GMM40 W2 {np.mean(w2s):.2f} +- {np.std(w2s, ddof=1) / np.sqrt(len(w2s)):.2f}, all modes in {covered}/10 seeds")

    funnel = make_funnel()
    kss = []
    for seed in FUNNEL_SEEDS:
        res, ref = _desk_run("funnel", funnel, FUNNEL_XI, seed)
        kss.append(sliced_ks(res.samples, ref, seed=seed))
    funnel_ok = np.mean(kss) <= 0.12
    parts.append(f"Funnel KS {np.mean(kss):.3f} over {len(kss)} seeds")

    rings = make_rings()
    rw2 = []
    for seed in RINGS_SEEDS:
        res, ref = _desk_run("rings", rings, RINGS_XI, seed)
        rw2.append(sinkhorn(res.samples, ref).value)
    rings_ok = np.mean(rw2) <= 0.35
    parts.append(f"Rings W2 {np.mean(rw2):.3f} over {len(rw2)} seeds")
    flags = f"[GMM40 {'ok' if gmm_ok else 'fail'}, Funnel {'ok' if funnel_ok else 'fail'}, Rings {'ok' if rings_ok else 'fail'}]"
    return bool(gmm_ok and funnel_ok and rings_ok), "; ".join(parts) + " " + flags


# ---------------------------------------------------------------------------
# criterion 8: logistic regression against geometric SMC


def _ionosphere_path():
    env = os.environ.get("DPSMC_IONOSPHERE")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).resolve().parents[1] / "data" / "ionosphere.data")
    for path in candidates:
        if path.is_file():
            return path
    return None


def logreg_gap(data, n_samples, n_particles, steps, seed=0):
    """Predictive log-likelihood of DPSMC and geometric SMC under the same budget."""
    target = make_logreg(data)
    dp = run_dpsmc(RunConfig(target="logreg", n_samples=n_samples, n_particles=n_particles, steps=steps, xi=LOGREG_XI, seed=seed), target)
    smc = run_smc_geometric(RunConfig(target="logreg", algorithm="smc_geometric", n_samples=n_samples, steps=steps, seed=seed), target)
    return predictive_loglik(dp.samples, data), predictive_loglik(smc.equal_weight_samples(seed), data)


def _synthetic_logreg(seed=0, n=351, d=34):
    rs = np.random.default_rng(seed)
    feats = rs.standard_normal((n, d))
    w = rs.standard_normal(d) * 0.5
    labels = (rs.uniform(size=n) < 1 / (1 + np.exp(-(feats @ w)))).astype(int)
    return split_and_standardize(feats, labels, seed)


def criterion_8():
    path = _ionosphere_path()
    supplement = ""
    if path is None:
        # not the criterion: a reduced-budget check of the same harness on synthetic data
        dp, smc = logreg_gap(_synthetic_logreg(), 256, 32, 256)
        supplement = f"; supplementary synthetic d=35 run at reduced budget: DPSMC {dp:.2f} vs SMC {smc:.2f}"
        return False, "Ionosphere data unavailable (set DPSMC_IONOSPHERE or add data/ionosphere.data)" + supplement
    data = load_dataset(path, "ionosphere", seed=0)
    dp, smc = logreg_gap(data, DESK["n_samples"], DESK["n_particles"], DESK["steps"])
    ok = abs(dp - smc) <= 3.0 and dp >= smc - 1.0
    return ok, f"DPSMC {dp:.2f} vs SMC {smc:.2f} (gap {dp - smc:+.2f})"


# ---------------------------------------------------------------------------
# criterion 9: algorithmic identities


def criterion_9():
    gmm = make_gmm40(2)
    cfg = RunConfig(target="gmm40", n_samples=128, n_particles=16, steps=64, xi=GMM40_XI, seed=9)
    plain = run_dpsmc(cfg, gmm)
    tempered = run_dpsmc_tempered(cfg.replace(beta_floor=1.0), gmm)
    bitwise = np.array_equal(plain.samples, tempered.samples)

    rs = np.random.default_rng(9)
    target = make_gaussian(np.array([0.5, -1.0, 2.0]), 0.7)
    path = DiffusionPath.for_target(target, 50)
    worst = 0.0
    for _ in range(200):
        k = int(rs.integers(1, 50))
        x_prev, x_new, y = rs.standard_normal((3, 3)) * 2
        got = incremental_logweight(path, k, x_prev, x_new, y)
        lam_k, lam_p = path.lam_at(k), path.lam_at(k - 1)
        # independent route: full posterior log-densities, target term included
        new = multivariate_normal.logpdf(np.sqrt(lam_k) * y, x_new, path.sigma_sq * (1 - lam_k)) + target.log_density_unnorm(y)
        old = multivariate_normal.logpdf(np.sqrt(lam_p) * y, x_prev, path.sigma_sq * (1 - lam_p)) + target.log_density_unnorm(y)
        worst = max(worst, abs(got - (new - old)))

    n, reps = 8, 10_000
    w = rs.dirichlet(np.ones(n))
    idx = stratified_resample(np.tile(np.log(w), (reps, 1)), rs)
    counts = np.stack([np.bincount(row, minlength=n) for row in idx])
    se = counts.std(axis=0) / np.sqrt(reps)
    dev = np.abs(counts.mean(axis=0) - n * w)
    unbiased = bool(np.all(dev <= 3 * se + 1e-12))
    ok = bitwise and worst <= 1e-10 and unbiased
    return ok, f"tempered beta=1 bitwise {bitwise}; weight identity max err {worst:.1e}; resampling max |bias|/SE {np.max(dev / np.maximum(se, 1e-300)):.2f}"


# ---------------------------------------------------------------------------
# criterion 10: batched-evaluation accounting


def criterion_10():
    gauss = make_gaussian(np.zeros(2), 1.0)
    cfg = RunConfig(target="gaussian", n_samples=8, n_particles=4, steps=1024, seed=10)
    dp = run_dpsmc(cfg, gauss)
    dp_ok = dp.batched_evals == expected_batched_evals(cfg, dp.halt_step) and 1000 <= dp.batched_evals <= 1050
    base = {}
    for algo, runner in (("ais", run_ais), ("smc_geometric", run_smc_geometric)):
        bcfg = RunConfig(target="gaussian", algorithm=algo, n_samples=8, steps=1024, mala_steps=128, seed=10)
        res = runner(bcfg, gauss)
        base[algo] = (res.batched_evals, expected_batched_evals(bcfg))
    base_ok = all(got == want and 130_000 <= got <= 132_000 for got, want in base.values())
    detail = f"DPSMC {dp.batched_evals} (closed form {expected_batched_evals(cfg, dp.halt_step)}); " + ", ".join(
        f"{a} {g} (closed form {w})" for a, (g, w) in base.items()
    )
    return dp_ok and base_ok, detail


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def _evaluate(n):
    start = time.perf_counter()
    ok, detail = CRITERIA[n]()
    return bool(ok), f"{detail} ({time.perf_counter() - start:.0f}s)"


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, acceptance_lines, capsys):
    ok, detail = _evaluate(number)
    line = _line(number, ok, detail)
    acceptance_lines.append(line)
    with capsys.disabled():
        print(f"\n{line}", flush=True)
    assert ok, line


if __name__ == "__main__":
    chosen = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    failures = 0
    for n in chosen:
        ok, detail = _evaluate(n)
        failures += not ok
        print(_line(n, ok, detail), flush=True)
    sys.exit(1 if failures else 0)
