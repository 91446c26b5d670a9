"""Benchmark target distributions.

Every target evaluates a batch of points at once: ``x`` has shape ``(..., dim)``
and log-densities come back with shape ``(...)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logsumexp

LOG_2PI = np.log(2.0 * np.pi)


class Target:
    """Base class for an unnormalized target density.

    Attributes
    ----------
    name : str
    dim : int
    second_moment : float
        ``E[||X||^2]`` under the target, exact or a declared approximation.
    radius, tau : float or None
        Compact-support radius and Gaussian-convolution width used to set the
        initial auxiliary-particle proposal.
    """

    name = "target"
    radius = None
    tau = None

    def log_density_unnorm(self, x):
        return self.log_density_and_grad(x)[0]

    def grad_log_density(self, x):
        return self.log_density_and_grad(x)[1]

    def log_density_and_grad(self, x):
        raise NotImplementedError

    def sample(self, n, rng):
        raise NotImplementedError(f"target {self.name!r} has no exact sampler")

    @property
    def has_sampler(self):
        return type(self).sample is not Target.sample

    def init_variance(self):
        """Variance of the isotropic Gaussian used to draw initial particles."""
        if self.radius is not None and self.tau is not None:
            return self.radius**2 * self.dim + self.tau**2
        return self.second_moment / self.dim


class IsotropicGaussian(Target):
    """N(mean, variance * I)."""

    name = "gaussian"

    def __init__(self, mean, variance):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if not variance > 0:
            raise ValueError("variance must be positive")
        self.mean = mean
        self.variance = float(variance)
        self.dim = mean.size
        self.second_moment = float(mean @ mean + self.dim * self.variance)

    def log_density_and_grad(self, x):
        diff = np.asarray(x, dtype=float) - self.mean
        logp = -0.5 * np.sum(diff**2, axis=-1) / self.variance - 0.5 * self.dim * (LOG_2PI + np.log(self.variance))
        return logp, -diff / self.variance

    def sample(self, n, rng):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal((n, self.dim))


class GaussianMixture(Target):
    """Gaussian mixture with diagonal component covariances.

    Parameters
    ----------
    weights : (C,) array, positive, normalised internally
    means : (C, d) array
    variances : (C, d) array or broadcastable
    """

    name = "gmm"

    def __init__(self, weights, means, variances):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        n_comp, self.dim = self.means.shape
        self.variances = np.broadcast_to(np.asarray(variances, dtype=float), (n_comp, self.dim)).copy()
        weights = np.asarray(weights, dtype=float)
        if np.any(self.variances <= 0) or np.any(weights <= 0):
            raise ValueError("weights and variances must be positive")
        self.weights = weights / weights.sum()
        self.log_weights = np.log(self.weights)
        self.second_moment = float(self.weights @ (np.sum(self.means**2, axis=1) + np.sum(self.variances, axis=1)))
        self._prec = 1.0 / self.variances
        self._prec_mean = self.means * self._prec
        self._const = (
            self.log_weights
            - 0.5 * np.sum(self.means**2 * self._prec, axis=1)
            - 0.5 * np.sum(np.log(self.variances), axis=1)
            - 0.5 * self.dim * LOG_2PI
        )

    def _component_logp(self, x):
        # expand the quadratic form so everything is a matmul
        return -0.5 * (x**2) @ self._prec.T + x @ self._prec_mean.T + self._const

    def log_density_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        comp = self._component_logp(x)
        # max-shifted log-sum-exp that also yields the responsibilities in one pass
        top = comp.max(axis=-1, keepdims=True)
        resp = np.exp(comp - top)
        total = resp.sum(axis=-1, keepdims=True)
        resp /= total
        logp = (top + np.log(total))[..., 0]
        grad = resp @ self._prec_mean - x * (resp @ self._prec)
        return logp, grad

    def log_density_unnorm(self, x):
        return logsumexp(self._component_logp(np.asarray(x, dtype=float)), axis=-1)

    def sample(self, n, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal((n, self.dim))


class Funnel(Target):
    """Hierarchical funnel: first coordinate N(0, eta_sq), the rest N(0, exp(x_1))."""

    name = "funnel"

    def __init__(self, eta_sq=3.0, dim=10):
        if not eta_sq > 0:
            raise ValueError("eta_sq must be positive")
        self.eta_sq = float(eta_sq)
        self.dim = int(dim)
        self.second_moment = self.eta_sq + (self.dim - 1) * np.exp(self.eta_sq / 2)
        # values used by the benchmark configuration
        self.radius = 2.12
        self.tau = 0.0

    def log_density_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        v = x[..., 0]
        rest = x[..., 1:]
        inv_scale = np.exp(-v)
        sq = np.sum(rest**2, axis=-1)
        n_rest = self.dim - 1
        logp = (
            -0.5 * v**2 / self.eta_sq
            - 0.5 * np.log(2 * np.pi * self.eta_sq)
            - 0.5 * sq * inv_scale
            - 0.5 * n_rest * v
            - 0.5 * n_rest * LOG_2PI
        )
        grad = np.empty_like(x)
        grad[..., 0] = -v / self.eta_sq + 0.5 * sq * inv_scale - 0.5 * n_rest
        grad[..., 1:] = -rest * inv_scale[..., None]
        return logp, grad

    def sample(self, n, rng):
        v = np.sqrt(self.eta_sq) * rng.standard_normal(n)
        rest = np.exp(v / 2)[:, None] * rng.standard_normal((n, self.dim - 1))
        return np.column_stack([v, rest])


class Rings(Target):
    """Concentric rings in the plane.

    The density is ``p_r(||x||) / (2 pi)`` where ``p_r`` is an equal-weight mixture of
    ``N(i, scale^2)`` over the ring radii. There is no ``1/r`` Jacobian factor, so the
    radial marginal of a sample is proportional to ``r p_r(r)``.
    """

    name = "rings"

    def __init__(self, radii=(1.0, 2.0, 3.0, 4.0), scale=0.15):
        self.radii = np.asarray(radii, dtype=float)
        self.scale = float(scale)
        self.dim = 2
        # E[r^2] under p_r, the conventional benchmark value (7.5225). Samples of this
        # density have a larger second moment (about 10.07) because of the missing Jacobian.
        self.second_moment = float(np.mean(self.radii**2) + self.scale**2)
        self.radius = float(self.radii.max() / np.sqrt(2))
        self.tau = self.scale

    def _radial(self, r):
        z = (r[..., None] - self.radii) / self.scale
        comp = -0.5 * z**2 - np.log(self.scale) - 0.5 * LOG_2PI - np.log(len(self.radii))
        logp = logsumexp(comp, axis=-1)
        resp = np.exp(comp - logp[..., None])
        dlogp = -np.sum(resp * z, axis=-1) / self.scale
        return logp, dlogp

    def log_density_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x**2, axis=-1))
        logp_r, dlogp_r = self._radial(r)
        logp = logp_r - LOG_2PI
        safe_r = np.where(r > 0, r, 1.0)
        grad = np.where((r > 0)[..., None], (dlogp_r / safe_r)[..., None] * x, 0.0)
        return logp, grad

    def sample(self, n, rng):
        from scipy.stats import norm

        s = self.scale
        mass = self.radii * norm.cdf(self.radii / s) + s * norm.pdf(self.radii / s)
        comp = rng.choice(len(self.radii), size=n, p=mass / mass.sum())
        r = np.empty(n)
        todo = np.arange(n)
        while todo.size:
            centre = self.radii[comp[todo]]
            prop = centre + s * rng.standard_normal(todo.size)
            cap = centre + 8 * s
            ok = (prop > 0) & (rng.uniform(size=todo.size) * cap < np.minimum(prop, cap))
            r[todo[ok]] = prop[ok]
            todo = todo[~ok]
        theta = rng.uniform(0, 2 * np.pi, size=n)
        return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


class LogisticRegression(Target):
    """Bayesian logistic regression posterior over ``(w, b)``.

    Prior ``w ~ N(0, I)``, ``b ~ N(0, 2.5^2)``; the parameter vector stores the
    intercept last.
    """

    name = "logreg"
    bias_var = 2.5**2

    def __init__(self, data, chunk=4096):
        self.data = data
        self.features = data.features[data.train]
        self.labels = data.labels[data.train].astype(float)
        if self.features.shape[0] == 0:
            raise ValueError("empty training split")
        self.n_features = self.features.shape[1]
        self.dim = self.n_features + 1
        self.second_moment = self.dim + self.bias_var
        self.radius = 2.5 / np.sqrt(self.dim + 1)
        self.tau = 0.0
        self._chunk = chunk

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"parameter dimension {theta.shape[-1]} does not match {self.dim}")
        return theta

    def log_density_and_grad(self, theta):
        theta = self._check(theta)
        shape = theta.shape[:-1]
        flat = theta.reshape(-1, self.dim)
        logp = np.empty(flat.shape[0])
        grad = np.empty_like(flat)
        for s in range(0, flat.shape[0], self._chunk):
            th = flat[s : s + self._chunk]
            w, b = th[:, :-1], th[:, -1]
            z = w @ self.features.T + b[:, None]
            ll = self.labels * log_expit(z) + (1 - self.labels) * log_expit(-z)
            logp[s : s + self._chunk] = ll.sum(axis=1) - 0.5 * np.sum(w**2, axis=1) - 0.5 * b**2 / self.bias_var
            resid = self.labels - expit(z)
            grad[s : s + self._chunk, :-1] = resid @ self.features - w
            grad[s : s + self._chunk, -1] = resid.sum(axis=1) - b / self.bias_var
        return logp.reshape(shape), grad.reshape(shape + (self.dim,))


def make_gaussian(mean, variance):
    """Isotropic Gaussian target N(mean, variance * I)."""
    return IsotropicGaussian(mean, variance)


def make_gmm40(dim, seed=0, n_components=40, low=-20.0, high=20.0):
    """Equal-weight mixture of unit-covariance Gaussians with uniformly drawn means."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    means = np.random.default_rng(seed).uniform(low, high, size=(n_components, dim))
    target = GaussianMixture(np.ones(n_components), means, 1.0)
    target.name = "gmm40"
    target.radius = float(np.max(np.linalg.norm(means - means.mean(axis=0), axis=1)) / np.sqrt(dim))
    target.tau = 1.0
    return target


def make_rings():
    return Rings()


def make_funnel(eta_sq=3.0):
    return Funnel(eta_sq)


def make_logreg(data):
    return LogisticRegression(data)


def make_bimodal(separation=4.0, variances=((1.0, 0.02), (1.0, 0.02))):
    """Two-component anisotropic Gaussian mixture in the plane, for score-estimator studies."""
    means = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
    target = GaussianMixture([0.5, 0.5], means, np.asarray(variances, dtype=float))
    target.name = "bimodal"
    return target


# ---------------------------------------------------------------------------
# datasets

LABEL_MAPS = {
    "ionosphere": {"g": 1, "b": 0},
    "sonar": {"M": 1, "R": 0},
    "generic_csv": {"0": 0, "1": 1, "0.0": 0, "1.0": 1},
}


@dataclass
class LabeledDataset:
    """Binary classification data with a fixed train/test split.

    Features are already standardised with the train-split statistics, which are kept
    in ``mean`` and ``std`` for reproducibility.
    """

    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    test: np.ndarray
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)
    split_seed: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        both = np.concatenate([self.train, self.test])
        if len(np.intersect1d(self.train, self.test)) or not np.array_equal(np.sort(both), np.arange(len(labels))):
            raise ValueError("train and test indices must partition the rows")

    def sidecar(self):
        return {
            "split_seed": self.split_seed,
            "train": self.train.tolist(),
            "test": self.test.tolist(),
            "mean": None if self.mean is None else self.mean.tolist(),
            "std": None if self.std is None else self.std.tolist(),
        }

    def write_sidecar(self, path):
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh)


def split_and_standardize(features, labels, seed=0, test_fraction=0.2):
    """Random train/test split, then standardise with train-split statistics."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    m = len(labels)
    perm = np.random.default_rng(seed).permutation(m)
    n_test = int(round(test_fraction * m))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    mean = features[train].mean(axis=0)
    std = np.maximum(features[train].std(axis=0), 1e-8)
    return LabeledDataset((features - mean) / std, labels, train, test, mean, std, seed)


def load_dataset(path, format="generic_csv", seed=0):
    """Read a CSV whose last column is the class label.

    A non-numeric first row is treated as a header.
    """
    if format not in LABEL_MAPS:
        raise ValueError(f"unknown dataset format {format!r}")
    mapping = LABEL_MAPS[format]
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0][:-1]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise ValueError("no data rows")
    width = len(rows[0])
    feats, labels = [], []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {i} has {len(row)} columns, expected {width}")
        try:
            feats.append([float(c) for c in row[:-1]])
        except ValueError:
            raise ValueError(f"unparseable row {i}") from None
        symbol = row[-1].strip()
        if format == "generic_csv":
            # numeric labels may be written in any float format, e.g. 1.000000
            try:
                symbol = repr(float(symbol))
            except ValueError:
                pass
        if symbol not in mapping:
            raise ValueError(f"unknown label symbol {row[-1].strip()!r} in row {i}")
        labels.append(mapping[symbol])
    return split_and_standardize(np.array(feats), np.array(labels), seed)


TARGETS = {
    "gaussian": make_gaussian,
    "gmm40": make_gmm40,
    "rings": make_rings,
    "funnel": make_funnel,
    "bimodal": make_bimodal,
}
