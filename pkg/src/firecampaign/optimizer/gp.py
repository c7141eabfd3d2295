"""Gaussian-process regression with a squared-exponential ARD kernel.

Inputs are scaled to the unit cube and outputs standardized before fitting;
predictions come back in natural units. Hyperparameters maximise the log
marginal likelihood over random log-uniform candidates followed by a
coordinate search in log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import ndtr

_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateData(UserWarning):
    pass


@dataclass(frozen=True)
class GpConfig:
    noise: float = 1e-6               # noise variance as a fraction of signal variance
    n_candidates: int = 64
    refine_rounds: int = 4
    initial_lengthscale: float = 0.2
    lengthscale_bounds: tuple[float, float] = (0.02, 5.0)
    signal_bounds: tuple[float, float] = (0.1, 10.0)
    seed: int = 0


@dataclass(frozen=True)
class GpModel:
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    X: np.ndarray          # normalized training inputs
    y: np.ndarray          # standardized training outputs
    y_mean: float
    y_scale: float
    lower: np.ndarray
    upper: np.ndarray
    chol: np.ndarray | None
    alpha: np.ndarray | None
    degenerate: bool = False
    log_likelihood: float = float("nan")

    def normalize(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x - self.lower) / (self.upper - self.lower)

    def predict_normalized(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Standardized mean and variance at normalized inputs ``z``."""
        z = np.atleast_2d(z)
        if self.degenerate:
            return np.zeros(len(z)), np.full(len(z), self.signal_var)
        ks = kernel(z, self.X, self.lengthscales, self.signal_var)
        mean = ks @ self.alpha
        v = linalg.solve_triangular(self.chol, ks.T, lower=True, check_finite=False)
        var = self.signal_var - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def standardize(self, value: float) -> float:
        return (value - self.y_mean) / self.y_scale


def kernel(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray, signal_var: float) -> np.ndarray:
    d = (a[:, None, :] - b[None, :, :]) / lengthscales
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


def _factor(X, y, lengthscales, signal_var, noise_var):
    K = kernel(X, X, lengthscales, signal_var)
    jitter = noise_var
    for _ in range(6):
        try:
            L = linalg.cholesky(K + jitter * np.eye(len(X)), lower=True, check_finite=False)
            alpha = linalg.cho_solve((L, True), y, check_finite=False)
            return L, alpha, jitter
        except linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-10)
    return None


def log_marginal_likelihood(X, y, lengthscales, signal_var, noise_var) -> float:
    f = _factor(X, y, lengthscales, signal_var, noise_var)
    if f is None:
        return -math.inf
    L, alpha, _ = f
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * _LOG_2PI)


def fit_gp(X, y, config: GpConfig | None = None, bounds=None) -> GpModel:
    """Fit a GP to inputs ``X`` (n, d) and outputs ``y`` (n,).

    ``bounds`` is a (lower, upper) pair used to scale inputs to the unit
    cube; by default the data range is used. Identical outputs produce a
    constant-mean model with prior variance (``degenerate=True``).
    """
    config = config or GpConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    if len(y) < 2:
        raise ValueError("need at least two observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("outputs must be finite")
    n, d = X.shape
    if bounds is None:
        lower, upper = X.min(axis=0), X.max(axis=0)
    else:
        lower, upper = (np.asarray(b, dtype=np.float64) for b in bounds)
    upper = np.where(upper > lower, upper, lower + 1.0)
    Z = (X - lower) / (upper - lower)

    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    if y_scale <= 1e-12 * max(1.0, abs(y_mean)):
        warnings.warn("all outputs identical; using a constant-mean model", DegenerateData, stacklevel=2)
        ls = np.full(d, config.initial_lengthscale)
        return GpModel(ls, 1.0, config.noise, Z, np.zeros(n), y_mean, 1.0, lower, upper,
                       None, None, degenerate=True)
    ys = (y - y_mean) / y_scale

    rng = np.random.default_rng(config.seed)
    lo_l, hi_l = np.log(config.lengthscale_bounds)
    lo_s, hi_s = np.log(config.signal_bounds)

    def score(theta: np.ndarray) -> float:
        ls, sv = np.exp(theta[:d]), math.exp(theta[d])
        return log_marginal_likelihood(Z, ys, ls, sv, config.noise * sv)

    start = np.concatenate([np.full(d, math.log(config.initial_lengthscale)), [0.0]])
    best_theta, best = start, score(start)
    for _ in range(config.n_candidates - 1):
        theta = np.concatenate([rng.uniform(lo_l, hi_l, d), [rng.uniform(lo_s, hi_s)]])
        s = score(theta)
        if s > best + 1e-9:
            best_theta, best = theta, s

    lows = np.concatenate([np.full(d, lo_l), [lo_s]])
    highs = np.concatenate([np.full(d, hi_l), [hi_s]])
    step = 0.5
    for _ in range(config.refine_rounds):
        for _ in range(20):
            improved = False
            for i in range(d + 1):
                for sign in (1.0, -1.0):
                    trial = best_theta.copy()
                    trial[i] = np.clip(trial[i] + sign * step, lows[i], highs[i])
                    s = score(trial)
                    if s > best + 1e-9:
                        best_theta, best, improved = trial, s, True
            if not improved:
                break
        step *= 0.5

    ls, sv = np.exp(best_theta[:d]), math.exp(best_theta[d])
    L, alpha, jitter = _factor(Z, ys, ls, sv, config.noise * sv)
    return GpModel(ls, sv, jitter, Z, ys, y_mean, y_scale, lower, upper, L, alpha, log_likelihood=best)


def fixed_gp(X, y, lengthscales, signal_var, noise_var=0.0, standardize=False, bounds=None) -> GpModel:
    """GP with given hyperparameters (no fitting); useful for closed-form checks."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    d = X.shape[1]
    if bounds is None:
        lower, upper = np.zeros(d), np.ones(d)
    else:
        lower, upper = (np.asarray(b, dtype=np.float64) for b in bounds)
    Z = (X - lower) / (upper - lower)
    if standardize:
        y_mean, y_scale = float(np.mean(y)), float(np.std(y)) or 1.0
    else:
        y_mean, y_scale = 0.0, 1.0
    ys = (y - y_mean) / y_scale
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=np.float64), (d,)).copy()
    # a tiny floor keeps the factorization defined when noise_var is zero
    K = kernel(Z, Z, ls, signal_var) + max(noise_var, 1e-14 * signal_var) * np.eye(len(Z))
    L = linalg.cholesky(K, lower=True)
    alpha = linalg.cho_solve((L, True), ys)
    return GpModel(ls, float(signal_var), float(noise_var), Z, ys, y_mean, y_scale, lower, upper, L, alpha)


def gp_posterior(model: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and (latent) variance in natural output units."""
    mean, var = model.predict_normalized(model.normalize(x))
    return model.y_mean + model.y_scale * mean, var * model.y_scale ** 2


def ei_from_moments(mean, sigma, best, jitter=0.0):
    """Expected improvement for maximisation given predictive mean and std."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    delta = mean - best - jitter
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, delta / np.where(sigma > 0, sigma, 1.0), 0.0)
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        ei = np.where(sigma > 0, delta * ndtr(z) + sigma * pdf, np.maximum(delta, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(model: GpModel, x, best_value: float, jitter: float = 0.0):
    """EI at natural-unit points ``x`` against ``best_value`` (natural units)."""
    mean, var = gp_posterior(model, x)
    return ei_from_moments(mean, np.sqrt(var), best_value, jitter)
