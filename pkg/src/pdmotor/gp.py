"""Exact Gaussian-process regression with a squared-exponential kernel.

The prior mean is zero and the covariance is

    k(x, x') = amplitude**2 * exp(-|x - x'|**2 / (2 * length_scale**2))
               + noise * [x and x' are the same training point]

Hyperparameters are fitted by gradient descent on the negative log
marginal likelihood in log space, which keeps them positive.
"""
import base64
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConfigError, DimensionMismatch, NumericalBreakdown

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_STOP = 1e-4
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Hyperparameters:
    amplitude: float  # signal standard deviation
    length_scale: float
    noise: float  # variance added on the diagonal

    def __post_init__(self):
        if not all(np.isfinite(v) and v > 0 for v in self.as_array()):
            raise ConfigError(f"hyperparameters must be positive and finite, got {self}")

    def as_array(self):
        return np.array([self.amplitude, self.length_scale, self.noise], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class TrainOptions:
    max_iters: int = 100
    step_size: float = 0.5
    grad_tol: float = 1e-4
    min_hyperparam: float = 1e-6
    max_halvings: int = 30
    step_growth: float = 1.5
    max_step: float = 2.0
    subsample_cap: int = 4000
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.step_size <= 0 or self.grad_tol <= 0 or self.min_hyperparam <= 0:
            raise ConfigError("step_size, grad_tol and min_hyperparam must be positive")


@dataclass
class GpModel:
    theta: Hyperparameters
    X: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray  # lower factor of the noisy Gram matrix (jitter included)
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n(self):
        return self.X.shape[0]


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def kernel_se(x, x2, theta, same_index=False):
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise DimensionMismatch(f"input dimensions differ: {x.shape} vs {x2.shape}")
    sq = float(np.sum((x - x2) ** 2))
    value = theta.amplitude ** 2 * np.exp(-sq / (2.0 * theta.length_scale ** 2))
    return value + (theta.noise if same_index else 0.0)


def sq_distances(X):
    return squareform(pdist(_as_matrix(X), "sqeuclidean"))


def gram_matrix(X, theta, sq=None):
    """Noisy Gram matrix; exactly symmetric with diagonal amplitude**2 + noise."""
    if sq is None:
        sq = sq_distances(X)
    K = theta.amplitude ** 2 * np.exp(-sq / (2.0 * theta.length_scale ** 2))
    K[np.diag_indices_from(K)] = theta.amplitude ** 2 + theta.noise
    return K


def cross_kernel(Xs, X, theta):
    sq = cdist(_as_matrix(Xs), _as_matrix(X), "sqeuclidean")
    return theta.amplitude ** 2 * np.exp(-sq / (2.0 * theta.length_scale ** 2))


def cholesky_with_jitter(K):
    """Lower Cholesky factor, escalating diagonal jitter if needed.

    Jitter is relative to the mean diagonal, from 1e-10 up to 1e-4 in
    decades. Returns ``(L, jitter)`` where ``jitter`` is the absolute value
    added.
    """
    scale = float(np.mean(np.diag(K)))
    jitter = 0.0
    rel = JITTER_START
    while True:
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(len(K))
            return linalg.cholesky(Kj, lower=True, check_finite=True), jitter
        except (linalg.LinAlgError, ValueError):
            if rel > JITTER_STOP * (1 + 1e-9):
                raise NumericalBreakdown(
                    f"Gram matrix not positive definite even with relative jitter {JITTER_STOP:g}"
                ) from None
            jitter = rel * scale
            rel *= 10.0


class _Fit:
    """Cholesky factor, solve vector and NLML at one hyperparameter point."""

    def __init__(self, X, y, theta, sq=None):
        self.theta = theta
        self.sq = sq_distances(X) if sq is None else sq
        self.K = gram_matrix(X, theta, self.sq)
        self.L, self.jitter = cholesky_with_jitter(self.K)
        self.alpha = linalg.cho_solve((self.L, True), y)
        n = len(y)
        log_det = 2.0 * np.sum(np.log(np.diag(self.L)))
        self.nlml = float(0.5 * y @ self.alpha + 0.5 * log_det + 0.5 * n * _LOG_2PI)

    def gradient(self):
        th = self.theta
        n = len(self.alpha)
        K_inv = linalg.cho_solve((self.L, True), np.eye(n))
        # dNLML/dp = 0.5 tr((K^-1 - alpha alpha^T) dK/dp)
        W = K_inv - np.outer(self.alpha, self.alpha)
        S = np.exp(-self.sq / (2.0 * th.length_scale ** 2))
        dK_damp = 2.0 * th.amplitude * S
        dK_dlen = th.amplitude ** 2 * S * self.sq / th.length_scale ** 3
        return np.array([
            0.5 * np.sum(W * dK_damp),
            0.5 * np.sum(W * dK_dlen),
            0.5 * np.trace(W),
        ])


def _check_xy(X, y):
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(X):
        raise DimensionMismatch(f"{len(X)} inputs but {len(y)} targets")
    return X, y


def nlml(X, y, theta):
    """Negative log marginal likelihood."""
    X, y = _check_xy(X, y)
    return _Fit(X, y, theta).nlml


def nlml_gradient(X, y, theta):
    """Analytic gradient w.r.t. (amplitude, length_scale, noise)."""
    X, y = _check_xy(X, y)
    return _Fit(X, y, theta).gradient()


def subsample(n, cap, seed):
    """Sorted indices of a seeded uniform subsample of size ``min(n, cap)``."""
    if cap is None or n <= cap:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=cap, replace=False))


def train(X, y, theta0, opts=None, meta=None):
    """Fit hyperparameters by gradient descent and condition on the data.

    Steepest descent on ``nlml / n`` in log-hyperparameter space. Each step
    moves a distance ``step`` along the normalized negative gradient,
    starting at ``opts.step_size``. A rejected step (objective not
    decreased, or the factorization broke down) is halved and retried; an
    accepted step grows the next one by ``opts.step_growth`` up to
    ``opts.max_step``. Normalizing the direction lets the search cross the
    flat plateaus that very large amplitude/length-scale pairs produce.
    Stops after ``max_iters`` iterations, when the log-space gradient norm
    drops to ``grad_tol``, or when no step size decreases the objective.
    """
    opts = opts or TrainOptions()
    X, y = _check_xy(X, y)
    if len(y) < 2:
        raise DimensionMismatch("training needs at least 2 points")
    idx = subsample(len(y), opts.subsample_cap, opts.seed)
    X, y = X[idx], y[idx]
    n = len(y)
    sq = sq_distances(X)
    floor = np.log(opts.min_hyperparam)

    eta = np.log(theta0.as_array())
    fit = _Fit(X, y, theta0, sq)
    history = [fit.nlml]
    iters = 0
    step = opts.step_size
    for _ in range(opts.max_iters):
        g = fit.gradient() * fit.theta.as_array() / n
        g_norm = np.linalg.norm(g)
        if g_norm <= opts.grad_tol:
            break
        direction = g / g_norm
        accepted = None
        for _ in range(opts.max_halvings):
            trial_eta = np.maximum(eta - step * direction, floor)
            try:
                trial = _Fit(X, y, Hyperparameters.from_array(np.exp(trial_eta)), sq)
            except NumericalBreakdown:
                trial = None
            if trial is not None and trial.nlml < fit.nlml:
                accepted = (trial_eta, trial)
                break
            step *= 0.5
        if accepted is None:
            break
        eta, fit = accepted
        step = min(step * opts.step_growth, opts.max_step)
        history.append(fit.nlml)
        iters += 1

    info = dict(meta or {})
    info.update({
        "n_train": int(n),
        "iterations": iters,
        "nlml": fit.nlml,
        "nlml_start": history[0],
        "theta0": theta0.as_array().tolist(),
        "jitter": fit.jitter,
    })
    log.debug("trained GP on %d points in %d iterations: %s", n, iters, fit.theta)
    return GpModel(fit.theta, X, fit.alpha, fit.L, fit.jitter, info)


def condition(X, y, theta, meta=None):
    """Build a :class:`GpModel` at fixed hyperparameters (no optimization)."""
    X, y = _check_xy(X, y)
    fit = _Fit(X, y, theta)
    return GpModel(theta, X, fit.alpha, fit.L, fit.jitter, dict(meta or {}))


def predict_batch(model, Xs, return_var=True):
    Xs = _as_matrix(Xs)
    if Xs.shape[1] != model.d:
        raise DimensionMismatch(f"query has {Xs.shape[1]} dims, model expects {model.d}")
    Ks = cross_kernel(Xs, model.X, model.theta)
    mean = Ks @ model.alpha
    if not return_var:
        return mean
    v = linalg.solve_triangular(model.chol, Ks.T, lower=True)
    prior = model.theta.amplitude ** 2 + model.theta.noise
    var = np.maximum(prior - np.sum(v * v, axis=0), 0.0)
    return mean, var


def predict(model, x):
    """Posterior (mean, variance) at a single query point."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != model.d:
        raise DimensionMismatch(f"query has {x.shape[0]} dims, model expects {model.d}")
    mean, var = predict_batch(model, x[None, :])
    return float(mean[0]), float(var[0])


# ---------------------------------------------------------------------------
# serialization


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    return np.frombuffer(base64.b64decode(d["data"]), dtype=d["dtype"]).reshape(d["shape"]).copy()


def model_to_dict(model, **extra):
    return {
        "format": "pdmotor-gp-v1",
        **extra,
        "theta": model.theta.as_array().tolist(),
        "jitter": model.jitter,
        "meta": model.meta,
        "X": _encode(model.X),
        "alpha": _encode(model.alpha),
        "chol": _encode(model.chol),
    }


def model_from_dict(d):
    if d.get("format") != "pdmotor-gp-v1":
        raise ConfigError(f"unsupported model format {d.get('format')!r}")
    return GpModel(
        theta=Hyperparameters.from_array(d["theta"]),
        X=_decode(d["X"]),
        alpha=_decode(d["alpha"]),
        chol=_decode(d["chol"]),
        jitter=float(d["jitter"]),
        meta=d.get("meta", {}),
    )


def save_model(model, path, **extra):
    Path(path).write_text(json.dumps(model_to_dict(model, **extra)), encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def with_meta(model, **kw):
    return replace(model, meta={**model.meta, **kw})
