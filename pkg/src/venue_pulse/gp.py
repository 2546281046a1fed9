"""Exact Gaussian Process regression with a day x week product-of-RBF kernel.

Inputs are hours of the week. In periodic mode (the default) each RBF factor
acts on the chord distance between points wrapped onto circles of
circumference 24 h and 168 h, which is what lets the product kernel encode
daily and weekly periodicity. The chord ``(p / pi) * sin(pi * d / p)`` agrees
with the wrap-around distance ``d`` for nearby hours but, unlike it, keeps the
kernel positive semi-definite on every input set. ``periodic=False`` gives
plain RBFs on linear distance; the online task uses that mode on month indices.

Targets may be 1-D (n observations) or 2-D (r replicate series observed at
the same n inputs). Replicates are collapsed to their means with noise
``sigma_n^2 / r``; posterior and marginal likelihood are identical to fitting
the r*n stacked points directly.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .errors import GPError

DAY_HOURS = 24.0
WEEK_HOURS = 168.0
JITTER_START = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class KernelParams:
    variance: float
    length_day: float
    length_week: float
    noise: float = 0.0
    periodic: bool = True

    def __post_init__(self):
        if not (self.variance > 0 and self.length_day > 0 and self.length_week > 0):
            raise GPError(f"kernel parameters must be positive: {self}")
        if not self.noise >= 0:
            raise GPError(f"noise variance must be non-negative: {self.noise}")


def _distances(x1: np.ndarray, x2: np.ndarray, period: Optional[float]) -> np.ndarray:
    d = np.abs(x1[:, None] - x2[None, :])
    if period is None:
        return d
    return (period / math.pi) * np.abs(np.sin(math.pi * np.mod(d, period) / period))


def kernel_matrix(x1, x2, params: KernelParams) -> np.ndarray:
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if params.periodic:
        d_day = _distances(x1, x2, DAY_HOURS)
        d_week = _distances(x1, x2, WEEK_HOURS)
    else:
        d_day = d_week = _distances(x1, x2, None)
    expo = d_day ** 2 / (2.0 * params.length_day ** 2) + d_week ** 2 / (2.0 * params.length_week ** 2)
    return params.variance * np.exp(-expo)


def kernel_eval(x: float, x2: float, params: KernelParams) -> float:
    return float(kernel_matrix([x], [x2], params)[0, 0])


@dataclass
class GPModel:
    X: np.ndarray           # distinct training inputs
    y: np.ndarray           # centered (replicate-mean) targets
    params: KernelParams
    chol: np.ndarray        # lower factor of K + (noise/r + jitter) I
    alpha: np.ndarray
    offset: float           # centering constant (prior mean is zero on centered data)
    replicates: int = 1
    jitter: float = JITTER_START
    within_ss: float = 0.0  # replicate scatter around the means
    digest: str = ""

    @property
    def n_obs(self) -> int:
        return self.X.size * self.replicates


def _digest(X, y) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return h.hexdigest()


def fit(X, y, params: KernelParams) -> GPModel:
    """Factorize the training covariance and solve for the weights.

    Jitter starts at 1e-8 (relative to the signal variance) and grows tenfold
    up to 1e-4 if the Cholesky factorization fails.
    """
    X = np.asarray(X, dtype=float).ravel()
    Y = np.asarray(y, dtype=float)
    if Y.ndim == 1:
        Y = Y[None, :]
    if Y.ndim != 2 or Y.shape[1] != X.size or X.size == 0:
        raise GPError(f"shape mismatch: X has {X.size} points, y has shape {np.shape(y)}")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise GPError("non-finite training inputs or targets")
    r = Y.shape[0]
    offset = float(Y.mean())
    ybar = Y.mean(axis=0)
    within = float(((Y - ybar) ** 2).sum()) if r > 1 else 0.0
    yc = ybar - offset

    K = kernel_matrix(X, X, params)
    eye = np.eye(X.size)
    jitter = JITTER_START
    while True:
        try:
            L = cholesky(K + ((params.noise + jitter * params.variance) / r) * eye, lower=True,
                         check_finite=False)
            break
        except LinAlgError:
            jitter *= 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise GPError(f"covariance matrix is ill-conditioned: Cholesky failed even with "
                              f"jitter {JITTER_MAX:g} (params={params})") from None
    alpha = solve_triangular(L.T, solve_triangular(L, yc, lower=True, check_finite=False),
                             lower=False, check_finite=False)
    return GPModel(X, yc, params, L, alpha, offset, r, jitter, within, _digest(X, Y))


def predict(model: GPModel, Xs) -> tuple:
    """Posterior mean (un-centered) and latent variance at ``Xs``."""
    Xs = np.atleast_1d(np.asarray(Xs, dtype=float))
    Ks = kernel_matrix(Xs, model.X, model.params)
    mean = Ks @ model.alpha + model.offset
    v = solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = model.params.variance - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def log_marginal_likelihood(model: GPModel) -> float:
    m = model.X.size
    lml = (-0.5 * float(model.y @ model.alpha) - float(np.log(np.diag(model.chol)).sum())
           - 0.5 * m * math.log(2 * math.pi))
    r = model.replicates
    if r > 1:
        s2 = model.params.noise + model.jitter * model.params.variance
        lml += (-0.5 * m * math.log(r) - model.within_ss / (2 * s2)
                - 0.5 * (r - 1) * m * math.log(2 * math.pi * s2))
    return lml


@dataclass(frozen=True)
class HyperGrid:
    """Candidate hyperparameters; with ``relative`` the variance and noise
    entries are multiples of the empirical target variance."""

    length_day: tuple = (1.0, 2.0, 4.0, 8.0)
    length_week: tuple = (6.0, 12.0, 24.0, 48.0)
    variance: tuple = (0.5, 1.0, 2.0)
    noise: tuple = (1e-4, 1e-3, 1e-2)
    relative: bool = True
    periodic: bool = True

    def candidates(self, y) -> list:
        scale = 1.0
        if self.relative:
            v = float(np.var(np.asarray(y, dtype=float)))
            scale = v if v > 0 else 1.0
        return [KernelParams(s * scale, ld, lw, n * scale, self.periodic)
                for ld, lw, s, n in itertools.product(self.length_day, self.length_week,
                                                      self.variance, self.noise)]

    def __len__(self):
        return len(self.length_day) * len(self.length_week) * len(self.variance) * len(self.noise)


DEFAULT_GRID = HyperGrid()


def grid_scores(X, y, grid: HyperGrid = DEFAULT_GRID) -> list:
    """``[(params, log marginal likelihood)]`` in grid order; failed fits score NaN."""
    out = []
    for params in grid.candidates(y):
        try:
            lml = log_marginal_likelihood(fit(X, y, params))
        except GPError:
            lml = float("nan")
        out.append((params, lml))
    return out


def optimize_hyper(X, y, grid: HyperGrid = DEFAULT_GRID) -> KernelParams:
    """Exhaustive grid search for the maximum marginal likelihood; first maximum wins."""
    if len(grid) == 0:
        raise GPError("empty hyperparameter grid")
    best, best_lml = None, -math.inf
    for params, lml in grid_scores(X, y, grid):
        if not math.isnan(lml) and lml > best_lml:
            best, best_lml = params, lml
    if best is None:
        raise GPError("every grid point produced an undefined likelihood")
    return best


def dump_model(model: GPModel) -> str:
    """JSON record of the fitted model for provenance in reports."""
    return json.dumps({"params": asdict(model.params), "offset": model.offset,
                       "replicates": model.replicates, "n_inputs": int(model.X.size),
                       "jitter": model.jitter, "training_digest": model.digest},
                      sort_keys=True)
