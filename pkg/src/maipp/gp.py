"""Gaussian-process belief over the workspace (Matern 3/2 kernel).

The belief is conditioned on noisy point measurements and queried on a fixed
lattice (default 30x30, so an empty belief with unit signal variance has
covariance trace 900). Posterior mean and covariance follow the standard GP
regression equations

    mu  = K(X*, X) [K(X, X) + sn^2 I]^-1 y
    P   = K(X*, X*) - K(X*, X) [K(X, X) + sn^2 I]^-1 K(X, X*)

with a zero prior mean. A belief value is immutable between updates;
`add_measurements` returns a new belief, so snapshots can be read
concurrently and fantasy evaluations cannot corrupt live state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .fields import evaluation_grid

SQRT3 = np.sqrt(3.0)


class NumericalError(RuntimeError):
    """Cholesky factorization failed even after jitter escalation."""


@dataclass(frozen=True)
class KernelParams:
    """Matern 3/2 hyperparameters plus factorization jitter."""

    lengthscale: float = 0.2
    signal_variance: float = 1.0
    noise_variance: float = 1e-4
    jitter: float = 1e-8

    def __post_init__(self):
        if self.lengthscale <= 0 or self.signal_variance <= 0 or self.jitter <= 0:
            raise ValueError("lengthscale, signal_variance and jitter must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")


def kernel_matrix(params: KernelParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matern 3/2 gram matrix: sf2 * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    s = SQRT3 * cdist(a, b) / params.lengthscale
    return params.signal_variance * (1.0 + s) * np.exp(-s)


def kernel_eval(params: KernelParams, a, b) -> float:
    r = float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
    s = SQRT3 * r / params.lengthscale
    return params.signal_variance * (1.0 + s) * np.exp(-s)


MAX_JITTER = 1e-4


def _factor_gram(params: KernelParams, train_x: np.ndarray):
    """Cholesky of K(X,X) + sn^2 I (+ escalating jitter). Returns (L, jitter)."""
    gram = kernel_matrix(params, train_x, train_x)
    n = gram.shape[0]
    jitter = params.jitter
    while True:
        try:
            cf = cho_factor(gram + (params.noise_variance + jitter) * np.eye(n), lower=True)
            return cf, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > MAX_JITTER:
                cond = np.linalg.cond(gram + params.noise_variance * np.eye(n))
                raise NumericalError(
                    f"gram factorization failed for n={n}, cond={cond:.3e}, "
                    f"noise_variance={params.noise_variance}, max jitter {MAX_JITTER} reached"
                ) from None


class GpBelief:
    """GP posterior over a fixed query grid, extended by measurement batches."""

    def __init__(self, params: KernelParams, grid: np.ndarray | None = None,
                 train_x: np.ndarray | None = None, train_y: np.ndarray | None = None,
                 grid_resolution: int = 30):
        self.params = params
        self.grid = evaluation_grid(grid_resolution) if grid is None else np.asarray(grid, dtype=float)
        self.train_x = np.zeros((0, 2)) if train_x is None else np.asarray(train_x, dtype=float).reshape(-1, 2)
        self.train_y = np.zeros(0) if train_y is None else np.asarray(train_y, dtype=float).ravel()
        if self.train_x.shape[0] != self.train_y.shape[0]:
            raise ValueError("train_x and train_y length mismatch")
        self._cache: dict = {}

    @property
    def num_measurements(self) -> int:
        return self.train_x.shape[0]

    # -- factorization ----------------------------------------------------

    def _factor(self):
        if "cf" not in self._cache:
            cf, jitter = _factor_gram(self.params, self.train_x)
            self._cache["cf"] = cf
            self._cache["jitter"] = jitter
            self._cache["alpha"] = cho_solve(cf, self.train_y)
        return self._cache["cf"], self._cache["alpha"]

    # -- queries -----------------------------------------------------------

    def predict(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at arbitrary points (n, 2)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        prior_var = np.full(points.shape[0], self.params.signal_variance)
        if self.num_measurements == 0:
            return np.zeros(points.shape[0]), prior_var
        cf, alpha = self._factor()
        k_star = kernel_matrix(self.params, self.train_x, points)  # (n_train, n_pts)
        mean = k_star.T @ alpha
        v = solve_triangular(cf[0], k_star, lower=True)
        var = prior_var - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def _grid_posterior(self):
        if "grid_mean" not in self._cache:
            mean, var = self.predict(self.grid)
            self._cache["grid_mean"] = mean
            self._cache["grid_var"] = var
        return self._cache["grid_mean"], self._cache["grid_var"]

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """Full posterior (mean vector, covariance matrix) over the grid."""
        prior = kernel_matrix(self.params, self.grid, self.grid)
        if self.num_measurements == 0:
            return np.zeros(self.grid.shape[0]), prior
        cf, alpha = self._factor()
        k_star = kernel_matrix(self.params, self.train_x, self.grid)
        mean = k_star.T @ alpha
        v = solve_triangular(cf[0], k_star, lower=True)
        cov = prior - v.T @ v
        return mean, cov

    def grid_mean(self) -> np.ndarray:
        return self._grid_posterior()[0]

    def grid_variance(self) -> np.ndarray:
        return self._grid_posterior()[1]

    def covariance_trace(self) -> float:
        """Sum of posterior variances over the query grid (Tr of P)."""
        return float(self.grid_variance().sum())

    # -- updates -----------------------------------------------------------

    def add_measurements(self, batch) -> "GpBelief":
        """Return a new belief with (position, value) pairs appended."""
        batch = list(batch)
        if not batch:
            return self
        pos = np.array([p for p, _ in batch], dtype=float).reshape(-1, 2)
        val = np.array([v for _, v in batch], dtype=float)
        return GpBelief(
            self.params,
            grid=self.grid,
            train_x=np.vstack([self.train_x, pos]),
            train_y=np.concatenate([self.train_y, val]),
        )


@dataclass(frozen=True)
class InterestRegion:
    """Grid indices where the UCB mean + beta * variance clears mu_th."""

    indices: np.ndarray
    mu_th: float
    beta: float


def high_interest_set(belief: GpBelief, mu_th: float, beta: float) -> InterestRegion:
    """UCB selection on the current posterior: {i | mu_i + beta * P_ii >= mu_th}."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    mean, var = belief.grid_mean(), belief.grid_variance()
    idx = np.flatnonzero(mean + beta * var >= mu_th)
    return InterestRegion(indices=idx, mu_th=mu_th, beta=beta)


def risk_ucb(belief: GpBelief, beta: float) -> np.ndarray:
    """Conservative risk estimate mu + beta * sigma over the grid."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    mean, var = belief.grid_mean(), belief.grid_variance()
    return mean + beta * np.sqrt(var)


def risk_ucb_at(belief: GpBelief, points: np.ndarray, beta: float) -> np.ndarray:
    """mu + beta * sigma at arbitrary points (node positions, edge sites)."""
    mean, var = belief.predict(points)
    return mean + beta * np.sqrt(var)


class FantasyEvaluator:
    """Scores hypothetical measurement sites by predicted variance reduction.

    GP posterior variance does not depend on observed values, so conditioning
    on planned-but-unvisited sites gives the exact post-plan variance. The
    evaluator precomputes the current belief's factorization terms over a set
    of evaluation points, after which each candidate costs only a small-rank
    solve.
    """

    def __init__(self, belief: GpBelief, points: np.ndarray):
        self.belief = belief
        self.params = belief.params
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if belief.num_measurements > 0:
            cf, _ = belief._factor()
            self._chol = cf[0]
            k_star = kernel_matrix(self.params, belief.train_x, self.points)
            self._v_pts = solve_triangular(self._chol, k_star, lower=True)  # (n_train, n_pts)
            self.base_variance = np.maximum(
                self.params.signal_variance - np.einsum("ij,ij->j", self._v_pts, self._v_pts), 0.0
            )
        else:
            self._chol = None
            self._v_pts = np.zeros((0, self.points.shape[0]))
            self.base_variance = np.full(self.points.shape[0], self.params.signal_variance)

    def variance_with(self, sites: np.ndarray) -> np.ndarray:
        """Posterior variance at the evaluation points after measuring `sites`."""
        sites = np.atleast_2d(np.asarray(sites, dtype=float))
        if sites.shape[0] == 0:
            return self.base_variance.copy()
        k_ss = kernel_matrix(self.params, sites, sites)
        k_sp = kernel_matrix(self.params, sites, self.points)
        if self._chol is not None:
            k_xs = kernel_matrix(self.params, self.belief.train_x, sites)
            v_s = solve_triangular(self._chol, k_xs, lower=True)
            k_ss = k_ss - v_s.T @ v_s
            k_sp = k_sp - v_s.T @ self._v_pts
        n = sites.shape[0]
        cf, _ = _cho_with_jitter(k_ss + self.params.noise_variance * np.eye(n), self.params.jitter)
        w = solve_triangular(cf[0], k_sp, lower=True)
        return np.maximum(self.base_variance - np.einsum("ij,ij->j", w, w), 0.0)

    def trace_with(self, sites: np.ndarray, subset: np.ndarray | None = None) -> float:
        """Predicted variance sum after measuring `sites` (optionally on a subset)."""
        var = self.variance_with(sites)
        if subset is not None:
            var = var[subset]
        return float(var.sum())


def _cho_with_jitter(mat: np.ndarray, jitter: float):
    n = mat.shape[0]
    while True:
        try:
            return cho_factor(mat + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > MAX_JITTER:
                raise NumericalError(
                    f"fantasy factorization failed for n={n}, cond={np.linalg.cond(mat):.3e}"
                ) from None
