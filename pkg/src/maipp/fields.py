"""Ground-truth field generation for the planning workspace.

Interest and risk are latent scalar fields over the unit square, each built
as an average of randomly sampled 2D Gaussian bumps and normalized to peak 1
on the evaluation grid. Measurements observe the mixed field
y_mix(x) = y_it(x) * (1 - lambda * y_rk(x)) (or the raw risk field) plus
Gaussian noise. Planners never see these objects directly; they only receive
noisy point measurements.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

WORKSPACE_LO = 0.0
WORKSPACE_HI = 1.0


class ConfigError(ValueError):
    """Raised when generation ranges are inconsistent (e.g. min > max)."""


class DomainError(ValueError):
    """Raised when a query point falls outside the unit-square workspace."""


@dataclass(frozen=True)
class GaussianComponent:
    """One Gaussian bump: peak `amplitude` at `center`, shape from `spread`.

    `spread` is a 2x2 symmetric positive-definite matrix in workspace
    units^2 (it plays the role of a covariance matrix in the bump's
    quadratic form, but the bump itself is unnormalized: value at the
    center is exactly `amplitude`).
    """

    center: tuple[float, float]
    spread: tuple[tuple[float, float], tuple[float, float]]
    amplitude: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        s = np.asarray(self.spread, dtype=float)
        if not (WORKSPACE_LO <= c[0] <= WORKSPACE_HI and WORKSPACE_LO <= c[1] <= WORKSPACE_HI):
            raise ConfigError(f"component center {c} outside [0,1]^2")
        if not np.allclose(s, s.T):
            raise ConfigError("spread matrix must be symmetric")
        eigvals = np.linalg.eigvalsh(s)
        if np.any(eigvals <= 0):
            raise ConfigError(f"spread matrix must be positive definite, eigenvalues {eigvals}")
        if self.amplitude < 0:
            raise ConfigError("amplitude must be non-negative")

    def spread_matrix(self) -> np.ndarray:
        return np.asarray(self.spread, dtype=float)


@dataclass(frozen=True)
class GenerationConfig:
    """Sampling ranges for random field specs."""

    interest_count_range: tuple[int, int] = (8, 12)
    risk_count_range: tuple[int, int] = (4, 6)
    std_range: tuple[float, float] = (0.05, 0.2)
    anisotropy_range: tuple[float, float] = (0.7, 1.0)
    lambda_mix: float = 0.5
    noise_std: float = 0.01

    def validate(self):
        for name, (lo, hi) in (
            ("interest_count_range", self.interest_count_range),
            ("risk_count_range", self.risk_count_range),
            ("std_range", self.std_range),
            ("anisotropy_range", self.anisotropy_range),
        ):
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if not (0.0 < self.std_range[0] and self.std_range[1] <= 1.0):
            raise ConfigError(f"std_range {self.std_range} outside (0, 1]")
        if not (0.0 <= self.lambda_mix <= 1.0):
            raise ConfigError(f"lambda_mix {self.lambda_mix} outside [0, 1]")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")


@dataclass(frozen=True)
class FieldSpec:
    """Complete recipe for one ground-truth instance (replayable via seed)."""

    interest_components: tuple[GaussianComponent, ...]
    risk_components: tuple[GaussianComponent, ...]
    lambda_mix: float = 0.5
    noise_std: float = 0.01
    seed: int = 0

    def to_json(self) -> str:
        def comp(c: GaussianComponent):
            return {
                "center": list(c.center),
                "spread": [list(row) for row in c.spread],
                "amplitude": c.amplitude,
            }

        doc = {
            "interest_components": [comp(c) for c in self.interest_components],
            "risk_components": [comp(c) for c in self.risk_components],
            "lambda_mix": self.lambda_mix,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "FieldSpec":
        doc = json.loads(text)

        def comp(d):
            return GaussianComponent(
                center=tuple(d["center"]),
                spread=tuple(tuple(row) for row in d["spread"]),
                amplitude=d["amplitude"],
            )

        return FieldSpec(
            interest_components=tuple(comp(d) for d in doc["interest_components"]),
            risk_components=tuple(comp(d) for d in doc["risk_components"]),
            lambda_mix=doc["lambda_mix"],
            noise_std=doc["noise_std"],
            seed=doc["seed"],
        )


def _sample_component(rng: np.random.Generator, config: GenerationConfig) -> GaussianComponent:
    center = rng.uniform(WORKSPACE_LO, WORKSPACE_HI, size=2)
    base_std = rng.uniform(*config.std_range)
    ratio = rng.uniform(*config.anisotropy_range)
    theta = rng.uniform(0.0, np.pi)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([base_std**2, (base_std * ratio) ** 2]) @ rot.T
    cov = 0.5 * (cov + cov.T)
    return GaussianComponent(
        center=(float(center[0]), float(center[1])),
        spread=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
        amplitude=1.0,
    )


def generate_field_spec(seed: int, config: GenerationConfig | None = None) -> FieldSpec:
    """Sample a random field spec. Deterministic for a fixed (seed, config)."""
    config = config or GenerationConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    n_interest = int(rng.integers(config.interest_count_range[0], config.interest_count_range[1] + 1))
    n_risk = int(rng.integers(config.risk_count_range[0], config.risk_count_range[1] + 1))
    interest = tuple(_sample_component(rng, config) for _ in range(n_interest))
    risk = tuple(_sample_component(rng, config) for _ in range(n_risk))
    return FieldSpec(
        interest_components=interest,
        risk_components=risk,
        lambda_mix=config.lambda_mix,
        noise_std=config.noise_std,
        seed=seed,
    )


def _check_in_workspace(x: np.ndarray):
    if np.any(x < WORKSPACE_LO - 1e-12) or np.any(x > WORKSPACE_HI + 1e-12):
        raise DomainError(f"query point(s) outside [0,1]^2: {x}")


def _mixture_raw(points: np.ndarray, components) -> np.ndarray:
    """Average of unnormalized Gaussian bumps at `points` (n, 2)."""
    if len(components) == 0:
        return np.zeros(points.shape[0])
    acc = np.zeros(points.shape[0])
    for comp in components:
        diff = points - np.asarray(comp.center)
        prec = np.linalg.inv(comp.spread_matrix())
        quad = np.einsum("ni,ij,nj->n", diff, prec, diff)
        acc += comp.amplitude * np.exp(-0.5 * quad)
    return acc / len(components)


def evaluation_grid(resolution: int = 30) -> np.ndarray:
    """Row-major (y, x) lattice over [0,1]^2: index i*res + j -> (x_j, y_i)."""
    axis = np.linspace(WORKSPACE_LO, WORKSPACE_HI, resolution)
    gx, gy = np.meshgrid(axis, axis)
    return np.column_stack([gx.ravel(), gy.ravel()])


class GroundTruth:
    """Evaluates y_it, y_rk and y_mix anywhere in the workspace.

    Both fields are normalized so their peak over the evaluation grid is 1
    (the 0.7 risk threshold and reward magnitudes presuppose a bounded
    scale). Immutable after construction; safe for concurrent reads.
    """

    def __init__(self, spec: FieldSpec, grid_resolution: int = 30):
        self.spec = spec
        self.grid_resolution = grid_resolution
        self.grid = evaluation_grid(grid_resolution)
        it_raw = _mixture_raw(self.grid, spec.interest_components)
        rk_raw = _mixture_raw(self.grid, spec.risk_components)
        # Degenerate all-zero fields keep scale 1 so eval stays defined.
        self._it_scale = float(it_raw.max()) if it_raw.max() > 0 else 1.0
        self._rk_scale = float(rk_raw.max()) if rk_raw.max() > 0 else 1.0

    def _as_points(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        _check_in_workspace(pts)
        return pts

    def eval_interest(self, x) -> np.ndarray | float:
        pts = self._as_points(x)
        vals = _mixture_raw(pts, self.spec.interest_components) / self._it_scale
        return vals if np.ndim(x) > 1 else float(vals[0])

    def eval_risk(self, x) -> np.ndarray | float:
        pts = self._as_points(x)
        vals = _mixture_raw(pts, self.spec.risk_components) / self._rk_scale
        return vals if np.ndim(x) > 1 else float(vals[0])

    def eval_mixed(self, x) -> np.ndarray | float:
        """y_mix(x) = y_it(x) * (1 - lambda * y_rk(x))."""
        pts = self._as_points(x)
        it = _mixture_raw(pts, self.spec.interest_components) / self._it_scale
        rk = _mixture_raw(pts, self.spec.risk_components) / self._rk_scale
        vals = it * (1.0 - self.spec.lambda_mix * rk)
        return vals if np.ndim(x) > 1 else float(vals[0])


FIELD_INTEREST_MIXED = "interest_mixed"
FIELD_RISK = "risk"


def sample_measurement(truth: GroundTruth, x, which: str, rng: np.random.Generator) -> float:
    """Noisy point observation of the mixed-interest or risk field at x."""
    if which == FIELD_INTEREST_MIXED:
        value = truth.eval_mixed(x)
    elif which == FIELD_RISK:
        value = truth.eval_risk(x)
    else:
        raise ValueError(f"unknown field {which!r}")
    noise = rng.normal(0.0, truth.spec.noise_std) if truth.spec.noise_std > 0 else 0.0
    return float(value + noise)
