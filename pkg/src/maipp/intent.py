"""Trajectory intent: a 2D Gaussian summary of where an agent plans to go.

Each agent fits mean/covariance to the node positions of its sampled
candidate trajectories and broadcasts the result. Teammates evaluate the
received Gaussians at their own roadmap nodes, sum them, and peak-normalize,
giving a bounded node-level feature that marks space already claimed by
others.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

EPS_REG = 1e-4  # covariance floor; single-node or collinear clouds stay bounded


@dataclass(frozen=True)
class IntentDistribution:
    agent_id: int
    step: int
    mean: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]

    def cov_matrix(self) -> np.ndarray:
        return np.asarray(self.cov, dtype=float)

    def to_json(self) -> str:
        return json.dumps(
            {
                "agent_id": self.agent_id,
                "step": self.step,
                "mean": list(self.mean),
                "cov": [list(row) for row in self.cov],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "IntentDistribution":
        doc = json.loads(text)
        return IntentDistribution(
            agent_id=doc["agent_id"],
            step=doc["step"],
            mean=tuple(doc["mean"]),
            cov=tuple(tuple(row) for row in doc["cov"]),
        )


def fit_intent(trajectory_samples, agent_id: int = 0, step: int = 0,
               eps_reg: float = EPS_REG) -> IntentDistribution:
    """Pool all node positions across sampled trajectories and fit a Gaussian.

    Mean is the sample mean; covariance is the sample covariance (ddof=1)
    plus eps_reg * I. A single pooled point gets the pure regularization
    floor.
    """
    points = [np.atleast_2d(np.asarray(t, dtype=float)) for t in trajectory_samples]
    points = [p for p in points if p.size > 0]
    if not points:
        raise ValueError("fit_intent needs at least one non-empty trajectory sample")
    cloud = np.vstack(points)
    mean = cloud.mean(axis=0)
    if cloud.shape[0] > 1:
        cov = np.cov(cloud, rowvar=False, ddof=1)
    else:
        cov = np.zeros((2, 2))
    cov = cov + eps_reg * np.eye(2)
    return IntentDistribution(
        agent_id=agent_id,
        step=step,
        mean=(float(mean[0]), float(mean[1])),
        cov=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
    )


def _gaussian_density(points: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    det = np.linalg.det(cov)
    prec = np.linalg.inv(cov)
    diff = points - mean
    quad = np.einsum("ni,ij,nj->n", diff, prec, diff)
    return np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))


def fuse_intents(intents, query_points: np.ndarray) -> np.ndarray:
    """Sum teammate intent densities at query points and normalize to peak 1.

    An empty intent list (lone agent, out of range) yields the zero field.
    Summation is order-independent up to float associativity, so inputs are
    sorted by (agent_id, step) for exact reproducibility.
    """
    query_points = np.atleast_2d(np.asarray(query_points, dtype=float))
    values = np.zeros(query_points.shape[0])
    intents = sorted(intents, key=lambda d: (d.agent_id, d.step))
    if not intents:
        return values
    for dist in intents:
        values += _gaussian_density(query_points, np.asarray(dist.mean), dist.cov_matrix())
    peak = values.max()
    if peak > 0:
        values /= peak
    return values
