"""Seeded generators for the rotating and the pandemic-like test systems."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RotationSeriesSpec",
    "PandemicSeriesSpec",
    "rotation_angles",
    "gen_rotation",
    "pandemic_matrix",
    "pandemic_gammas",
    "gen_pandemic",
    "write_series_csv",
]


@dataclass(frozen=True)
class RotationSeriesSpec:
    """2-D rotation whose angle grows linearly from ``theta_start`` to ``theta_end``."""

    steps: int = 500
    theta_start: float = np.pi / 64
    theta_end: float = np.pi / 8
    x1: tuple = (1.0, 0.0)
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("need at least 2 steps")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class PandemicSeriesSpec:
    """``x_{k+1} = gamma_k A_hat x_k`` with ``A_hat`` a normalized random positive matrix."""

    steps: int = 1000
    dim: int = 3
    gamma_start: float = 1.01
    gamma_end: float = 0.99
    seed_A: int = 0
    seed_noise: int = 0
    sigma: float = 0.05

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("need at least 2 steps")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def rotation_angles(spec: RotationSeriesSpec) -> np.ndarray:
    """``theta_k`` for ``k = 1..steps`` (0-based array index ``k - 1``)."""
    k = np.arange(spec.steps)
    return spec.theta_start + k * (spec.theta_end - spec.theta_start) / (spec.steps - 1)


def gen_rotation(spec: RotationSeriesSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(truth, noisy)``, each ``(steps, 2)``.

    ``truth[k] = R(theta_{k-1}) truth[k-1]`` and ``noisy = truth + N(0, sigma^2 I)``.
    """
    theta = rotation_angles(spec)
    truth = np.empty((spec.steps, 2))
    truth[0] = spec.x1
    for k in range(1, spec.steps):
        c, s = np.cos(theta[k - 1]), np.sin(theta[k - 1])
        x, y = truth[k - 1]
        truth[k] = (c * x - s * y, s * x + c * y)
    rng = np.random.default_rng(spec.seed)
    noisy = truth + spec.sigma * rng.standard_normal(truth.shape)
    return truth, noisy


def pandemic_matrix(seed_A: int, dim: int = 3) -> np.ndarray:
    """Uniform ``[0, 1)`` matrix scaled to spectral radius one.

    The matrix and the measurement noise draw from separate streams, so one
    run seed may serve as both ``seed_A`` and ``seed_noise``.
    """
    A = np.random.default_rng([seed_A, 0]).uniform(0.0, 1.0, (dim, dim))
    lam = np.linalg.eigvals(A)
    perron = lam[np.argmax(np.abs(lam))]
    assert abs(perron.imag) < 1e-12 and perron.real > 0, "Perron root must be real positive"
    return A / perron.real


def pandemic_gammas(spec: PandemicSeriesSpec) -> np.ndarray:
    k = np.arange(spec.steps)
    return spec.gamma_start - (spec.gamma_start - spec.gamma_end) * k / (spec.steps - 1)


def gen_pandemic(spec: PandemicSeriesSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(truth, noisy, gamma)``; ``gamma[k]`` is the dominant eigenvalue
    of the map taking ``truth[k]`` to ``truth[k + 1]``."""
    A_hat = pandemic_matrix(spec.seed_A, spec.dim)
    gamma = pandemic_gammas(spec)
    truth = np.empty((spec.steps, spec.dim))
    truth[0] = 1.0
    for k in range(1, spec.steps):
        truth[k] = gamma[k - 1] * (A_hat @ truth[k - 1])
    rng = np.random.default_rng([spec.seed_noise, 1])
    noisy = truth + spec.sigma * rng.standard_normal(truth.shape)
    return truth, noisy, gamma


def write_series_csv(path, truth: np.ndarray, noisy: np.ndarray) -> None:
    truth = np.atleast_2d(np.asarray(truth).T).T
    noisy = np.atleast_2d(np.asarray(noisy).T).T
    dim = truth.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"truth_{i}" for i in range(dim)] + [f"noisy_{i}" for i in range(dim)])
        for k in range(truth.shape[0]):
            w.writerow([k + 1, *map(repr, truth[k].tolist()), *map(repr, noisy[k].tolist())])
