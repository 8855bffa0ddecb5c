"""Synthetic data generators for the three evaluation scenarios.

Scenario 1 draws from the log-normal skip model itself, scenario 2 from the
Poisson comparator model extended with mean covariates, and scenario 3 from a
non-linear mixture with 20 baseline covariates (mean effects on covariates
1-10, regularity effects on 1-5 and 11-15, covariates 16-20 null for both).
Every generator returns the dataset together with the full generating truth
so fits can be scored.

Default anchor values: intercept log(28) for the day scale, skip simplex
(0.90, 0.08, 0.02), random-intercept precision 25, regularity intercept
log(150) with rate 2, and 13 cycles per individual.  All are overridable
through the params dataclasses and recorded in ``SimTruth``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .model import CycleDataset, IndividualRecord, validate_dataset
from .rng import STAGE_SIMULATE, derive_rng

LOG_28 = math.log(28.0)
LOG_150 = math.log(150.0)

DEFAULT_CYCLES_PER_INDIVIDUAL = 13
DEFAULT_N_VALUES = (100, 500, 1000, 5000)
DEFAULT_REPLICATES = 200
DESK_N_VALUES = (100, 500)
DESK_REPLICATES = 50


@dataclass(frozen=True)
class SkiptrackSimParams:
    """Generating parameters for scenario 1 (the model's own hierarchy).

    ``beta`` and ``gamma`` include the intercept as their first entry; the
    non-intercept defaults are (-0.02, 0, 0.06) and (0, -0.1, 0.3).
    """

    beta: tuple[float, ...] = (LOG_28, -0.02, 0.0, 0.06)
    gamma: tuple[float, ...] = (LOG_150, 0.0, -0.1, 0.3)
    pi: tuple[float, ...] = (0.90, 0.08, 0.02)
    rho: float = 25.0
    phi: float = 2.0


@dataclass(frozen=True)
class LiSimParams:
    """Generating parameters for scenario 2 (Poisson comparator model with
    mean covariates; no regularity channel exists in this model)."""

    beta: tuple[float, ...] = (LOG_28, -0.02, 0.0, 0.06)
    pi: tuple[float, ...] = (0.90, 0.08, 0.02)
    rho: float = 25.0


def _default_mean_effects() -> tuple[float, ...]:
    return tuple([0.02] * 5 + [-0.02] * 5 + [0.0] * 10)


def _default_reg_effects() -> tuple[float, ...]:
    return tuple([0.15] * 5 + [0.0] * 5 + [-0.15] * 5 + [0.0] * 5)


@dataclass(frozen=True)
class MixtureSimParams:
    """Generating parameters for scenario 3 (non-linear mixture, 20 covariates).

    The mean channel adds ``sin_amplitude * sin(w_1)`` on top of its linear
    part; the regularity link exponentiates a centered quadratic in
    covariates 1-5 with weight ``quad_coef``.
    """

    mean_intercept: float = LOG_28
    mean_effects: tuple[float, ...] = field(default_factory=_default_mean_effects)
    sin_amplitude: float = 0.05
    reg_intercept: float = LOG_150
    reg_effects: tuple[float, ...] = field(default_factory=_default_reg_effects)
    quad_coef: float = 0.1
    pi: tuple[float, ...] = (0.90, 0.08, 0.02)
    rho: float = 25.0
    phi: float = 2.0


@dataclass(frozen=True)
class SimTruth:
    """Generating parameters and latent values retained for scoring.

    ``beta_true``/``gamma_true`` are the linear-channel coefficients
    (intercept first); scenario 2 has no regularity channel, so its
    ``gamma_true`` and ``tau_true`` are empty and ``phi_true`` is NaN.
    """

    scenario: int
    beta_true: np.ndarray
    gamma_true: np.ndarray
    b_true: np.ndarray
    tau_true: np.ndarray
    c_true: np.ndarray
    pi_true: np.ndarray
    rho_true: float
    phi_true: float


def _categorical(rng: np.random.Generator, pi: np.ndarray, size: int) -> np.ndarray:
    cum = np.cumsum(pi)
    return np.searchsorted(cum, rng.random(size) * cum[-1], side="right").astype(np.int64) + 1


def _build_dataset(w: np.ndarray, y: np.ndarray, cycles: int) -> CycleDataset:
    n = w.shape[0]
    individuals = []
    design = np.hstack([np.ones((n, 1)), w])
    for i in range(n):
        individuals.append(
            IndividualRecord(
                id=f"ind_{i:06d}",
                y=y[i * cycles:(i + 1) * cycles],
                x=np.tile(design[i], (cycles, 1)),
                z=design[i],
            )
        )
    return validate_dataset(individuals)


def simulate_skiptrack(n: int, cycles_per_individual: int = DEFAULT_CYCLES_PER_INDIVIDUAL,
                       params: SkiptrackSimParams | None = None,
                       rng: np.random.Generator | None = None):
    """Scenario 1: three standard-Normal baseline covariates per individual
    (identical across an individual's cycles and shared between the mean and
    regularity designs, plus an intercept column)."""
    params = params or SkiptrackSimParams()
    rng = rng if rng is not None else np.random.default_rng()
    if n < 2:
        raise ValueError("n must be >= 2")
    if cycles_per_individual < 1:
        raise ValueError("cycles_per_individual must be >= 1")
    beta = np.asarray(params.beta, dtype=float)
    gamma = np.asarray(params.gamma, dtype=float)
    pi = np.asarray(params.pi, dtype=float)
    if abs(pi.sum() - 1.0) > 1e-9 or np.any(pi < 0):
        raise ValueError("pi must be a simplex")
    if params.rho <= 0 or params.phi <= 0:
        raise ValueError("rho and phi must be positive")

    d = beta.shape[0] - 1
    N = n * cycles_per_individual
    w = rng.standard_normal((n, d))
    b = rng.standard_normal(n) / math.sqrt(params.rho)
    design = np.hstack([np.ones((n, 1)), w])
    theta = np.exp(design @ gamma)
    tau = rng.gamma(theta * params.phi, 1.0 / params.phi)
    c = _categorical(rng, pi, N)
    idx = np.repeat(np.arange(n), cycles_per_individual)
    mu = design @ beta + b
    y = np.exp(mu[idx] + np.log(c) + rng.standard_normal(N) / np.sqrt(tau[idx]))

    truth = SimTruth(
        scenario=1,
        beta_true=beta, gamma_true=gamma,
        b_true=b, tau_true=tau, c_true=c,
        pi_true=pi, rho_true=params.rho, phi_true=params.phi,
    )
    return _build_dataset(w, y, cycles_per_individual), truth


def simulate_li(n: int, cycles_per_individual: int = DEFAULT_CYCLES_PER_INDIVIDUAL,
                params: LiSimParams | None = None,
                rng: np.random.Generator | None = None):
    """Scenario 2: per-individual rate lambda_i = exp(X_i . beta + b_i),
    y_ij ~ Poisson(c_ij * lambda_i) truncated to y >= 1."""
    params = params or LiSimParams()
    rng = rng if rng is not None else np.random.default_rng()
    if n < 2:
        raise ValueError("n must be >= 2")
    if cycles_per_individual < 1:
        raise ValueError("cycles_per_individual must be >= 1")
    beta = np.asarray(params.beta, dtype=float)
    pi = np.asarray(params.pi, dtype=float)
    if abs(pi.sum() - 1.0) > 1e-9 or np.any(pi < 0):
        raise ValueError("pi must be a simplex")
    if params.rho <= 0:
        raise ValueError("rho must be positive")

    d = beta.shape[0] - 1
    N = n * cycles_per_individual
    w = rng.standard_normal((n, d))
    b = rng.standard_normal(n) / math.sqrt(params.rho)
    design = np.hstack([np.ones((n, 1)), w])
    lam = np.exp(design @ beta + b)
    c = _categorical(rng, pi, N)
    idx = np.repeat(np.arange(n), cycles_per_individual)
    y = rng.poisson(c * lam[idx]).astype(float)
    # zero-length cycles are meaningless; mass at 0 is ~1e-12 at day scale
    while np.any(y < 1):
        redo = y < 1
        y[redo] = rng.poisson(c[redo] * lam[idx][redo]).astype(float)

    truth = SimTruth(
        scenario=2,
        beta_true=beta, gamma_true=np.zeros(0),
        b_true=b, tau_true=np.zeros(0), c_true=c,
        pi_true=pi, rho_true=params.rho, phi_true=float("nan"),
    )
    return _build_dataset(w, y, cycles_per_individual), truth


def simulate_mixture(n: int, cycles_per_individual: int = DEFAULT_CYCLES_PER_INDIVIDUAL,
                     params: MixtureSimParams | None = None,
                     rng: np.random.Generator | None = None):
    """Scenario 3: 20 standard-Normal baseline covariates with a sin bump in
    the mean channel and a quadratic inside the regularity link."""
    params = params or MixtureSimParams()
    rng = rng if rng is not None else np.random.default_rng()
    if n < 2:
        raise ValueError("n must be >= 2")
    if cycles_per_individual < 1:
        raise ValueError("cycles_per_individual must be >= 1")
    mean_eff = np.asarray(params.mean_effects, dtype=float)
    reg_eff = np.asarray(params.reg_effects, dtype=float)
    if mean_eff.shape != reg_eff.shape:
        raise ValueError("mean_effects and reg_effects must have equal length")
    pi = np.asarray(params.pi, dtype=float)
    if abs(pi.sum() - 1.0) > 1e-9 or np.any(pi < 0):
        raise ValueError("pi must be a simplex")
    if params.rho <= 0 or params.phi <= 0:
        raise ValueError("rho and phi must be positive")

    d = mean_eff.shape[0]
    N = n * cycles_per_individual
    w = rng.standard_normal((n, d))
    b = rng.standard_normal(n) / math.sqrt(params.rho)
    mu = params.mean_intercept + w @ mean_eff + params.sin_amplitude * np.sin(w[:, 0]) + b
    quad = params.quad_coef * (np.mean(w[:, :5] ** 2, axis=1) - 1.0)
    theta = np.exp(params.reg_intercept + w @ reg_eff + quad)
    tau = rng.gamma(theta * params.phi, 1.0 / params.phi)
    c = _categorical(rng, pi, N)
    idx = np.repeat(np.arange(n), cycles_per_individual)
    y = np.exp(mu[idx] + np.log(c) + rng.standard_normal(N) / np.sqrt(tau[idx]))

    truth = SimTruth(
        scenario=3,
        beta_true=np.concatenate([[params.mean_intercept], mean_eff]),
        gamma_true=np.concatenate([[params.reg_intercept], reg_eff]),
        b_true=b, tau_true=tau, c_true=c,
        pi_true=pi, rho_true=params.rho, phi_true=params.phi,
    )
    return _build_dataset(w, y, cycles_per_individual), truth


_GENERATORS = {1: simulate_skiptrack, 2: simulate_li, 3: simulate_mixture}


def generate_replicate(scenario: int, n: int, cycles_per_individual: int,
                       seed: int, replicate: int, params=None):
    """Replicate ``replicate`` of a scenario; reproducible in isolation from
    (seed, scenario, n, replicate)."""
    if scenario not in _GENERATORS:
        raise ValueError(f"unknown scenario {scenario}; expected 1, 2 or 3")
    rng = derive_rng(seed, STAGE_SIMULATE, scenario, n, replicate)
    return _GENERATORS[scenario](n, cycles_per_individual, params, rng)


def simulation_battery(scenario: int, n_values=DEFAULT_N_VALUES,
                       replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                       cycles_per_individual: int = DEFAULT_CYCLES_PER_INDIVIDUAL,
                       params=None) -> Iterator[tuple[int, int, CycleDataset, SimTruth]]:
    """Deterministic stream of (n, replicate, dataset, truth) tuples."""
    for n in n_values:
        for r in range(replicates):
            data, truth = generate_replicate(scenario, n, cycles_per_individual, seed, r, params)
            yield n, r, data, truth
