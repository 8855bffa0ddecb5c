"""Poisson-model comparator for skip identification.

A minimal Poisson-Gamma-categorical hierarchy: each individual has one rate
lambda_i ~ Gamma(shape, rate) governing both mean and variance of their cycle
lengths, and y_ij ~ Poisson(c_ij * lambda_i) with c_ij ~ Categorical(pi).
Because a single parameter carries both moments, skip inference under this
model is blind to an individual's actual regularity.  Used standalone for
skip estimation and as stage one of the fixed-skips pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .errors import InsufficientDataError
from .model import Hyperparams, PackedData, PosteriorSamples, as_packed
from .rng import GENERATOR_NAME, STAGE_LI, derive_rng
from .sampler import ChainConfig, MhTuning, run_chains

# Relative variance floor below which the moment-matched rate is clamped.
DEGENERATE_REL_VAR = 1e-8


@dataclass(frozen=True)
class LiModelSpec:
    """Hyperparameters of the comparator: Gamma(shape, rate) on the
    per-individual mean length and a fixed skip simplex."""

    lambda_shape: float
    lambda_rate: float
    pi: np.ndarray
    near_degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        if self.lambda_shape <= 0 or self.lambda_rate <= 0:
            raise ValueError("lambda hyperprior must be positive")
        if np.any(self.pi < 0) or abs(float(self.pi.sum()) - 1.0) > 1e-12:
            raise ValueError("pi must be a simplex")

    @property
    def k_skip(self) -> int:
        return self.pi.shape[0]


def li_fit_hyperparams(data, k_skip: int = 3) -> LiModelSpec:
    """Moment-match the lambda hyperprior to the per-individual mean cycle
    lengths; the skip simplex starts uniform.

    With mean m and variance v of the individual means, the Gamma prior with
    mean m and variance v has shape m^2/v and rate m/v.  A near-zero v is
    clamped and flagged ``near_degenerate``.
    """
    packed = as_packed(data)
    if packed.n < 2:
        raise InsufficientDataError("hyperparameter estimation needs >= 2 individuals")
    m_i = np.bincount(packed.idx, weights=packed.y, minlength=packed.n) / packed.n_i
    m = float(m_i.mean())
    v = float(m_i.var(ddof=1))
    floor = DEGENERATE_REL_VAR * max(m * m, 1.0)
    degenerate = v < floor
    v = max(v, floor)
    return LiModelSpec(
        lambda_shape=m * m / v,
        lambda_rate=m / v,
        pi=np.full(k_skip, 1.0 / k_skip),
        near_degenerate=degenerate,
    )


def li_c_logprobs(y, lam, pi) -> np.ndarray:
    """Normalized log P(c = k | y, lambda) under the Poisson model.

    Broadcasts over cycles: ``y`` and ``lam`` are per-cycle arrays (lam already
    expanded to cycle level), output has shape (len(y), K).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    k = np.arange(1, len(pi) + 1, dtype=float)
    with np.errstate(divide="ignore"):
        w = np.log(np.asarray(pi))[None, :] + y[:, None] * np.log(k * lam[:, None]) - k * lam[:, None]
    w -= w.max(axis=1, keepdims=True)
    w -= np.log(np.exp(w).sum(axis=1, keepdims=True))
    return w


@dataclass
class LiCDraws:
    """Chain-tagged skip-draw tallies from the comparator's Gibbs sampler."""

    c_counts: np.ndarray        # (n_chains, N, K)
    lambda_mean: np.ndarray     # (n_chains, n) posterior mean of lambda
    n_chains: int
    n_kept: int
    seed: int
    k_skip: int
    row_labels: list[tuple[str, int]]
    generator: str = GENERATOR_NAME

    def c_counts_pooled(self) -> np.ndarray:
        return self.c_counts.sum(axis=0)


def li_sample_c(data, spec: LiModelSpec, config: ChainConfig) -> LiCDraws:
    """Gibbs-sample the posterior of the skip values under the comparator.

    Alternates the categorical update of c given lambda with the conjugate
    Gamma update lambda_i | c ~ Gamma(shape + sum_j y_ij, rate + sum_j c_ij).
    Chain k draws from the stream (seed, STAGE_LI, k).
    """
    packed = as_packed(data)
    counts = np.zeros((config.n_chains, packed.N, spec.k_skip), dtype=np.int64)
    lam_mean = np.zeros((config.n_chains, packed.n))
    sum_y = np.bincount(packed.idx, weights=packed.y, minlength=packed.n)
    for chain in range(config.n_chains):
        rng = derive_rng(config.seed, STAGE_LI, chain)
        lam = np.maximum(sum_y / packed.n_i, 0.5)
        kept = 0
        for it in range(config.n_iter):
            logp = li_c_logprobs(packed.y, lam[packed.idx], spec.pi)
            p = np.exp(logp)
            cum = np.cumsum(p, axis=1)
            target = rng.random(packed.N) * cum[:, -1]
            c = 1 + (cum < target[:, None]).sum(axis=1)
            sum_c = np.bincount(packed.idx, weights=c.astype(float), minlength=packed.n)
            lam = rng.gamma(spec.lambda_shape + sum_y, 1.0 / (spec.lambda_rate + sum_c))
            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                counts[chain, np.arange(packed.N), c - 1] += 1
                lam_mean[chain] += lam
                kept += 1
        lam_mean[chain] /= max(kept, 1)
    return LiCDraws(
        c_counts=counts,
        lambda_mean=lam_mean,
        n_chains=config.n_chains,
        n_kept=config.n_kept,
        seed=config.seed,
        k_skip=spec.k_skip,
        row_labels=packed.row_labels(),
    )


def li_map_c(draws) -> np.ndarray:
    """Per-cycle modal skip value; ties break toward the smaller value."""
    if hasattr(draws, "c_counts_pooled"):
        counts = draws.c_counts_pooled()
    else:
        counts = np.asarray(draws)
    if counts.size == 0 or counts.sum() == 0:
        raise ValueError("no retained skip draws")
    return np.argmax(counts, axis=1).astype(np.int64) + 1


def fixed_skips_fit(data, hyper: Hyperparams, config: ChainConfig,
                    li_config: ChainConfig | None = None,
                    tuning: MhTuning | None = None) -> PosteriorSamples:
    """Two-stage pipeline: estimate skips with the comparator, freeze them,
    then fit the full model with every cycle's skip fixed to the comparator's
    MAP value."""
    packed = as_packed(data)
    spec = li_fit_hyperparams(packed, hyper.k_skip)
    draws = li_sample_c(packed, spec, li_config or config)
    map_c = li_map_c(draws)
    fixed = {lab: int(k) for lab, k in zip(packed.row_labels(), map_c)}
    assert len(fixed) == packed.N
    return run_chains(packed, replace(hyper, fixed_c=fixed), config, tuning=tuning)
