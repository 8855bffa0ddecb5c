"""Gibbs/Metropolis-Hastings engine for the skip model.

One sweep updates, in fixed order: the skip multipliers c, the skip
probabilities pi (Dirichlet conjugacy), the per-individual precisions tau
(Gamma conjugacy), the random intercepts b (Normal conjugacy), the mean
coefficients beta (multivariate Normal conjugacy), the intercept precision
rho (Gamma), and finally the regularity parameters (Gamma vector, phi) via
two sequential Metropolis-Hastings blocks.  Each full conditional is exposed
as a pure ``*_conditional`` function so its parameters can be checked
directly against the joint density.

Chains are independent; chain k of a run seeded with s draws from the
PCG64 stream derived from (s, STAGE_CHAIN, k), which makes multi-chain
output independent of scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import (
    ChainFailureError,
    DegenerateRateError,
    ImproperConditionalError,
    SingularPrecisionError,
)
from .model import (
    LOG_2PI,
    MAX_LINK_VALUE,
    Hyperparams,
    ModelState,
    PackedData,
    PosteriorSamples,
    as_packed,
    gamma_logpdf,
)
from .rng import GENERATOR_NAME, chain_rng

TAU_FLOOR = 1e-300


@dataclass(frozen=True)
class ChainConfig:
    """Multi-chain run settings.  Defaults: 5 chains of 10,000 iterations
    with a burn-in of 750 draws and no thinning."""

    seed: int
    n_chains: int = 5
    n_iter: int = 10000
    burn_in: int = 750
    thin: int = 1
    keep_individual_draws: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.n_chains < 1 or self.n_iter < 1 or self.thin < 1 or self.n_jobs < 1:
            raise ValueError("n_chains, n_iter, thin, n_jobs must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iter")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.burn_in + self.thin - 1) // self.thin


@dataclass
class MhTuning:
    """Proposal precisions and acceptance counters for the two MH blocks."""

    rho_gamma_prop: float = 1000.0
    rho_phi_prop: float = 1000.0
    gamma_proposals: int = 0
    gamma_accepts: int = 0
    phi_proposals: int = 0
    phi_accepts: int = 0

    def fresh(self) -> "MhTuning":
        return MhTuning(self.rho_gamma_prop, self.rho_phi_prop)

    def rates(self) -> dict[str, float]:
        return {
            "gamma": self.gamma_accepts / max(self.gamma_proposals, 1),
            "phi": self.phi_accepts / max(self.phi_proposals, 1),
        }


# ---------------------------------------------------------------------------
# Full conditionals (pure parameter computations, no sampling)

def c_conditional_logprobs(state: ModelState, data, hyper: Hyperparams) -> np.ndarray:
    """Normalized log P(c_ij = k | rest) for every cycle, shape (N, K)."""
    packed = as_packed(data)
    w = _c_logweights(
        state.tau[packed.idx], packed.log_y - packed.X @ state.beta - state.b[packed.idx],
        state.pi, hyper.k_skip,
    )
    w -= w.max(axis=1, keepdims=True)
    w -= np.log(np.exp(w).sum(axis=1, keepdims=True))
    return w


def _c_logweights(tau_c, d, pi, k_skip):
    # d = log y - mu per cycle; terms constant in k are dropped
    logk = np.log(np.arange(1, k_skip + 1, dtype=float))
    dev = d[:, None] - logk[None, :]
    with np.errstate(divide="ignore"):
        return np.log(pi)[None, :] - 0.5 * tau_c[:, None] * dev * dev


def pi_conditional(state: ModelState, hyper: Hyperparams) -> np.ndarray:
    """Dirichlet parameter alpha + per-value counts of c."""
    counts = np.bincount(state.c - 1, minlength=hyper.k_skip)
    return hyper.dirichlet_alpha + counts


def tau_conditional(state: ModelState, data, hyper: Hyperparams):
    """Gamma (shape, rate) of each tau_i given the rest."""
    packed = as_packed(data)
    theta = _theta(state.gamma, packed.Z)
    resid = packed.log_y - packed.X @ state.beta - state.b[packed.idx] - np.log(state.c)
    rss = np.bincount(packed.idx, weights=resid * resid, minlength=packed.n)
    shape = theta * state.phi + 0.5 * packed.n_i
    rate = state.phi + 0.5 * rss
    return shape, rate


def b_conditional(state: ModelState, data, hyper: Hyperparams):
    """Normal (mean, precision) of each b_i given the rest."""
    packed = as_packed(data)
    resid = packed.log_y - packed.X @ state.beta - np.log(state.c)
    s = np.bincount(packed.idx, weights=resid, minlength=packed.n)
    prec = state.rho + state.tau * packed.n_i
    mean = state.tau * s / prec
    return mean, prec


def beta_conditional(state: ModelState, data, hyper: Hyperparams):
    """Multivariate Normal (mean, precision matrix) of beta given the rest."""
    packed = as_packed(data)
    u = packed.log_y - state.b[packed.idx] - np.log(state.c)
    w = state.tau[packed.idx]
    Xw = packed.X * w[:, None]
    prec = hyper.rho_beta * np.eye(packed.p) + packed.X.T @ Xw
    rhs = Xw.T @ u
    mean = np.linalg.solve(prec, rhs) if packed.p else np.zeros(0)
    return mean, prec


def rho_conditional(state: ModelState, hyper: Hyperparams):
    """Gamma (shape, rate) of rho; shape (n-1)/2 under the improper prior."""
    shape0, rate0 = (-0.5, 0.0) if hyper.rho_prior is None else hyper.rho_prior
    n = state.b.shape[0]
    shape = shape0 + 0.5 * n
    rate = rate0 + 0.5 * float(np.sum(state.b**2))
    if shape <= 0 or rate <= 0:
        raise ImproperConditionalError(
            f"rho conditional Gamma({shape:.3g}, {rate:.3g}) is improper; "
            "need n >= 2 individuals and a nonzero intercept vector"
        )
    return shape, rate


def log_tau_target(gamma: np.ndarray, phi: float, tau: np.ndarray, Z: np.ndarray,
                   hyper: Hyperparams) -> float:
    """MH target for the regularity block: sum_i log Gamma(tau_i; theta_i*phi, phi)
    plus any proper surrogate prior terms.  Returns -inf on divergence."""
    if phi <= 0:
        return -math.inf
    link = Z @ gamma
    if link.size and np.max(link) > MAX_LINK_VALUE:
        return -math.inf
    a = np.exp(link) * phi
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.sum(a * math.log(phi) - gammaln(a) + (a - 1.0) * np.log(tau) - phi * tau))
    if hyper.gamma_prior is not None:
        m, prec = hyper.gamma_prior
        val += float(0.5 * gamma.size * (math.log(prec) - LOG_2PI)
                     - 0.5 * prec * np.sum((gamma - m) ** 2))
    if hyper.phi_prior is not None:
        val += float(gamma_logpdf(phi, *hyper.phi_prior))
    return val if not math.isnan(val) else -math.inf


def _theta(gamma, Z):
    link = Z @ gamma
    if link.size and np.max(link) > MAX_LINK_VALUE:
        raise DegenerateRateError("regularity link overflow while updating tau")
    return np.exp(link)


# ---------------------------------------------------------------------------
# Sampling updates

def update_c(state: ModelState, data, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    packed = as_packed(data)
    mask, vals = hyper.fixed_c_arrays(packed)
    return _draw_c(state, packed, hyper, rng, mask, vals)


def _draw_c(state, packed, hyper, rng, fixed_mask, fixed_vals):
    c = np.where(fixed_mask, fixed_vals, state.c)
    free = np.flatnonzero(~fixed_mask)
    if free.size == 0:
        return c
    idx = packed.idx[free]
    d = packed.log_y[free] - packed.X[free] @ state.beta - state.b[idx]
    w = _c_logweights(state.tau[idx], d, state.pi, hyper.k_skip)
    w -= w.max(axis=1, keepdims=True)
    p = np.exp(w)
    cum = np.cumsum(p, axis=1)
    target = rng.random(free.size) * cum[:, -1]
    c[free] = 1 + (cum < target[:, None]).sum(axis=1)
    return c


def update_pi(state: ModelState, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(pi_conditional(state, hyper))


def update_tau(state: ModelState, data, hyper: Hyperparams, rng: np.random.Generator,
               rate_scale: float = 1.0) -> np.ndarray:
    shape, rate = tau_conditional(state, data, hyper)
    rate = rate * rate_scale
    if np.any(rate <= 0):
        raise DegenerateRateError("non-positive rate in tau conditional")
    return np.maximum(rng.gamma(shape, 1.0 / rate), TAU_FLOOR)


def update_b(state: ModelState, data, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    mean, prec = b_conditional(state, data, hyper)
    return mean + rng.standard_normal(mean.shape[0]) / np.sqrt(prec)


def update_beta(state: ModelState, data, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    packed = as_packed(data)
    if packed.p == 0:
        return np.zeros(0)
    _, prec = beta_conditional(state, packed, hyper)
    u = packed.log_y - state.b[packed.idx] - np.log(state.c)
    rhs = packed.X.T @ (state.tau[packed.idx] * u)
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as e:
        raise SingularPrecisionError("beta conditional precision not SPD") from e
    mean = solve_triangular(L.T, solve_triangular(L, rhs, lower=True), lower=False)
    z = rng.standard_normal(packed.p)
    return mean + solve_triangular(L.T, z, lower=False)


def update_rho(state: ModelState, hyper: Hyperparams, rng: np.random.Generator) -> float:
    shape, rate = rho_conditional(state, hyper)
    return float(rng.gamma(shape, 1.0 / rate))


def update_gamma_phi(state: ModelState, data, hyper: Hyperparams, tuning: MhTuning,
                     rng: np.random.Generator):
    """Two sequential MH blocks; returns (gamma, phi, gamma_accepted, phi_accepted).

    The Gamma-vector proposal is componentwise Normal with precision
    ``tuning.rho_gamma_prop`` (symmetric, no Hastings factor).  The phi
    proposal is Gamma with mean phi_t and rate ``tuning.rho_phi_prop``
    (asymmetric, Hastings-corrected).
    """
    packed = as_packed(data)
    Z, tau = packed.Z, state.tau
    gamma, phi = state.gamma, state.phi

    cur = log_tau_target(gamma, phi, tau, Z, hyper)
    acc_g = False
    if packed.q:
        step = rng.standard_normal(packed.q) / math.sqrt(tuning.rho_gamma_prop)
        cand = gamma + step
        cand_target = log_tau_target(cand, phi, tau, Z, hyper)
        tuning.gamma_proposals += 1
        if math.log(rng.random()) < cand_target - cur:
            gamma, cur, acc_g = cand, cand_target, True
            tuning.gamma_accepts += 1

    r = tuning.rho_phi_prop
    phi_star = float(rng.gamma(phi * r, 1.0 / r))
    tuning.phi_proposals += 1
    acc_p = False
    if phi_star > 0:
        log_ratio = (
            log_tau_target(gamma, phi_star, tau, Z, hyper) - cur
            + float(gamma_logpdf(phi, phi_star * r, r))   # q(phi_t | phi*)
            - float(gamma_logpdf(phi_star, phi * r, r))   # q(phi* | phi_t)
        )
        if math.log(rng.random()) < log_ratio:
            phi, acc_p = phi_star, True
            tuning.phi_accepts += 1
    return gamma, float(phi), acc_g, acc_p


# ---------------------------------------------------------------------------
# Sweep and chain runners

def initial_state(data, hyper: Hyperparams) -> ModelState:
    """Method-of-moments start: c = 1 (or the fixed value), beta and Gamma
    zero apart from intercept columns, tau_i = 1/var_i(log y) clamped to
    [1e-3, 1e3] (1.0 when n_i < 2), pi uniform, rho = phi = 1."""
    packed = as_packed(data)
    mask, vals = hyper.fixed_c_arrays(packed)
    c = np.where(mask, vals, 1).astype(np.int64)

    beta = np.zeros(packed.p)
    icol = _intercept_column(packed.X)
    if icol is not None:
        beta[icol] = float(packed.log_y.mean())

    s1 = np.bincount(packed.idx, weights=packed.log_y, minlength=packed.n)
    s2 = np.bincount(packed.idx, weights=packed.log_y**2, minlength=packed.n)
    multi = packed.n_i >= 2
    var = np.maximum((s2 - s1**2 / packed.n_i) / np.maximum(packed.n_i - 1, 1), 0.0)
    with np.errstate(divide="ignore"):
        est = np.clip(1.0 / var, 1e-3, 1e3)  # zero variance clamps to 1e3
    tau = np.where(multi, est, 1.0)

    gamma = np.zeros(packed.q)
    zcol = _intercept_column(packed.Z)
    if zcol is not None:
        gamma[zcol] = math.log(float(tau.mean()))

    return ModelState(
        c=c,
        pi=np.full(hyper.k_skip, 1.0 / hyper.k_skip),
        tau=tau,
        b=np.zeros(packed.n),
        beta=beta,
        rho=1.0,
        gamma=gamma,
        phi=1.0,
    )


def _intercept_column(M: np.ndarray) -> int | None:
    for j in range(M.shape[1]):
        if np.all(M[:, j] == 1.0):
            return j
    return None


def sweep(state: ModelState, data, hyper: Hyperparams, tuning: MhTuning,
          rng: np.random.Generator, tau_rate_scale: float = 1.0) -> ModelState:
    """One full update sweep in the fixed order c, pi, tau, b, beta, rho,
    (gamma, phi).  Returns a new state; the input is unchanged."""
    packed = as_packed(data)
    mask, vals = hyper.fixed_c_arrays(packed)
    return _sweep(state, packed, hyper, tuning, rng, mask, vals, tau_rate_scale)


def _sweep(state, packed, hyper, tuning, rng, fixed_mask, fixed_vals, tau_rate_scale):
    c = _draw_c(state, packed, hyper, rng, fixed_mask, fixed_vals)
    state = replace(state, c=c)
    state = replace(state, pi=update_pi(state, hyper, rng))
    state = replace(state, tau=update_tau(state, packed, hyper, rng, tau_rate_scale))
    state = replace(state, b=update_b(state, packed, hyper, rng))
    state = replace(state, beta=update_beta(state, packed, hyper, rng))
    state = replace(state, rho=update_rho(state, hyper, rng))
    gamma, phi, _, _ = update_gamma_phi(state, packed, hyper, tuning, rng)
    return replace(state, gamma=gamma, phi=phi)


def run_chain(data, hyper: Hyperparams, config: ChainConfig, chain_index: int,
              tuning: MhTuning | None = None, tau_rate_scale: float = 1.0) -> PosteriorSamples:
    """Run one chain; returns a single-chain ``PosteriorSamples``."""
    packed = as_packed(data)
    if packed.n < 2:
        raise ImproperConditionalError("fitting requires at least 2 individuals")
    tun = (tuning or MhTuning(hyper.rho_gamma_prop, hyper.rho_phi_prop)).fresh()
    rng = chain_rng(config.seed, chain_index)
    mask, vals = hyper.fixed_c_arrays(packed)
    state = initial_state(packed, hyper)

    names = {"beta": packed.p, "gamma": packed.q, "rho": 1, "phi": 1, "pi": hyper.k_skip}
    if config.keep_individual_draws:
        names.update(tau=packed.n, b=packed.n)
    store = {nm: np.empty((config.n_kept, dim)) for nm, dim in names.items()}
    c_counts = np.zeros((packed.N, hyper.k_skip), dtype=np.int64)

    it = -1
    try:
        kept = 0
        for it in range(config.n_iter):
            state = _sweep(state, packed, hyper, tun, rng, mask, vals, tau_rate_scale)
            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                store["beta"][kept] = state.beta
                store["gamma"][kept] = state.gamma
                store["rho"][kept] = state.rho
                store["phi"][kept] = state.phi
                store["pi"][kept] = state.pi
                if config.keep_individual_draws:
                    store["tau"][kept] = state.tau
                    store["b"][kept] = state.b
                c_counts[np.arange(packed.N), state.c - 1] += 1
                kept += 1
    except Exception as e:
        raise ChainFailureError(
            f"chain {chain_index} failed at iteration {it}: {e}", chain_index, it
        ) from e

    rates = tun.rates()
    return PosteriorSamples(
        draws={nm: arr[None, ...] for nm, arr in store.items()},
        c_counts=c_counts[None, ...],
        n_chains=1,
        n_iter=config.n_iter,
        burn_in=config.burn_in,
        thin=config.thin,
        seed=config.seed,
        n_kept=config.n_kept,
        k_skip=hyper.k_skip,
        row_labels=packed.row_labels(),
        acceptance={k: np.array([v]) for k, v in rates.items()},
        generator=GENERATOR_NAME,
    )


def merge_chains(parts: list[PosteriorSamples]) -> PosteriorSamples:
    first = parts[0]
    return PosteriorSamples(
        draws={nm: np.concatenate([p.draws[nm] for p in parts], axis=0) for nm in first.draws},
        c_counts=np.concatenate([p.c_counts for p in parts], axis=0),
        n_chains=sum(p.n_chains for p in parts),
        n_iter=first.n_iter,
        burn_in=first.burn_in,
        thin=first.thin,
        seed=first.seed,
        n_kept=first.n_kept,
        k_skip=first.k_skip,
        row_labels=first.row_labels,
        acceptance={
            k: np.concatenate([p.acceptance[k] for p in parts]) for k in first.acceptance
        },
        generator=first.generator,
    )


def _chain_job(args):
    data, hyper, config, k, tuning, tau_rate_scale = args
    return run_chain(data, hyper, config, k, tuning, tau_rate_scale)


def run_chains(data, hyper: Hyperparams, config: ChainConfig,
               tuning: MhTuning | None = None, tau_rate_scale: float = 1.0) -> PosteriorSamples:
    """Run ``config.n_chains`` independent chains and pool them.

    Chain k draws from the stream derived from (seed, STAGE_CHAIN, k), so
    serial and concurrent execution produce identical output.
    """
    packed = as_packed(data)
    jobs = [(packed, hyper, config, k, tuning, tau_rate_scale) for k in range(config.n_chains)]
    if config.n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, config.n_chains)) as pool:
            parts = list(pool.map(_chain_job, jobs))
    else:
        parts = [_chain_job(j) for j in jobs]
    return merge_chains(parts)
