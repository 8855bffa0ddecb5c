"""Domain types and exact joint log-density for the cycle-length model.

The observation model is log-normal with a latent integer skip multiplier:

    y_ij ~ LogNormal(mu_ij + log(c_ij), tau_i)      (tau_i is a precision)
    mu_ij = X_ij . beta + b_i
    b_i ~ Normal(0, rho)                            (rho is a precision)
    beta ~ MVNormal(0, rho_beta * I_p)              (precision)
    rho^(-1/2) ~ Uniform(0, inf)                    (improper; density on rho
                                                     proportional to rho^(-3/2))
    c_ij ~ Categorical(pi_1..pi_K)
    (pi_1..pi_K) ~ Dirichlet(alpha..alpha)
    tau_i ~ Gamma(mean theta_i, rate phi)           (shape theta_i*phi, rate phi)
    log(theta_i) = Z_i . Gamma

Gamma (the regularity coefficient vector) and phi carry improper flat priors
by default; proper surrogates can be switched on through ``Hyperparams`` for
calibration testing.  All densities are evaluated in natural log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import (
    DimensionMismatchError,
    DivergentLinkValueError,
    EmptyIndividualError,
    NonFiniteCovariateError,
    NonFiniteLogDensityError,
    NonPositiveCycleError,
)

LOG_2PI = math.log(2.0 * math.pi)

# exp() overflows IEEE doubles just above 709.78; reject link values earlier
# so downstream products stay finite.
MAX_LINK_VALUE = 700.0


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class IndividualRecord:
    """One individual's cycles, per-cycle mean covariates, and baseline covariates.

    ``y`` holds the observed cycle lengths in days (positive reals), ``x`` the
    per-cycle mean-covariate rows (n_i x p), and ``z`` the baseline regularity
    covariates (length q).
    """

    id: str
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _readonly(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "x", _readonly(np.atleast_2d(np.asarray(self.x, dtype=float))))
        object.__setattr__(self, "z", _readonly(np.asarray(self.z, dtype=float)))

    @property
    def n_cycles(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class CycleDataset:
    """A validated collection of individuals.

    ``N`` is the total cycle count, ``p`` the mean-covariate dimension and
    ``q`` the regularity-covariate dimension.  Instances are immutable; use
    :func:`validate_dataset` to construct one safely from raw records.
    """

    individuals: tuple[IndividualRecord, ...]
    N: int
    p: int
    q: int

    @property
    def n(self) -> int:
        return len(self.individuals)

    @property
    def cycle_counts(self) -> np.ndarray:
        return np.array([ind.n_cycles for ind in self.individuals])


def validate_dataset(individuals: Sequence[IndividualRecord]) -> CycleDataset:
    """Check all dataset invariants and return an immutable ``CycleDataset``.

    Raises ``EmptyIndividualError`` for an individual with zero cycles,
    ``NonPositiveCycleError`` for y <= 0 or non-finite y,
    ``DimensionMismatchError`` when covariate dimensions disagree, and
    ``NonFiniteCovariateError`` for NaN/Inf covariates.
    """
    individuals = tuple(individuals)
    if not individuals:
        raise EmptyIndividualError("dataset contains no individuals")
    p = individuals[0].x.shape[1] if individuals[0].x.ndim == 2 else 0
    q = individuals[0].z.shape[0]
    total = 0
    for ind in individuals:
        if ind.n_cycles == 0:
            raise EmptyIndividualError(f"individual {ind.id!r} has no cycles")
        if not np.all(np.isfinite(ind.y)) or np.any(ind.y <= 0):
            raise NonPositiveCycleError(
                f"individual {ind.id!r} has a non-positive or non-finite cycle length"
            )
        if ind.x.shape != (ind.n_cycles, p):
            raise DimensionMismatchError(
                f"individual {ind.id!r}: x has shape {ind.x.shape}, "
                f"expected {(ind.n_cycles, p)}"
            )
        if ind.z.shape != (q,):
            raise DimensionMismatchError(
                f"individual {ind.id!r}: z has length {ind.z.shape[0]}, expected {q}"
            )
        if not (np.all(np.isfinite(ind.x)) and np.all(np.isfinite(ind.z))):
            raise NonFiniteCovariateError(f"individual {ind.id!r} has NaN/Inf covariates")
        total += ind.n_cycles
    return CycleDataset(individuals=individuals, N=total, p=p, q=q)


@dataclass(frozen=True)
class PackedData:
    """Flat array view of a dataset used by the samplers.

    Cycles are concatenated in dataset order; ``idx`` maps each cycle to its
    individual's position.  Construction is the only copy; all fields are
    read-only.
    """

    y: np.ndarray        # (N,)
    log_y: np.ndarray    # (N,)
    X: np.ndarray        # (N, p)
    Z: np.ndarray        # (n, q)
    idx: np.ndarray      # (N,) individual index per cycle
    n_i: np.ndarray      # (n,)
    ids: tuple[str, ...]
    n: int
    N: int
    p: int
    q: int

    def row_labels(self) -> list[tuple[str, int]]:
        """(individual_id, cycle_index) per packed row, cycle_index 0-based."""
        out = []
        for i, ind in enumerate(self.ids):
            for j in range(int(self.n_i[i])):
                out.append((ind, j))
        return out


def pack(data: CycleDataset) -> PackedData:
    y = np.concatenate([ind.y for ind in data.individuals])
    X = np.vstack([ind.x for ind in data.individuals]) if data.p else np.zeros((data.N, 0))
    Z = np.vstack([ind.z for ind in data.individuals]) if data.q else np.zeros((data.n, 0))
    n_i = data.cycle_counts
    idx = np.repeat(np.arange(data.n), n_i)
    return PackedData(
        y=_readonly(y),
        log_y=_readonly(np.log(y)),
        X=_readonly(X),
        Z=_readonly(Z),
        idx=_readonly(idx),
        n_i=_readonly(n_i),
        ids=tuple(ind.id for ind in data.individuals),
        n=data.n,
        N=data.N,
        p=data.p,
        q=data.q,
    )


def as_packed(data: "CycleDataset | PackedData") -> PackedData:
    return data if isinstance(data, PackedData) else pack(data)


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters and prior switches.

    Defaults: ``rho_beta = 0.01`` (diffuse prior on beta) and proposal
    precisions ``rho_gamma_prop = rho_phi_prop = 1000``.  ``fixed_c`` maps
    ``(individual_id, cycle_index)`` to a known skip value that the sampler
    never resamples.

    The ``*_prior`` fields switch the improper default priors to proper
    surrogates (required by simulation-based calibration): ``rho_prior`` is a
    Gamma (shape, rate) on the random-intercept precision, ``gamma_prior`` an
    iid Normal (mean, precision) on each regularity coefficient, and
    ``phi_prior`` a Gamma (shape, rate) on the regularity rate parameter.
    ``None`` keeps the defaults (rho ~ rho^(-3/2) improper; gamma, phi flat).
    """

    k_skip: int = 3
    rho_beta: float = 0.01
    rho_gamma_prop: float = 1000.0
    rho_phi_prop: float = 1000.0
    dirichlet_alpha: float = 1.0
    fixed_c: Mapping[tuple[str, int], int] | None = None
    rho_prior: tuple[float, float] | None = None
    gamma_prior: tuple[float, float] | None = None
    phi_prior: tuple[float, float] | None = None

    def __post_init__(self):
        if self.k_skip < 1:
            raise ValueError("k_skip must be >= 1")
        for name in ("rho_beta", "rho_gamma_prop", "rho_phi_prop", "dirichlet_alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rho_prior is not None and (self.rho_prior[0] <= 0 or self.rho_prior[1] <= 0):
            raise ValueError("rho_prior must have positive shape and rate")
        if self.phi_prior is not None and (self.phi_prior[0] <= 0 or self.phi_prior[1] <= 0):
            raise ValueError("phi_prior must have positive shape and rate")
        if self.gamma_prior is not None and self.gamma_prior[1] <= 0:
            raise ValueError("gamma_prior precision must be positive")

    def fixed_c_arrays(self, packed: PackedData) -> tuple[np.ndarray, np.ndarray]:
        """(mask, values) over packed cycle rows for the fixed-skip entries."""
        mask = np.zeros(packed.N, dtype=bool)
        vals = np.zeros(packed.N, dtype=np.int64)
        if self.fixed_c:
            pos = {lab: r for r, lab in enumerate(packed.row_labels())}
            for (ind_id, j), k in self.fixed_c.items():
                if not (1 <= int(k) <= self.k_skip):
                    raise ValueError(f"fixed_c value {k} outside 1..{self.k_skip}")
                try:
                    r = pos[(ind_id, int(j))]
                except KeyError:
                    raise KeyError(f"fixed_c refers to unknown cycle ({ind_id!r}, {j})")
                mask[r] = True
                vals[r] = int(k)
        return mask, vals


@dataclass(frozen=True)
class ModelState:
    """One full joint draw of all model parameters.

    ``c`` is aligned with the packed cycle order (length N, entries in
    1..K); ``tau`` and ``b`` are per-individual; ``pi`` lives on the
    K-simplex.
    """

    c: np.ndarray       # (N,) int
    pi: np.ndarray      # (K,)
    tau: np.ndarray     # (n,)
    b: np.ndarray       # (n,)
    beta: np.ndarray    # (p,)
    rho: float
    gamma: np.ndarray   # (q,)
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "c", _readonly(np.asarray(self.c, dtype=np.int64)))
        for name in ("pi", "tau", "b", "beta", "gamma"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=float)))

    def check(self, k_skip: int) -> None:
        """Raise ``NonFiniteLogDensityError`` unless all invariants hold."""
        if self.c.min(initial=1) < 1 or self.c.max(initial=1) > k_skip:
            raise NonFiniteLogDensityError("c entries outside 1..K")
        if abs(float(self.pi.sum()) - 1.0) > 1e-12 or np.any(self.pi < 0):
            raise NonFiniteLogDensityError("pi is not on the simplex")
        if np.any(self.tau <= 0) or self.rho <= 0 or self.phi <= 0:
            raise NonFiniteLogDensityError("tau, rho, phi must be strictly positive")
        for name in ("pi", "tau", "b", "beta", "gamma"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteLogDensityError(f"{name} contains non-finite entries")


def mu_of(state: ModelState, data: "CycleDataset | PackedData", i: int, j: int) -> float:
    """Log-scale median of individual ``i``'s cycle ``j``: X_ij . beta + b_i."""
    packed = as_packed(data)
    if not 0 <= i < packed.n:
        raise IndexError(f"individual index {i} out of range")
    if not 0 <= j < packed.n_i[i]:
        raise IndexError(f"cycle index {j} out of range for individual {i}")
    start = int(packed.n_i[:i].sum())
    return float(packed.X[start + j] @ state.beta + state.b[i])


def theta_of(state: ModelState, data: "CycleDataset | PackedData", i: int) -> float:
    """Regularity mean parameter exp(Z_i . Gamma) for individual ``i``."""
    packed = as_packed(data)
    link = float(packed.Z[i] @ state.gamma)
    if link > MAX_LINK_VALUE:
        raise DivergentLinkValueError(f"Z.Gamma = {link:.3g} overflows exp()")
    return math.exp(link)


def theta_vector(gamma: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """exp(Z @ gamma) for all individuals, with overflow guard."""
    link = Z @ gamma
    if np.any(link > MAX_LINK_VALUE):
        raise DivergentLinkValueError("a regularity link value overflows exp()")
    return np.exp(link)


def loglik_obs(y, mu, c, tau):
    """Observation log-density of the log-normal skip model.

    ``0.5*log(tau) - 0.5*log(2*pi) - log(y) - 0.5*tau*(log(y)-mu-log(c))**2``.
    Accepts scalars or broadcastable arrays.
    """
    y = np.asarray(y, dtype=float)
    c = np.asarray(c)
    tau = np.asarray(tau, dtype=float)
    if np.any(y <= 0):
        raise ValueError("y must be positive")
    if np.any(c < 1):
        raise ValueError("c must be >= 1")
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    resid = np.log(y) - np.asarray(mu, dtype=float) - np.log(c)
    out = 0.5 * np.log(tau) - 0.5 * LOG_2PI - np.log(y) - 0.5 * tau * resid**2
    return out if out.ndim else float(out)


def gamma_logpdf(x, shape, rate):
    """Log-density of Gamma(shape, rate) at x (shape-rate parameterization)."""
    x = np.asarray(x, dtype=float)
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def tau_prior_logpdf(tau: np.ndarray, theta: np.ndarray, phi: float) -> np.ndarray:
    """Per-individual log Gamma(mean theta_i, rate phi) density of tau."""
    return gamma_logpdf(tau, theta * phi, phi)


def log_joint(state: ModelState, data: "CycleDataset | PackedData", hyper: Hyperparams) -> float:
    """Exact joint log-density of a state (sum of likelihood and all priors).

    The improper prior on rho contributes ``-(3/2) * log(rho)``; proper
    surrogate priors switched on in ``hyper`` replace the improper terms.
    Raises ``NonFiniteLogDensityError`` on invalid states or NaN terms.
    """
    packed = as_packed(data)
    state.check(hyper.k_skip)

    tau_c = state.tau[packed.idx]
    mu = packed.X @ state.beta + state.b[packed.idx]
    total = float(np.sum(loglik_obs(packed.y, mu, state.c, tau_c)))

    with np.errstate(divide="ignore"):
        log_pi = np.log(state.pi)
    total += float(np.sum(log_pi[state.c - 1]))

    a = hyper.dirichlet_alpha
    k = hyper.k_skip
    total += float(gammaln(k * a) - k * gammaln(a) + (a - 1.0) * np.sum(log_pi))

    theta = theta_vector(state.gamma, packed.Z)
    total += float(np.sum(tau_prior_logpdf(state.tau, theta, state.phi)))

    total += float(
        0.5 * packed.n * (math.log(state.rho) - LOG_2PI)
        - 0.5 * state.rho * np.sum(state.b**2)
    )

    total += float(
        0.5 * packed.p * (math.log(hyper.rho_beta) - LOG_2PI)
        - 0.5 * hyper.rho_beta * np.sum(state.beta**2)
    )

    if hyper.rho_prior is None:
        total += -1.5 * math.log(state.rho)
    else:
        total += float(gamma_logpdf(state.rho, *hyper.rho_prior))

    if hyper.gamma_prior is not None:
        m, prec = hyper.gamma_prior
        total += float(
            0.5 * packed.q * (math.log(prec) - LOG_2PI)
            - 0.5 * prec * np.sum((state.gamma - m) ** 2)
        )

    if hyper.phi_prior is not None:
        total += float(gamma_logpdf(state.phi, *hyper.phi_prior))

    if math.isnan(total):
        raise NonFiniteLogDensityError("joint log-density evaluated to NaN")
    return total


def with_updates(state: ModelState, **kw) -> ModelState:
    """Functional update of one or more state fields."""
    return replace(state, **kw)


@dataclass
class PosteriorSamples:
    """Retained MCMC draws, tagged by chain.

    ``draws`` maps a parameter name ("beta", "gamma", "rho", "phi", "pi",
    optionally "tau" and "b") to an array of shape (n_chains, n_kept, dim).
    ``c_counts`` holds, per chain and per cycle, how many retained draws hit
    each skip value (n_chains, N, k_skip); this is sufficient to recover the
    posterior skip probabilities.  ``seed`` plus the config fields reproduce
    every draw bit-identically (generator recorded in ``generator``).
    """

    draws: dict[str, np.ndarray]
    c_counts: np.ndarray
    n_chains: int
    n_iter: int
    burn_in: int
    thin: int
    seed: int
    n_kept: int
    k_skip: int
    row_labels: list[tuple[str, int]]
    acceptance: dict[str, np.ndarray] = field(default_factory=dict)
    generator: str = "PCG64"

    def __post_init__(self):
        kept = {a.shape[1] for a in self.draws.values()}
        if kept and kept != {self.n_kept}:
            raise ValueError("chains disagree on retained-draw counts")

    def pooled(self, name: str) -> np.ndarray:
        """All chains' draws of ``name`` stacked, shape (n_chains*n_kept, dim)."""
        a = self.draws[name]
        return a.reshape(-1, a.shape[2])

    def c_counts_pooled(self) -> np.ndarray:
        """Skip-draw tallies summed over chains, shape (N, k_skip)."""
        return self.c_counts.sum(axis=0)

    def scalar_names(self) -> list[str]:
        names = []
        for name, a in self.draws.items():
            dim = a.shape[2]
            if dim == 1:
                names.append(name)
            else:
                names.extend(f"{name}_{k}" for k in range(dim))
        return names

    def scalar(self, scalar_name: str) -> np.ndarray:
        """Draws of one scalar component, shape (n_chains, n_kept)."""
        if scalar_name in self.draws and self.draws[scalar_name].shape[2] == 1:
            return self.draws[scalar_name][:, :, 0]
        base, _, suffix = scalar_name.rpartition("_")
        if base in self.draws and suffix.isdigit():
            return self.draws[base][:, :, int(suffix)]
        raise KeyError(scalar_name)
