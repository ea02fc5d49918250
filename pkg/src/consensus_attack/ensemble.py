"""Consensus-based optimization (CBO) on a particle ensemble.

The update for every particle ``x`` with consensus point ``c`` is the
Euler--Maruyama step

    x <- x - tau * lam * (x - c) + sigma * noise(x - c, tau)

followed by a projection onto the feasible latent set. The consensus point is
the softmax(-alpha * f)-weighted mean of the particles, computed with a
log-sum-exp shift so that large ``alpha * f`` never overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._sampling import antithetic_or_plain, log_weights, paired_with_tail, softmax_weights
from ._validation import check_finite_array, check_int, check_matrix, check_positive, check_random_state
from .broker import RunRecord
from .exceptions import EmptyEnsembleError, InvalidConfigError, InvalidInputError, ShapeError

__all__ = [
    "Ensemble",
    "ConsensusWeights",
    "CboConfig",
    "compute_consensus",
    "effective_sample_size",
    "schedule_alpha",
    "MinibatchSampler",
    "AnisotropicNoise",
    "IsotropicNoise",
    "anisotropic_noise",
    "isotropic_noise",
    "cbo_step",
    "run_cbo",
    "ch_expected_step",
]


@dataclass
class Ensemble:
    """N x d particle positions plus a per-particle value cache.

    ``fresh[i]`` is True while ``values[i]`` is the objective at the current
    ``particles[i]``; moving a particle marks it stale.
    """

    particles: np.ndarray
    values: np.ndarray = None
    fresh: np.ndarray = None

    def __post_init__(self):
        self.particles = check_matrix(self.particles, "particles")
        n, d = self.particles.shape
        if n < 1 or d < 1:
            raise EmptyEnsembleError("an ensemble needs at least one particle and one dimension")
        if self.values is None:
            self.values = np.full(n, np.inf)
        self.values = np.asarray(self.values, dtype=float)
        if self.fresh is None:
            self.fresh = np.zeros(n, dtype=bool)
        if self.values.shape != (n,) or self.fresh.shape != (n,):
            raise ShapeError("values and fresh must have one entry per particle")

    @property
    def n_particles(self):
        return self.particles.shape[0]

    @property
    def dim(self):
        return self.particles.shape[1]

    def update_values(self, indices, values):
        self.values[indices] = values
        self.fresh[indices] = True

    def best(self):
        """Index of the lowest fresh value (lowest index on ties), or None."""
        masked = np.where(self.fresh, self.values, np.inf)
        if not np.isfinite(masked).any():
            return None
        return int(np.argmin(masked))


@dataclass(frozen=True)
class ConsensusWeights:
    weights: np.ndarray
    alpha: float

    @property
    def ess(self):
        """Effective sample size ``(sum w)^2 / sum w^2``."""
        return float(self.weights.sum() ** 2 / np.sum(self.weights ** 2))


def compute_consensus(particles, values, alpha):
    """Softmax(-alpha * values)-weighted mean of ``particles``.

    Returns
    -------
    point : ndarray of shape (d,)
    weights : ConsensusWeights
    """
    particles = np.asarray(particles, dtype=float)
    values = np.asarray(values, dtype=float)
    if particles.ndim != 2 or particles.shape[0] == 0:
        raise EmptyEnsembleError("consensus needs a non-empty N x d particle matrix")
    if values.shape != (particles.shape[0],):
        raise ShapeError(f"{particles.shape[0]} particles but {values.shape} values")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(particles))):
        raise InvalidInputError("particles and values must be finite")
    alpha = check_positive(float(alpha), "alpha")
    weights = softmax_weights(values, alpha)
    return weights @ particles, ConsensusWeights(weights, alpha)


def effective_sample_size(values, alpha):
    w = np.exp(log_weights(np.asarray(values, dtype=float), alpha))
    return float(1.0 / np.sum(w ** 2))


def schedule_alpha(values, eta_ess=0.1, alpha_bounds=(1e-4, 1e8), max_iter=60):
    """Pick ``alpha`` so the consensus weights have ESS ``eta_ess * N``.

    ESS is non-increasing in alpha, so a bisection on ``log(alpha)`` within
    ``alpha_bounds`` finds the root; if the target is out of reach the nearer
    bound is returned. Constant values give ESS = N for every alpha and
    saturate at the upper bound.
    """
    values = check_finite_array(values, "values", ndim=1)
    if not 0.0 < eta_ess <= 1.0:
        raise InvalidConfigError(f"eta_ess must lie in (0, 1], got {eta_ess}")
    lo, hi = (float(b) for b in alpha_bounds)
    if not 0.0 < lo < hi:
        raise InvalidConfigError(f"invalid alpha bounds {alpha_bounds}")
    n = values.size
    if n == 0:
        raise EmptyEnsembleError("cannot schedule alpha for zero values")
    if np.ptp(values) == 0.0:
        return hi
    target = eta_ess * n
    if effective_sample_size(values, lo) <= target:
        return lo
    if effective_sample_size(values, hi) >= target:
        return hi
    log_lo, log_hi = math.log(lo), math.log(hi)
    for _ in range(max_iter):
        mid = 0.5 * (log_lo + log_hi)
        if effective_sample_size(values, math.exp(mid)) > target:
            log_lo = mid
        else:
            log_hi = mid
    return math.exp(0.5 * (log_lo + log_hi))


class MinibatchSampler:
    """Draws batches of ``b`` distinct indices out of ``range(n)``.

    Indices are dealt from a shuffled permutation, so a pass of ``ceil(n / b)``
    draws covers every index before any repeats. When fewer than ``b``
    indices are left in a pass they are topped up from the next permutation.
    """

    def __init__(self, n, b, rng=None):
        self.n = check_int(n, "n", minimum=1)
        self.b = check_int(b, "batch size", minimum=1)
        if self.b > self.n:
            raise InvalidConfigError(f"batch size {b} exceeds ensemble size {n}")
        self.rng = check_random_state(rng)
        self._queue = np.zeros(0, dtype=int)

    def draw(self):
        if len(self._queue) >= self.b:
            batch, self._queue = self._queue[: self.b], self._queue[self.b:]
            return batch
        head = self._queue
        perm = self.rng.permutation(self.n)
        fill = perm[~np.isin(perm, head)][: self.b - len(head)]
        # the top-up indices count as already dealt in the new pass
        self._queue = perm[~np.isin(perm, fill)]
        return np.concatenate([head, fill])


def anisotropic_noise(drift, tau, rng):
    """Entry ``(n, j)`` is ``sqrt(tau) * |drift[n, j]| * xi`` with ``xi ~ N(0, 1)``."""
    drift = np.asarray(drift, dtype=float)
    rng = check_random_state(rng)
    return math.sqrt(tau) * np.abs(drift) * rng.standard_normal(drift.shape)


def isotropic_noise(drift, tau, rng):
    """Row ``n`` is ``sqrt(tau) * ||drift[n]||_2 * xi`` with ``xi ~ N(0, I)``."""
    drift = np.asarray(drift, dtype=float)
    rng = check_random_state(rng)
    norms = np.linalg.norm(drift, axis=-1, keepdims=True)
    return math.sqrt(tau) * norms * rng.standard_normal(drift.shape)


class AnisotropicNoise:
    name = "anisotropic"

    def __call__(self, drift, tau, rng):
        return anisotropic_noise(drift, tau, rng)


class IsotropicNoise:
    name = "isotropic"

    def __call__(self, drift, tau, rng):
        return isotropic_noise(drift, tau, rng)


@dataclass
class CboConfig:
    """Hyperparameters of the CBO loop.

    ``alpha=None`` selects the effective-sample-size scheduler with parameter
    ``eta_ess``; a number fixes the inverse temperature.
    """

    tau: float = 1.3
    lam: float = 1.0
    sigma: float = 1.0
    n_particles: int = 50
    batch_size: int = 10
    alpha: float | None = None
    eta_ess: float = 0.1
    alpha_bounds: tuple = (1e-4, 1e8)
    noise: str = "anisotropic"
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        check_positive(self.tau, "tau")
        check_positive(self.lam, "lam", allow_zero=True)
        check_positive(self.sigma, "sigma", allow_zero=True)
        check_int(self.n_particles, "n_particles", minimum=1)
        check_int(self.batch_size, "batch_size", 1, self.n_particles)
        if self.alpha is not None:
            check_positive(self.alpha, "alpha")
        if not 0.0 < self.eta_ess <= 1.0:
            raise InvalidConfigError(f"eta_ess must lie in (0, 1], got {self.eta_ess}")


def _resolve_noise(noise):
    if callable(noise):
        return noise
    if noise in (None, "anisotropic"):
        return AnisotropicNoise()
    if noise == "isotropic":
        return IsotropicNoise()
    raise InvalidConfigError(f"unknown noise model {noise!r}; pass a callable for structured noise")


def cbo_step(particles, consensus, config, projection=None, rng=None, noise=None):
    """One projected Euler--Maruyama CBO update of every particle.

    ``particles`` may be an array or an :class:`Ensemble` (returned with all
    values marked stale). With ``tau * lam == 1`` the drift part lands exactly
    on the consensus point.
    """
    ens = particles if isinstance(particles, Ensemble) else None
    X = ens.particles if ens is not None else check_matrix(particles, "particles")
    c = np.asarray(consensus, dtype=float)
    noise = _resolve_noise(noise if noise is not None else config.noise)
    rate = config.tau * config.lam
    if math.isclose(rate, 1.0, rel_tol=1e-12, abs_tol=0.0):
        moved = np.broadcast_to(c, X.shape).copy()
    elif rate == 0.0:
        moved = X.copy()
    else:
        moved = (1.0 - rate) * X + rate * c
    if config.sigma > 0.0:
        moved = moved + config.sigma * noise(X - c, config.tau, rng)
    if projection is not None:
        moved = projection(moved)
    if ens is None:
        return moved
    return Ensemble(moved, ens.values.copy(), np.zeros(ens.n_particles, dtype=bool))


def run_cbo(objective, space, config=None, max_iter=10_000, noise=None, callback=None):
    """Minimize ``objective`` over ``space`` with mini-batched CBO.

    Each iteration evaluates one mini-batch (``batch_size`` queries) and
    refreshes those particles' cached values. The consensus point uses the
    cached values of all particles (stale ones included), and every particle
    moves. The run
    stops on success, when the budget is spent, or after ``max_iter``
    iterations.

    Parameters
    ----------
    objective : broker.Objective
    space : spaces.AttackSpace
        Supplies the initial ensemble (uniform on the feasible set) and the
        projection applied after every step.
    config : CboConfig
    noise : callable, optional
        Overrides ``config.noise``; structured noise models from
        :mod:`consensus_attack.noise` plug in here.
    callback : callable, optional
        Called as ``callback(iteration, ensemble, consensus)``.

    Returns
    -------
    RunRecord
        ``trajectory`` holds the consensus point of every iteration.
    """
    config = CboConfig() if config is None else config
    rng = check_random_state(config.seed)
    noise = _resolve_noise(noise if noise is not None else config.noise)
    ens = Ensemble(space.sample(rng, config.n_particles))
    sampler = MinibatchSampler(config.n_particles, config.batch_size, rng)
    trajectory, alphas = [], []
    k = 0
    while k < max_iter and objective.remaining > 0 and not objective.success:
        idx = sampler.draw()
        values = objective(ens.particles[idx])
        objective.ledger.record_iteration(k, len(values))
        ens.update_values(idx[: len(values)], values)
        k += 1
        if objective.success or len(values) < len(idx):
            break
        # consensus over every particle evaluated so far, with cached values
        seen = np.isfinite(ens.values)
        pts, vals = ens.particles[seen], ens.values[seen]
        if config.alpha is not None:
            alpha = config.alpha
        else:
            # target ESS is eta_ess * N for the full ensemble
            eta = min(1.0, config.eta_ess * config.n_particles / len(vals))
            alpha = schedule_alpha(vals, eta, config.alpha_bounds)
        c, _ = compute_consensus(pts, vals, alpha)
        trajectory.append(c)
        alphas.append(alpha)
        ens = cbo_step(ens, c, config, space.project, rng, noise)
        if callback is not None:
            callback(k, ens, c)
    return RunRecord.from_objective("cbo", objective, trajectory, k, seed=config.seed, alphas=alphas)


def ch_expected_step(f, c, sigma_tilde, alpha, n_samples, rng=None):
    """Monte-Carlo estimate of the consensus-hopping displacement.

    Estimates ``sigma_tilde * E[exp(-alpha f(c + sigma_tilde xi)) xi] /
    E[exp(-alpha f(c + sigma_tilde xi))]`` with antithetic standard Gaussian
    samples (one unpaired sample is added when ``n_samples`` is odd).
    ``f`` must be vectorized over the rows of its argument.
    """
    n_samples = check_int(n_samples, "n_samples", minimum=1)
    c = np.asarray(c, dtype=float).ravel()
    alpha = check_positive(float(alpha), "alpha")
    rng = check_random_state(rng)
    xi = antithetic_or_plain(rng, n_samples, c.size)
    values = np.asarray(f(c + sigma_tilde * xi), dtype=float)
    w = softmax_weights(values, alpha)
    return sigma_tilde * paired_with_tail(w, xi)
