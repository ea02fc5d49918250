"""Consensus hopping (CH) and Gaussian NES as single-point descent schemes.

Both share one loop: draw antithetic Gaussian samples around the iterate,
query them, turn the values into a direction, l2-normalize it, feed it through
a momentum accumulator, take a step and project. The only difference is the
direction estimate:

* NES: ``(1/N) sum_n g_n xi_n`` applied to the *negated* objective ``g = -f``,
  i.e. an ascent direction of ``-f``;
* CH: the softmax(-alpha f)-weighted mean of the samples, which is already a
  descent displacement for ``f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._sampling import antithetic_or_plain, paired_sum, paired_with_tail, softmax_weights
from ._validation import check_finite_array, check_int, check_positive, check_random_state
from .broker import RunRecord
from .exceptions import InvalidConfigError, ShapeError

__all__ = [
    "EstimatorKind",
    "ChNesConfig",
    "PlateauSchedule",
    "antithetic_samples",
    "nes_gradient",
    "ch_gradient",
    "normalize_l2",
    "paired_sum",
    "descent_direction",
    "run_ch_nes",
    "nes_expected_step",
]


@dataclass(frozen=True)
class EstimatorKind:
    """``variant`` is "nes" or "ch"; ``alpha`` only matters for CH."""

    variant: str = "ch"
    alpha: float = 10.0

    def __post_init__(self):
        if self.variant not in ("nes", "ch"):
            raise InvalidConfigError(f"unknown estimator {self.variant!r}")
        check_positive(self.alpha, "alpha")


@dataclass
class ChNesConfig:
    """Hyperparameters shared by CH and NES.

    ``schedule="plateau"`` halves the step size whenever the best checked loss
    has not improved for ``patience`` iterations, never going below
    ``eta * min_factor``.
    """

    sigma: float = 0.001
    eta: float = 0.01
    n_samples: int = 50
    momentum: float = 0.9
    schedule: str = "plateau"
    patience: int = 20
    decay: float = 0.5
    min_factor: float = 1.0 / 64
    seed: int | None = None

    def __post_init__(self):
        check_positive(self.sigma, "sigma")
        check_positive(self.eta, "eta")
        check_int(self.n_samples, "n_samples", minimum=2)
        if self.n_samples % 2:
            raise InvalidConfigError(f"n_samples must be even for antithetic pairs, got {self.n_samples}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.schedule not in ("constant", "plateau"):
            raise InvalidConfigError(f"unknown step schedule {self.schedule!r}")
        check_int(self.patience, "patience", minimum=1)


class PlateauSchedule:
    """Step size that decays when the tracked loss stalls."""

    def __init__(self, eta, patience=20, decay=0.5, min_factor=1.0 / 64, enabled=True):
        self.eta = float(eta)
        self.floor = float(eta) * min_factor
        self.patience = patience
        self.decay = decay
        self.enabled = enabled
        self.best = math.inf
        self.stall = 0

    def update(self, value):
        if value < self.best:
            self.best = value
            self.stall = 0
        elif self.enabled:
            self.stall += 1
            if self.stall >= self.patience:
                self.eta = max(self.eta * self.decay, self.floor)
                self.stall = 0
        return self.eta


def antithetic_samples(n, d, rng=None):
    """``n`` standard Gaussian rows in pairs ``(z, -z)``: rows ``n/2 + i = -row i``."""
    n = check_int(n, "n", minimum=2)
    if n % 2:
        raise InvalidConfigError(f"antithetic sampling needs an even sample count, got {n}")
    rng = check_random_state(rng)
    z = rng.standard_normal((n // 2, check_int(d, "d", minimum=1)))
    return np.vstack([z, -z])


def _check_pair(f_values, samples):
    f_values = check_finite_array(f_values, "f_values", ndim=1)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] != f_values.size:
        raise ShapeError(f"{f_values.size} values but samples of shape {samples.shape}")
    return f_values, samples


def nes_gradient(f_values, samples):
    """Raw NES estimator ``(1/N) sum_n f_n * samples_n`` (ascent direction of f)."""
    f_values, samples = _check_pair(f_values, samples)
    return paired_sum(f_values, samples) / len(f_values)


def ch_gradient(f_values, samples, alpha):
    """Softmax(-alpha f)-weighted mean of the samples (descent displacement of f)."""
    f_values, samples = _check_pair(f_values, samples)
    alpha = check_positive(float(alpha), "alpha")
    return paired_sum(softmax_weights(f_values, alpha), samples)


def normalize_l2(g):
    """Scale ``g`` to unit l2 norm; a zero vector is returned unchanged."""
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    return g if norm == 0.0 else g / norm


def descent_direction(f_values, samples, kind):
    """Unnormalized descent direction for minimizing f under either estimator."""
    if kind.variant == "ch":
        return ch_gradient(f_values, samples, kind.alpha)
    return nes_gradient(-np.asarray(f_values, dtype=float), samples)


def run_ch_nes(objective, space, config=None, kind=None, max_iter=10_000, x0=None, callback=None):
    """Projected, momentum-accelerated CH or NES descent on ``objective``.

    Every iteration spends ``n_samples`` queries on the perturbed points and
    one more on the new iterate (the adversarial check), and the loop only
    starts an iteration when all ``n_samples + 1`` queries fit in the budget.

    Returns
    -------
    RunRecord
        ``trajectory`` holds the iterate after every step.
    """
    config = ChNesConfig() if config is None else config
    kind = EstimatorKind() if kind is None else kind
    rng = check_random_state(config.seed)
    x = space.project(space.initial_point(rng) if x0 is None else np.asarray(x0, dtype=float))
    n = config.n_samples
    momentum = np.zeros_like(x)
    schedule = PlateauSchedule(config.eta, config.patience, config.decay, config.min_factor,
                               enabled=config.schedule == "plateau")
    trajectory, etas = [], []
    k = 0
    while k < max_iter and objective.remaining >= n + 1 and not objective.success:
        xi = antithetic_samples(n, x.size, rng)
        values = objective(x + config.sigma * xi)
        direction = normalize_l2(descent_direction(values, xi, kind))
        momentum = config.momentum * momentum + direction
        x = space.project(x + schedule.eta * momentum)
        check = objective(x[None, :])
        objective.ledger.record_iteration(k, n + 1)
        k += 1
        trajectory.append(x.copy())
        etas.append(schedule.eta)
        schedule.update(float(check[0]))
        if callback is not None:
            callback(k, x)
    return RunRecord.from_objective(kind.variant, objective, trajectory, k, seed=config.seed, etas=etas)


def nes_expected_step(f, mu, sigma, eta, n_samples, rng=None):
    """Monte-Carlo estimate of ``eta * sigma * E[f(mu + sigma xi) xi]``.

    Uses antithetic pairs (plus one unpaired sample for odd ``n_samples``), so
    a constant ``f`` gives exactly zero.
    """
    n_samples = check_int(n_samples, "n_samples", minimum=1)
    mu = np.asarray(mu, dtype=float).ravel()
    rng = check_random_state(rng)
    xi = antithetic_or_plain(rng, n_samples, mu.size)
    values = np.asarray(f(mu + sigma * xi), dtype=float)
    return eta * sigma * paired_with_tail(values, xi) / n_samples

