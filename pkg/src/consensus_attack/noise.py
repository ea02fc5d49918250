"""Structured noise for CBO and the (1 + lambda) evolution strategies.

``DctNoise`` and ``SquareNoise`` are drop-in replacements for the Gaussian
noise in :func:`consensus_attack.ensemble.run_cbo`. Both ignore the drift
argument: each particle receives a single DCT basis image or a single random
square, scaled by ``sqrt(tau)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from ._validation import check_int, check_positive, check_random_state
from .broker import RunRecord
from .exceptions import InvalidConfigError

__all__ = [
    "DctNoise",
    "SquareNoise",
    "SQUARE_SCHEDULE",
    "square_fraction",
    "square_side",
    "EsConfig",
    "one_plus_lambda_step",
    "cauchy_from_uniform",
    "cauchy_mutation",
    "run_one_plus_lambda",
]

# (budget fraction consumed, fraction of pixels covered by one square)
SQUARE_SCHEDULE = (
    (0.0, 1.0),
    (0.001, 0.5),
    (0.005, 0.25),
    (0.02, 0.125),
    (0.1, 0.0625),
    (0.5, 0.03125),
)


def square_fraction(progress, p_init=0.1):
    """Fraction of pixels a square covers after ``progress`` (in [0, 1]) of the run."""
    factor = 1.0
    for threshold, f in SQUARE_SCHEDULE:
        if progress >= threshold:
            factor = f
    return p_init * factor


def square_side(progress, height, width, p_init=0.1):
    """Side length in pixels for the current stage, at least 1 and at most the image."""
    side = int(round(math.sqrt(square_fraction(progress, p_init) * height * width)))
    return max(1, min(side, height, width))


def _dct_basis_1d(n):
    # column u is the inverse orthonormal DCT of the u-th unit vector
    return fft.idct(np.eye(n), type=2, norm="ortho", axis=0)


class DctNoise:
    """One inverse-DCT basis image per particle, walked through per-particle permutations.

    All particles share a cursor ``j``; particle ``n`` receives basis vector
    ``perms[n, j]``. After ``d`` draws the cursor wraps and fresh
    permutations are drawn.
    """

    name = "dct"

    def __init__(self, image_shape, n_particles, seed=None):
        self.image_shape = tuple(int(v) for v in image_shape)
        self.dim = int(np.prod(self.image_shape))
        self.n_particles = check_int(n_particles, "n_particles", minimum=1)
        self.rng = check_random_state(seed)
        _, h, w = self.image_shape
        self._rows = _dct_basis_1d(h)
        self._cols = _dct_basis_1d(w)
        self.cursor = 0
        self.perms = self._draw_perms()

    def _draw_perms(self):
        return np.stack([self.rng.permutation(self.dim) for _ in range(self.n_particles)])

    def basis_image(self, index):
        c, u, v = np.unravel_index(int(index), self.image_shape)
        img = np.zeros(self.image_shape)
        img[c] = np.outer(self._rows[:, u], self._cols[:, v])
        return img

    def current_indices(self):
        return self.perms[:, self.cursor].copy()

    def __call__(self, drift, tau, rng=None):
        n = np.asarray(drift).shape[0]
        if n != self.n_particles:
            raise InvalidConfigError(f"noise built for {self.n_particles} particles, got {n}")
        out = np.stack([self.basis_image(k).ravel() for k in self.perms[:, self.cursor]])
        self.cursor += 1
        if self.cursor == self.dim:
            self.cursor = 0
            self.perms = self._draw_perms()
        return math.sqrt(tau) * out


class SquareNoise:
    """One random square patch per particle, values ``+-epsilon`` per channel.

    The side length follows :data:`SQUARE_SCHEDULE`, keyed to the fraction of
    ``total_steps`` calls made so far.
    """

    name = "square"

    def __init__(self, image_shape, epsilon, total_steps, p_init=0.1, seed=None):
        self.image_shape = tuple(int(v) for v in image_shape)
        self.epsilon = check_positive(epsilon, "epsilon")
        self.total_steps = max(1, int(total_steps))
        self.p_init = check_positive(p_init, "p_init")
        self.rng = check_random_state(seed)
        self.step = 0

    @property
    def side(self):
        _, h, w = self.image_shape
        return square_side(self.step / self.total_steps, h, w, self.p_init)

    def sample_patch(self, side=None):
        c, h, w = self.image_shape
        side = self.side if side is None else side
        top = self.rng.integers(0, h - side + 1)
        left = self.rng.integers(0, w - side + 1)
        signs = self.rng.choice(np.array([-self.epsilon, self.epsilon]), size=(c, 1, 1))
        patch = np.zeros(self.image_shape)
        patch[:, top:top + side, left:left + side] = signs
        return patch

    def __call__(self, drift, tau, rng=None):
        n = np.asarray(drift).shape[0]
        side = self.side
        out = np.stack([self.sample_patch(side).ravel() for _ in range(n)])
        self.step += 1
        return math.sqrt(tau) * out


@dataclass
class EsConfig:
    """(1 + lambda)-ES settings.

    ``noise`` is "gaussian" (``tau_mut * N(0, I)``), "cauchy" (``tau_mut`` times
    standard Cauchy draws) or "basis" (SimBA-style: one fresh latent axis per
    iteration, ``+tau_mut`` first and ``-tau_mut`` only if that did not improve).
    """

    tau_mut: float = 0.05
    n_candidates: int = 1
    noise: str = "gaussian"
    seed: int | None = None

    def __post_init__(self):
        check_positive(self.tau_mut, "tau_mut")
        check_int(self.n_candidates, "n_candidates", minimum=1)
        if self.noise not in ("gaussian", "cauchy", "basis"):
            raise InvalidConfigError(f"unknown ES noise {self.noise!r}")


def one_plus_lambda_step(s, f_s, objective, candidates, simba_rule=False, project=None):
    """One (1 + lambda) step from ``s`` with cached value ``f_s``.

    Without ``simba_rule`` every row of ``candidates`` is evaluated in one batch
    and the best strictly improving one is taken. With ``simba_rule``,
    ``candidates`` is a single offset ``q``: ``s + q`` is tried first and
    ``s - q`` only when ``s + q`` did not improve on ``f_s``.

    Returns
    -------
    (s_next, f_next)
        ``f_next <= f_s`` always; the zero offset reuses ``f_s`` without a query.
    """
    project = (lambda z: z) if project is None else project
    s = np.asarray(s, dtype=float)
    if simba_rule:
        q = np.asarray(candidates, dtype=float).ravel()
        for offset in (q, -q):
            point = project(s + offset)
            value = objective(point[None, :])
            if len(value) == 0:
                break
            if value[0] < f_s:
                return point, float(value[0])
        return s, f_s
    cands = np.atleast_2d(np.asarray(candidates, dtype=float))
    points = np.stack([project(s + c) for c in cands])
    values = objective(points)
    if len(values):
        i = int(np.argmin(values))
        if values[i] < f_s:
            return points[i], float(values[i])
    return s, f_s


def cauchy_from_uniform(u, scale=1.0):
    """Inverse CDF of the Cauchy distribution: ``scale * tan(pi * (u - 1/2))``."""
    return scale * np.tan(np.pi * (np.asarray(u, dtype=float) - 0.5))


def cauchy_mutation(d, scale, rng=None):
    check_positive(scale, "scale")
    rng = check_random_state(rng)
    return cauchy_from_uniform(rng.random(check_int(d, "d", minimum=1)), scale)


def run_one_plus_lambda(objective, space, config=None, max_iter=100_000, x0=None):
    """(1 + lambda)-ES with Gaussian, Cauchy or SimBA basis-axis candidates.

    The starting point costs one query. The loop stops on success, on an
    exhausted budget or after ``max_iter`` iterations.
    """
    config = EsConfig() if config is None else config
    rng = check_random_state(config.seed)
    s = space.project(space.initial_point(rng) if x0 is None else np.asarray(x0, dtype=float))
    method = {"gaussian": "es", "cauchy": "cauchy-es", "basis": "simba"}[config.noise]
    first = objective(s[None, :])
    if len(first) == 0:
        return RunRecord.from_objective(method, objective, [], 0, seed=config.seed)
    f_s = float(first[0])
    d = s.size
    axes = rng.permutation(d)
    trajectory, k = [s.copy()], 0
    while k < max_iter and objective.remaining > 0 and not objective.success:
        if config.noise == "basis":
            axis = axes[k % d]
            if k % d == d - 1:
                axes = rng.permutation(d)
            q = np.zeros(d)
            q[axis] = config.tau_mut
            s, f_s = one_plus_lambda_step(s, f_s, objective, q, simba_rule=True, project=space.project)
        else:
            if config.noise == "gaussian":
                cands = config.tau_mut * rng.standard_normal((config.n_candidates, d))
            else:
                cands = np.stack([cauchy_mutation(d, config.tau_mut, rng) for _ in range(config.n_candidates)])
            s, f_s = one_plus_lambda_step(s, f_s, objective, cands, project=space.project)
        k += 1
        trajectory.append(s.copy())
    return RunRecord.from_objective(method, objective, trajectory, k, seed=config.seed, final_value=f_s)
