"""Latent attack spaces and their application maps ``T(s; x)``.

Each space turns a flat latent vector ``s`` into an image in ``[0, 1]^(C, H, W)``
by perturbing a clean image ``x``. The low-level maps (``apply_direct``,
``apply_lowres``, ...) are pure functions; the ``*Space`` classes bundle a map
with its latent box, its projection and the norm budget used to post-process
every image before it is queried.
"""

from __future__ import annotations

import numpy as np
from scipy import fft

from ._validation import check_finite_array, check_int, check_positive, check_random_state
from .constraints import Budget, project_l2, project_linf, tanh_reparam
from .exceptions import InvalidConfigError, InvalidInputError, ShapeError

__all__ = [
    "clip_range",
    "apply_direct",
    "upsample_nearest",
    "apply_lowres",
    "pixel_gamma",
    "apply_pixels",
    "dct_forward",
    "dct_inverse",
    "dct_place",
    "apply_dct",
    "stripes_image",
    "square_masks",
    "apply_squares",
    "AttackSpace",
    "BoxSpace",
    "DirectSpace",
    "LowResSpace",
    "PixelSpace",
    "DctSpace",
    "SquareSpace",
    "TanhSpace",
    "make_space",
]


def clip_range(z):
    """Clamp every entry into [0, 1]. Idempotent."""
    z = np.asarray(z, dtype=float)
    if np.isnan(z).any():
        raise InvalidInputError("cannot clip an array containing NaN")
    return np.clip(z, 0.0, 1.0)


def _as_image(x):
    x = check_finite_array(x, "image", ndim=3)
    if min(x.shape) < 1:
        raise ShapeError(f"image has an empty axis: {x.shape}")
    return x


def apply_direct(s, x):
    x = _as_image(x)
    s = np.asarray(s, dtype=float)
    if s.size != x.size:
        raise ShapeError(f"latent of size {s.size} does not match image of size {x.size}")
    return clip_range(x + s.reshape(x.shape))


def upsample_nearest(s, height, width):
    """Nearest-neighbour upsampling of a (C, h, w) grid to (C, height, width).

    Output pixel (i, j) reads cell ``(i * h // height, j * w // width)``.
    """
    s = np.asarray(s, dtype=float)
    _, h, w = s.shape
    if h > height or w > width:
        raise InvalidConfigError(f"low-res grid {h}x{w} exceeds image {height}x{width}")
    rows = np.arange(height) * h // height
    cols = np.arange(width) * w // width
    return s[:, rows[:, None], cols[None, :]]


def apply_lowres(s, x, low_shape):
    x = _as_image(x)
    c, h, w = x.shape
    hl, wl = low_shape
    if hl > h or wl > w:
        raise InvalidConfigError(f"low-res grid {hl}x{wl} exceeds image {h}x{w}")
    s = np.asarray(s, dtype=float)
    if s.size != c * hl * wl:
        raise ShapeError(f"latent of size {s.size} does not match {c}x{hl}x{wl}")
    return clip_range(x + upsample_nearest(s.reshape(c, hl, wl), h, w))


def pixel_gamma(pos, height, width):
    """Pixel index (0-based) for a normalized position in [0, 1]^2.

    ``pos = 1.0`` maps to the last row/column instead of falling off the grid.
    """
    p1, p2 = (float(v) for v in pos)
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise InvalidInputError(f"pixel position {pos!r} outside [0, 1]^2")
    return min(int(np.floor(p1 * height)), height - 1), min(int(np.floor(p2 * width)), width - 1)


def apply_pixels(s, x):
    """Add ``P`` colour tuples at their pixel positions, then clip.

    ``s`` is a flat vector of ``P`` blocks ``(zeta_1..zeta_C, pi_1, pi_2)``.
    Tuples landing on the same pixel add up before clipping.
    """
    x = _as_image(x)
    c, h, w = x.shape
    s = np.asarray(s, dtype=float).ravel()
    block = c + 2
    if s.size == 0 or s.size % block:
        raise InvalidInputError(f"pixel latent size {s.size} is not a multiple of {block}")
    out = x.copy()
    for tup in s.reshape(-1, block):
        i, j = pixel_gamma(tup[c:], h, w)
        out[:, i, j] += tup[:c]
    return clip_range(out)


def dct_forward(x):
    """Orthonormal 2-D DCT-II over the last two axes (per channel)."""
    return fft.dctn(np.asarray(x, dtype=float), type=2, norm="ortho", axes=(-2, -1))


def dct_inverse(z):
    return fft.idctn(np.asarray(z, dtype=float), type=2, norm="ortho", axes=(-2, -1))


def dct_place(s, height, width):
    """Zero-pad a (C, m, m) coefficient block into the top-left of (C, height, width)."""
    s = np.asarray(s, dtype=float)
    c, m, m2 = s.shape
    if m != m2:
        raise ShapeError(f"coefficient block must be square, got {m}x{m2}")
    if m > min(height, width):
        raise InvalidConfigError(f"block size {m} exceeds image {height}x{width}")
    out = np.zeros((c, height, width))
    out[:, :m, :m] = s
    return out


def apply_dct(s, x, m):
    x = _as_image(x)
    c, h, w = x.shape
    s = np.asarray(s, dtype=float)
    if s.size != c * m * m:
        raise ShapeError(f"latent of size {s.size} does not match {c}x{m}x{m}")
    delta = dct_inverse(dct_place(s.reshape(c, m, m), h, w))
    return clip_range(x + delta)


def stripes_image(shape, epsilon, rng):
    """Vertical stripes: one sign draw per (channel, column), constant down the column."""
    c, h, w = shape
    rng = check_random_state(rng)
    signs = rng.choice(np.array([-epsilon, epsilon]), size=(c, 1, w))
    return np.broadcast_to(signs, (c, h, w)).copy()


def _square_axis_mask(radius, centre, n):
    """Rows (or columns) whose pixel centre lies within ``radius`` of ``centre``.

    The pixel containing ``centre`` is always included, so a zero radius still
    selects one pixel.
    """
    centres = (np.arange(n) + 0.5) / n
    mask = np.abs(centres - centre) <= radius
    mask[min(int(np.floor(centre * n)), n - 1)] = True
    return mask


def square_masks(triples, height, width):
    """Boolean (P, H, W) masks of the squares encoded by ``(r1, r2, r3)`` triples."""
    triples = np.clip(np.asarray(triples, dtype=float).reshape(-1, 3), 0.0, 1.0)
    masks = np.empty((len(triples), height, width), dtype=bool)
    for p, (r1, r2, r3) in enumerate(triples):
        masks[p] = np.outer(_square_axis_mask(r1, r2, height), _square_axis_mask(r1, r3, width))
    return masks


def apply_squares(s, x, zeta, stripes, epsilon):
    """``R(x + C(sum_p beta_p(s_p) + I))`` with ``C`` the clamp to [-eps, eps].

    ``zeta`` holds the fixed (P, C) channel values in {-eps, +eps} and
    ``stripes`` the fixed stripes image ``I``.
    """
    x = _as_image(x)
    c, h, w = x.shape
    s = np.asarray(s, dtype=float).ravel()
    if s.size == 0 or s.size % 3:
        raise InvalidInputError(f"square latent size {s.size} is not a multiple of 3")
    zeta = np.asarray(zeta, dtype=float).reshape(-1, c)
    masks = square_masks(s, h, w)
    if len(masks) != len(zeta):
        raise ShapeError(f"{len(masks)} squares but {len(zeta)} channel-value rows")
    delta = np.einsum("pc,phw->chw", zeta, masks.astype(float)) + stripes
    delta = np.clip(delta, -epsilon, epsilon)
    out = clip_range(x + delta)
    # rounding in x + delta may overshoot the budget by one ulp
    return project_linf(out, x, epsilon)


class AttackSpace:
    """Base class: a latent box/ball, an application map and a budget.

    Subclasses set ``latent_dim``, ``lower``/``upper`` (arrays or None) and
    optionally ``latent_norm``/``latent_radius`` for a ball constraint on the
    latent itself, and implement ``_apply``.
    """

    kind = "abstract"
    latent_norm = None
    latent_radius = None

    def __init__(self, image_shape=None, budget=None):
        self.image_shape = None if image_shape is None else tuple(int(v) for v in image_shape)
        self.budget = budget
        self.lower = None
        self.upper = None

    def __repr__(self):
        return f"{type(self).__name__}(latent_dim={self.latent_dim}, image_shape={self.image_shape})"

    # --- latent geometry -------------------------------------------------
    def project(self, s):
        """Project latents (a vector or an N x d matrix) onto the feasible set."""
        s = np.asarray(s, dtype=float)
        single = s.ndim == 1
        S = np.atleast_2d(s)
        if self.lower is not None:
            S = np.clip(S, self.lower, self.upper)
        if self.latent_norm == "linf":
            S = project_linf(S, 0.0, self.latent_radius)
        elif self.latent_norm == "l2":
            S = np.stack([project_l2(row, 0.0, self.latent_radius) for row in S])
        return S[0] if single else S

    def sample(self, rng, n):
        """Draw ``n`` latents uniformly from the feasible set."""
        rng = check_random_state(rng)
        d = self.latent_dim
        if self.latent_norm == "l2":
            g = rng.standard_normal((n, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            radii = self.latent_radius * rng.random(n) ** (1.0 / d)
            return self.project(g * radii[:, None])
        lo = -np.inf if self.lower is None else self.lower
        hi = np.inf if self.upper is None else self.upper
        if self.latent_norm == "linf":
            lo = np.maximum(lo, -self.latent_radius)
            hi = np.minimum(hi, self.latent_radius)
        lo = np.broadcast_to(lo, (d,))
        hi = np.broadcast_to(hi, (d,))
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            return rng.standard_normal((n, d))
        return self.project(lo + (hi - lo) * rng.random((n, d)))

    def neutral(self):
        """Latent that leaves the image unchanged (zero perturbation)."""
        return np.zeros(self.latent_dim)

    def initial_point(self, rng):
        """Starting iterate for single-point schemes."""
        return self.neutral()

    # --- application -----------------------------------------------------
    def apply(self, s, x):
        return self._apply(np.asarray(s, dtype=float).ravel(), x)

    def _apply(self, s, x):
        raise NotImplementedError

    def finalize(self, image, x):
        """Project an applied image onto the budget ball around ``x``."""
        if self.budget is None:
            return image
        return self.budget.project(image, x)

    def query_image(self, s, x):
        """The image actually sent to the classifier: budget projection after ``apply``."""
        return self.finalize(self.apply(s, x), x)


class BoxSpace(AttackSpace):
    """Plain Euclidean box, for analytic benchmark objectives."""

    kind = "box"

    def __init__(self, dim, lower=-1.0, upper=1.0):
        super().__init__()
        self.latent_dim = check_int(dim, "dim", minimum=1)
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.latent_dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.latent_dim,)).copy()
        if np.any(self.upper < self.lower):
            raise InvalidConfigError("upper bound below lower bound")

    def initial_point(self, rng):
        return self.sample(rng, 1)[0]

    def _apply(self, s, x):
        return s


def _budget_radius(budget):
    if not isinstance(budget, Budget):
        raise InvalidConfigError(f"expected a Budget, got {budget!r}")
    return budget.norm, budget.epsilon


class DirectSpace(AttackSpace):
    """Latent = additive image perturbation, ``T(s; x) = R(x + s)``."""

    kind = "direct"

    def __init__(self, image_shape, budget):
        super().__init__(image_shape, budget)
        self.latent_dim = int(np.prod(self.image_shape))
        self.latent_norm, self.latent_radius = _budget_radius(budget)

    def _apply(self, s, x):
        return apply_direct(s, x)


class LowResSpace(AttackSpace):
    """Perturbation on a coarse (C, h, w) grid upsampled by pixel tiling."""

    kind = "lowres"

    def __init__(self, image_shape, budget, low_shape):
        super().__init__(image_shape, budget)
        c, h, w = self.image_shape
        self.low_shape = (check_int(low_shape[0], "low height", 1, h),
                          check_int(low_shape[1], "low width", 1, w))
        self.latent_dim = c * self.low_shape[0] * self.low_shape[1]
        self.latent_norm, self.latent_radius = _budget_radius(budget)

    def _apply(self, s, x):
        return apply_lowres(s, x, self.low_shape)


class PixelSpace(AttackSpace):
    """``P`` (colour, position) tuples in [0, 1]^(C + 2), added at single pixels."""

    kind = "pixel"

    def __init__(self, image_shape, n_pixels, budget=None):
        super().__init__(image_shape, budget)
        self.n_pixels = check_int(n_pixels, "n_pixels", minimum=1)
        self.latent_dim = self.n_pixels * (self.image_shape[0] + 2)
        self.lower = np.zeros(self.latent_dim)
        self.upper = np.ones(self.latent_dim)

    def neutral(self):
        s = np.zeros(self.latent_dim)
        return s

    def initial_point(self, rng):
        return self.sample(rng, 1)[0]

    def _apply(self, s, x):
        return apply_pixels(np.clip(s, 0.0, 1.0), x)


class DctSpace(AttackSpace):
    """Low-frequency block of orthonormal DCT coefficients, ``T = R(D^-1(P(s)) + x)``."""

    kind = "dct"

    def __init__(self, image_shape, budget, block_size):
        super().__init__(image_shape, budget)
        c, h, w = self.image_shape
        self.block_size = check_int(block_size, "block_size", 1, min(h, w))
        self.latent_dim = c * self.block_size ** 2
        self.latent_norm, self.latent_radius = _budget_radius(budget)

    def _apply(self, s, x):
        return apply_dct(s, x, self.block_size)


class SquareSpace(AttackSpace):
    """``P`` squares ``(r1, r2, r3)`` in [0, 1]^3 over a fixed stripes image.

    The channel values ``zeta`` and stripes image are drawn once from ``seed``
    and then held fixed; the l-infinity budget is intrinsic to the map.
    """

    kind = "square"

    def __init__(self, image_shape, epsilon, n_squares, seed=None):
        budget = Budget("linf", epsilon)
        super().__init__(image_shape, budget)
        self.epsilon = check_positive(epsilon, "epsilon")
        self.n_squares = check_int(n_squares, "n_squares", minimum=1)
        self.latent_dim = 3 * self.n_squares
        self.lower = np.zeros(self.latent_dim)
        self.upper = np.ones(self.latent_dim)
        rng = check_random_state(seed)
        c = self.image_shape[0]
        self.zeta = rng.choice(np.array([-self.epsilon, self.epsilon]), size=(self.n_squares, c))
        self.stripes = stripes_image(self.image_shape, self.epsilon, rng)

    def initial_point(self, rng):
        return self.sample(rng, 1)[0]

    def _apply(self, s, x):
        return apply_squares(np.clip(s, 0.0, 1.0), x, self.zeta, self.stripes, self.epsilon)


class TanhSpace(AttackSpace):
    """Unconstrained latent mapped into an l-infinity ball by ``eps * tanh(w)``.

    Wraps a perturbation space (direct or low-res) whose budget is l-infinity.
    """

    kind = "tanh"

    def __init__(self, inner):
        if inner.budget is None or inner.budget.norm != "linf":
            raise InvalidConfigError("tanh reparameterization needs an l-infinity budget")
        super().__init__(inner.image_shape, inner.budget)
        self.inner = inner
        self.latent_dim = inner.latent_dim

    def sample(self, rng, n):
        rng = check_random_state(rng)
        return np.arctanh(rng.uniform(-0.99, 0.99, size=(n, self.latent_dim)))

    def project(self, s):
        return np.asarray(s, dtype=float)

    def _apply(self, s, x):
        return self.inner._apply(tanh_reparam(s, 0.0, self.budget.epsilon), x)


def make_space(kind, image_shape, epsilon=0.05, norm="linf", seed=None, **params):
    """Build a space from a name and keyword parameters (config-file helper)."""
    budget = Budget(norm, epsilon)
    if kind == "direct":
        return DirectSpace(image_shape, budget)
    if kind == "lowres":
        return LowResSpace(image_shape, budget, params.get("low_shape", (8, 8)))
    if kind == "pixel":
        return PixelSpace(image_shape, params.get("n_pixels", 1))
    if kind == "dct":
        return DctSpace(image_shape, budget, params.get("block_size", 8))
    if kind == "square":
        return SquareSpace(image_shape, epsilon, params.get("n_squares", 10), seed=seed)
    if kind == "tanh":
        inner_kind = params.get("inner", "direct")
        inner_params = {k: v for k, v in params.items() if k != "inner"}
        return TanhSpace(make_space(inner_kind, image_shape, epsilon, norm, seed, **inner_params))
    raise InvalidConfigError(f"unknown attack space {kind!r}")
