"""Sampling and weighting helpers shared by the CBO and CH/NES modules."""

import numpy as np
from scipy.special import logsumexp


def log_weights(values, alpha):
    """``log softmax(-alpha * values)``, shifted by log-sum-exp."""
    scaled = -alpha * np.asarray(values, dtype=float)
    # shift by the max first so large alpha * values keep full precision
    scaled = scaled - np.max(scaled)
    return scaled - logsumexp(scaled)


def softmax_weights(values, alpha):
    """Normalized ``softmax(-alpha * values)``; sums to 1 up to one rounding."""
    w = np.exp(log_weights(values, alpha))
    return w / np.sum(w)


def antithetic_or_plain(rng, m, d):
    """``m`` Gaussian rows as ``(z, -z)`` pairs, plus one unpaired row if ``m`` is odd."""
    half = m // 2
    z = rng.standard_normal((half, d))
    parts = [z, -z]
    if m % 2:
        parts.append(rng.standard_normal((1, d)))
    return np.vstack(parts)


def paired_sum(coeffs, samples):
    """``coeffs @ samples``, summed pairwise when the rows are antithetic.

    For rows laid out as ``(z, -z)`` this computes ``(c[:h] - c[h:]) @ z`` so
    that equal coefficients cancel exactly instead of up to rounding.
    """
    n = len(coeffs)
    h = n // 2
    if n % 2 == 0 and h and np.array_equal(samples[h:], -samples[:h]):
        return (coeffs[:h] - coeffs[h:]) @ samples[:h]
    return coeffs @ samples


def paired_with_tail(coeffs, samples):
    """``paired_sum`` over the even prefix plus the trailing unpaired row."""
    even = len(coeffs) - len(coeffs) % 2
    total = paired_sum(coeffs[:even], samples[:even]) if even else np.zeros(samples.shape[1])
    if even < len(coeffs):
        total = total + coeffs[-1] * samples[-1]
    return total
