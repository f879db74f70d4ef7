"""Probability and loss primitives: temperature softmax, entropy,
cross-entropy, KL divergence, and the analytic gradients the trainers need.

All quantities use natural logarithms (nats) and double precision.  Every
function is pure, operates on 1-D vectors, and validates its inputs.
"""

from __future__ import annotations

import operator

import numpy as np

# Clamp applied inside every log argument so degenerate probabilities can
# never produce an infinity.
EPS = 1e-12

# Absolute tolerance for a probability vector summing to one.
PROB_SUM_TOL = 1e-9


def as_logit_vector(z) -> np.ndarray:
    """Validate and return ``z`` as a finite 1-D float64 vector, length >= 2."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ValueError(f"logit vector must be 1-D with length >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logit vector contains non-finite entries")
    return z


def as_prob_vector(p) -> np.ndarray:
    """Validate and return ``p`` as a probability vector (non-negative,
    sums to 1 within ``PROB_SUM_TOL``)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ValueError(f"probability vector must be 1-D with length >= 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("probability vector contains non-finite entries")
    if np.any(p < 0.0):
        raise ValueError("probability vector contains negative entries")
    total = float(np.sum(p))
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probability vector sums to {total!r}, not 1")
    return p


def _check_tau(tau) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.0:
        raise ValueError(f"temperature must be a positive finite real, got {tau!r}")
    return tau


def _check_class_index(y, k: int) -> int:
    y = operator.index(y)
    if not 0 <= y < k:
        raise ValueError(f"class index {y} out of range [0, {k})")
    return y


def softmax_tau(z, tau=1.0) -> np.ndarray:
    """Temperature-scaled softmax: ``p_i = exp(z_i/tau) / sum_j exp(z_j/tau)``.

    ``tau = 1`` is the ordinary softmax; larger ``tau`` spreads the
    probability mass more uniformly.  Computed with max-subtraction so
    arbitrarily large logits stay finite.
    """
    z = as_logit_vector(z)
    tau = _check_tau(tau)
    scaled = z / tau
    scaled -= np.max(scaled)
    e = np.exp(scaled)
    return e / np.sum(e)


def softmax_tau_jacobian_vp(z, tau, upstream) -> np.ndarray:
    """Jacobian-transpose product of :func:`softmax_tau` at ``z``.

    Returns ``g`` with ``g_i = p_i * (upstream_i - sum_j upstream_j p_j) / tau``,
    i.e. the gradient of ``upstream . softmax_tau(z, tau)`` w.r.t. ``z``.
    """
    z = as_logit_vector(z)
    tau = _check_tau(tau)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != z.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match logits shape {z.shape}"
        )
    p = softmax_tau(z, tau)
    return p * (upstream - float(np.dot(upstream, p))) / tau


def entropy(p) -> float:
    """Shannon entropy ``-sum_i p_i ln p_i`` in nats, with 0 ln 0 = 0."""
    p = as_prob_vector(p)
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, EPS)), 0.0)
    return float(-np.sum(terms))


def cross_entropy(y, p) -> float:
    """Cross-entropy ``-ln p_y`` between a one-hot target class and ``p``.

    ``p_y`` is clamped to ``EPS`` so the result is always finite.
    """
    p = as_prob_vector(p)
    y = _check_class_index(y, p.shape[0])
    return float(-np.log(max(float(p[y]), EPS)))


def kl_divergence(p, q) -> float:
    """KL divergence ``KL(p || q) = sum_i p_i ln(p_i / q_i)`` in nats.

    Argument order is (reference, approximation).  ``q`` entries are
    clamped to ``EPS`` before the division; terms with ``p_i = 0``
    contribute zero.
    """
    p = as_prob_vector(p)
    q = as_prob_vector(q)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    log_ratio = np.log(np.maximum(p, EPS) / np.maximum(q, EPS))
    return float(np.sum(np.where(p > 0.0, p * log_ratio, 0.0)))
