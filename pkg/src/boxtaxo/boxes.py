"""Differentiable box embeddings and their affinities.

A box is an axis-aligned hyperrectangle inside the unit hypercube, stored as
its lower and upper corner.  Boxes are produced from two unconstrained
parameter vectors: a sigmoid squash places the lower corner in (0, 1) and a
second squash places the upper corner inside the remaining room, so every
parameter setting yields a valid box.

Volumes use the smoothed (Gumbel) form ``sum(log(softplus(side / t) * t))``
so that gradients flow even when boxes are disjoint, and intersections use
smooth max/min with their own sharper temperature.  All affinities are log
volumes:

* ``sym_affinity``       log Vol(a ^ b), symmetric overlap;
* ``norm_sym_affinity``  overlap discounted by both volumes, used for
  topic-word weights;
* ``asym_containment``   log [Vol(child ^ parent) / Vol(parent)], close to 0
  when the parent is inside the child.

Pairwise variants expand two batches into all pairs through repeat/tile ops
whose backward passes are plain reshape-sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad

Array = np.ndarray


@dataclass(frozen=True)
class BoxAlgebraConfig:
    """Temperatures and floors shared by every box computation."""

    dim: int
    vol_temp: float = 1.0
    int_temp: float = 0.1
    log_eps: float = 1e-10

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.vol_temp <= 0.0 or self.int_temp <= 0.0:
            raise ValueError("temperatures must be positive")
        if not 0.0 < self.log_eps <= 1e-6:
            raise ValueError("log_eps must be in (0, 1e-6]")


@dataclass
class BoxEmbed:
    """Corners of one box (shape ``(dim,)``) or a batch (``(n, dim)``)."""

    lower: ad.Node
    upper: ad.Node

    @property
    def dim(self) -> int:
        return self.lower.shape[-1]

    @property
    def lower_value(self) -> Array:
        return self.lower.value

    @property
    def upper_value(self) -> Array:
        return self.upper.value


def make_box(params_min, params_size) -> BoxEmbed:
    """Squash two free parameter arrays into a valid box.

    ``lower = sigmoid(params_min)`` and the upper corner sits a
    ``sigmoid(params_size)`` fraction of the way from ``lower`` to 1, so
    ``0 < lower < upper < 1`` holds for all finite parameters.
    """
    pmin, psize = ad.lift(params_min), ad.lift(params_size)
    if pmin.shape != psize.shape:
        raise ValueError(f"corner parameter shapes differ: {pmin.shape} vs {psize.shape}")
    lower = ad.sigmoid(pmin)
    upper = lower + ad.sigmoid(psize) * (1.0 - lower)
    return BoxEmbed(lower, upper)


def box_from_coords(lower, upper) -> BoxEmbed:
    """Wrap fixed corner arrays as a constant (non-trainable) box."""
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    if lo.shape != hi.shape:
        raise ValueError(f"corner shapes differ: {lo.shape} vs {hi.shape}")
    return BoxEmbed(ad.constant(lo), ad.constant(hi))


def params_from_coords(lower: Array, upper: Array, margin: float = 1e-6) -> tuple[Array, Array]:
    """Invert :func:`make_box`: recover free parameters from corners.

    Corners are clipped ``margin`` away from 0 and 1 so the logit stays
    finite.  Round-tripping coordinates in the open cube reproduces them to
    float precision.
    """

    def logit(p):
        p = np.clip(p, margin, 1.0 - margin)
        return np.log(p) - np.log1p(-p)

    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    frac = (upper - lower) / np.maximum(1.0 - lower, margin)
    return logit(lower), logit(frac)


def hard_volume(box: BoxEmbed) -> Array:
    """Exact product of side lengths; zero-width boxes give 0."""
    return np.prod(box.upper_value - box.lower_value, axis=-1)


def gumbel_log_volume(box: BoxEmbed, cfg: BoxAlgebraConfig) -> ad.Node:
    """Smoothed log volume, finite for any corner ordering.

    Each side length passes through a softplus at ``vol_temp`` so negative
    (inverted) sides give a near-zero rather than negative volume, and
    ``log_eps`` keeps the log finite when the softplus underflows.
    """
    side = box.upper - box.lower
    soft = ad.softplus(side, cfg.vol_temp)
    return ad.reduce_sum(ad.log(soft + cfg.log_eps), axis=-1)


def intersect(a: BoxEmbed, b: BoxEmbed, cfg: BoxAlgebraConfig) -> BoxEmbed:
    """Smooth intersection; may be inverted when the boxes are disjoint."""
    if a.dim != b.dim:
        raise ValueError(f"box dims differ: {a.dim} vs {b.dim}")
    return BoxEmbed(
        ad.smooth_max(a.lower, b.lower, cfg.int_temp),
        ad.smooth_min(a.upper, b.upper, cfg.int_temp),
    )


def union_box(a: BoxEmbed, b: BoxEmbed) -> BoxEmbed:
    """Exact bounding box of two boxes.  Constant: no gradients flow."""
    if a.dim != b.dim:
        raise ValueError(f"box dims differ: {a.dim} vs {b.dim}")
    return box_from_coords(
        np.minimum(a.lower_value, b.lower_value),
        np.maximum(a.upper_value, b.upper_value),
    )


def soft_union(boxes: Sequence[BoxEmbed]) -> BoxEmbed:
    """Coordinate-wise mean of a group of boxes.  Constant corners.

    Used when merging clustered topics into an upper-level topic; the mean
    keeps the result inside the unit cube and between the members.
    """
    if len(boxes) == 0:
        raise ValueError("soft_union of no boxes")
    lo = np.mean([b.lower_value for b in boxes], axis=0)
    hi = np.mean([b.upper_value for b in boxes], axis=0)
    return box_from_coords(lo, hi)


def sym_affinity(a: BoxEmbed, b: BoxEmbed, cfg: BoxAlgebraConfig) -> ad.Node:
    """Log volume of the smooth intersection."""
    return gumbel_log_volume(intersect(a, b, cfg), cfg)


def norm_sym_affinity(a: BoxEmbed, b: BoxEmbed, cfg: BoxAlgebraConfig) -> ad.Node:
    """Overlap log volume minus both boxes' own log volumes."""
    return (
        sym_affinity(a, b, cfg)
        - gumbel_log_volume(a, cfg)
        - gumbel_log_volume(b, cfg)
    )


def asym_containment(child: BoxEmbed, parent: BoxEmbed, cfg: BoxAlgebraConfig) -> ad.Node:
    """Log of the conditional volume Vol(child ^ parent) / Vol(parent)."""
    return sym_affinity(child, parent, cfg) - gumbel_log_volume(parent, cfg)


def _batch_rows(box: BoxEmbed) -> int:
    if box.lower.ndim != 2:
        raise ValueError("pairwise affinity expects batched (n, dim) boxes")
    return box.lower.shape[0]


def _expand_pairs(a: BoxEmbed, b: BoxEmbed) -> tuple[BoxEmbed, BoxEmbed, int, int]:
    """All (row of a, row of b) pairs as two aligned (n*m, dim) boxes."""
    n, m = _batch_rows(a), _batch_rows(b)
    if a.dim != b.dim:
        raise ValueError(f"box dims differ: {a.dim} vs {b.dim}")
    a_exp = BoxEmbed(ad.repeat_rows(a.lower, m), ad.repeat_rows(a.upper, m))
    b_exp = BoxEmbed(ad.tile_rows(b.lower, n), ad.tile_rows(b.upper, n))
    return a_exp, b_exp, n, m


def pairwise_sym_affinity(a: BoxEmbed, b: BoxEmbed, cfg: BoxAlgebraConfig) -> ad.Node:
    """Matrix of sym_affinity over all pairs: entry (i, j) pairs a_i, b_j."""
    a_exp, b_exp, n, m = _expand_pairs(a, b)
    flat = sym_affinity(a_exp, b_exp, cfg)
    return ad.reshape(flat, (n, m))


def pairwise_norm_sym_affinity(a: BoxEmbed, b: BoxEmbed, cfg: BoxAlgebraConfig) -> ad.Node:
    """Normalized overlap for all pairs; rows index ``a``, columns ``b``."""
    n, m = _batch_rows(a), _batch_rows(b)
    raw = pairwise_sym_affinity(a, b, cfg)
    vol_a = ad.reshape(gumbel_log_volume(a, cfg), (n, 1))
    vol_b = ad.reshape(gumbel_log_volume(b, cfg), (1, m))
    return raw - vol_a - vol_b


def pairwise_asym_containment(
    children: BoxEmbed, parents: BoxEmbed, cfg: BoxAlgebraConfig
) -> ad.Node:
    """Containment score for all pairs; entry (i, j) is child i in parent j."""
    m = _batch_rows(parents)
    raw = pairwise_sym_affinity(children, parents, cfg)
    vol_p = ad.reshape(gumbel_log_volume(parents, cfg), (1, m))
    return raw - vol_p


def gather_boxes(box: BoxEmbed, idx) -> BoxEmbed:
    """Select rows of a batched box; gradients scatter back."""
    return BoxEmbed(ad.gather_rows(box.lower, idx), ad.gather_rows(box.upper, idx))


def stack_box_coords(boxes: Sequence[BoxEmbed]) -> BoxEmbed:
    """Stack single boxes into one constant batch of their current corners."""
    lo = np.stack([b.lower_value for b in boxes])
    hi = np.stack([b.upper_value for b in boxes])
    return box_from_coords(lo, hi)


# ---------------------------------------------------------------------------
# numpy fast paths
#
# Gradient-free mirrors of the affinity functions, used where no graph is
# needed (clustering between epochs, keyword export).  Each one computes the
# same arithmetic as its Node counterpart, which the tests assert.


def np_log_volume(lower: Array, upper: Array, cfg: BoxAlgebraConfig) -> Array:
    """Smoothed log volume over the last axis, numpy only."""
    side = np.asarray(upper, dtype=np.float64) - np.asarray(lower, dtype=np.float64)
    soft = cfg.vol_temp * np.logaddexp(0.0, side / cfg.vol_temp)
    return np.log(soft + cfg.log_eps).sum(axis=-1)


def np_pairwise_sym(
    a_lower: Array, a_upper: Array, b_lower: Array, b_upper: Array, cfg: BoxAlgebraConfig
) -> Array:
    """All-pairs smooth-intersection log volume: rows index a, columns b."""
    t = cfg.int_temp
    al, au = a_lower[:, None, :], a_upper[:, None, :]
    bl, bu = b_lower[None, :, :], b_upper[None, :, :]
    lo = t * np.logaddexp(al / t, bl / t)
    hi = -t * np.logaddexp(-au / t, -bu / t)
    return np_log_volume(lo, hi, cfg)


def np_pairwise_norm_sym(
    a_lower: Array, a_upper: Array, b_lower: Array, b_upper: Array, cfg: BoxAlgebraConfig
) -> Array:
    raw = np_pairwise_sym(a_lower, a_upper, b_lower, b_upper, cfg)
    va = np_log_volume(a_lower, a_upper, cfg)
    vb = np_log_volume(b_lower, b_upper, cfg)
    return raw - va[:, None] - vb[None, :]


def np_pairwise_asym(
    c_lower: Array, c_upper: Array, p_lower: Array, p_upper: Array, cfg: BoxAlgebraConfig
) -> Array:
    """Containment score matrix: entry (i, j) is log R(child i | parent j)."""
    raw = np_pairwise_sym(c_lower, c_upper, p_lower, p_upper, cfg)
    vp = np_log_volume(p_lower, p_upper, cfg)
    return raw - vp[None, :]
