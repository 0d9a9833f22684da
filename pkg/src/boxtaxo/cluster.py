"""Upper-level topic mining by clustering topic boxes.

Between training epochs (until the stop epoch), each topic level is built
from the one below it: every topic box is first expanded to the bounding box
of itself and its top keyword boxes, pairwise containment scores between the
expanded boxes form an asymmetric affinity matrix, affinity propagation
picks exemplars and members, and each cluster's expanded boxes are merged by
coordinate-wise mean into one upper-level box.  Parent links then come from
containment scores on the raw (unexpanded) boxes.

Affinity propagation is the standard responsibility/availability message
passing with damping, run directly on the asymmetric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import boxes as bx
from .boxes import BoxAlgebraConfig, BoxEmbed

Array = np.ndarray


@dataclass(frozen=True)
class ClusterConfig:
    damping: float = 0.9
    max_iter: int = 200
    convergence_window: int = 15
    preference_mode: str = "median"
    n_expand: int = 5
    top_threshold: int = 10
    adaptive_depth: bool = False

    def __post_init__(self):
        if not 0.5 <= self.damping < 1.0:
            raise ValueError("damping must be in [0.5, 1)")
        if self.max_iter < 1 or self.convergence_window < 1:
            raise ValueError("iteration limits must be positive")
        if self.max_iter < self.convergence_window:
            raise ValueError("max_iter must be >= convergence_window")
        if self.preference_mode not in ("median", "min"):
            raise ValueError("preference_mode must be 'median' or 'min'")
        if self.n_expand < 1:
            raise ValueError("n_expand must be >= 1")
        if self.top_threshold < 1:
            raise ValueError("top_threshold must be >= 1")


def expand_topic_box(topic: BoxEmbed, keywords: BoxEmbed) -> BoxEmbed:
    """Bounding box of a topic box and its keyword boxes (hard union)."""
    if keywords.lower.ndim != 2 or keywords.lower.shape[0] < 1:
        raise ValueError("expected at least one keyword box")
    lo = np.minimum(topic.lower_value, keywords.lower_value.min(axis=0))
    hi = np.maximum(topic.upper_value, keywords.upper_value.max(axis=0))
    return bx.box_from_coords(lo, hi)


def expand_level(
    topic_lo: Array,
    topic_hi: Array,
    word_lo: Array,
    word_hi: Array,
    keyword_idx: Array,
) -> tuple[Array, Array]:
    """Vectorized :func:`expand_topic_box` over a whole level.

    ``keyword_idx`` is (topics, n_expand) word indices per topic.
    """
    kw_lo = word_lo[keyword_idx]
    kw_hi = word_hi[keyword_idx]
    lo = np.minimum(topic_lo, kw_lo.min(axis=1))
    hi = np.maximum(topic_hi, kw_hi.max(axis=1))
    return lo, hi


def topic_affinity_matrix(expanded: BoxEmbed, cfg: BoxAlgebraConfig) -> Array:
    """Asymmetric affinity between expanded boxes.

    Entry (i, j) is the log fraction of box i's volume covered by box j;
    the diagonal is zeroed and set later by the preference.  Not symmetrized:
    a huge box covering everything earns low scores as a member, which keeps
    hub-like topics from absorbing the level.
    """
    n = expanded.lower.shape[0] if expanded.lower.ndim == 2 else 1
    if n < 2:
        raise ValueError("affinity matrix needs at least 2 boxes")
    lo, hi = expanded.lower_value, expanded.upper_value
    overlap = bx.np_pairwise_sym(lo, hi, lo, hi, cfg)
    vol = bx.np_log_volume(lo, hi, cfg)
    a = overlap - vol[:, None]
    np.fill_diagonal(a, 0.0)
    return a


@dataclass
class APResult:
    labels: Array
    exemplars: Array
    n_iter: int
    converged: bool

    @property
    def n_clusters(self) -> int:
        return len(self.exemplars)


def affinity_propagation(
    affinity: Array,
    cfg: ClusterConfig,
    preference: float | None = None,
) -> APResult:
    """Exemplar clustering on a (possibly asymmetric) affinity matrix.

    The diagonal of the similarity matrix holds the preference (median or
    min of off-diagonal entries by default); messages are damped and the run
    stops when the exemplar set is stable for ``convergence_window``
    iterations.  Always returns an assignment: if no exemplar emerges, the
    item with the best self-evidence becomes one.
    """
    s = np.array(affinity, dtype=np.float64)
    n = s.shape[0]
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("affinity matrix must be square")
    if n == 1:
        return APResult(np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), 0, True)
    off_diag = s[~np.eye(n, dtype=bool)]
    if preference is None:
        preference = (
            float(np.median(off_diag))
            if cfg.preference_mode == "median"
            else float(off_diag.min())
        )
    np.fill_diagonal(s, preference)

    r = np.zeros((n, n))
    a = np.zeros((n, n))
    diag = np.diag_indices(n)
    exemplar_mask = np.zeros(n, dtype=bool)
    stable_for = 0
    n_iter = 0
    converged = False
    for n_iter in range(1, cfg.max_iter + 1):
        # responsibilities: best remaining evidence for each candidate
        as_ = a + s
        best_idx = as_.argmax(axis=1)
        best = as_[np.arange(n), best_idx]
        as_[np.arange(n), best_idx] = -np.inf
        second = as_.max(axis=1)
        r_new = s - best[:, None]
        r_new[np.arange(n), best_idx] = s[np.arange(n), best_idx] - second
        r = cfg.damping * r + (1.0 - cfg.damping) * r_new

        # availabilities: pooled positive responsibilities per candidate
        rp = np.maximum(r, 0.0)
        rp[diag] = r[diag]
        col = rp.sum(axis=0)
        a_new = col[None, :] - rp
        a_diag = a_new[diag].copy()
        a_new = np.minimum(a_new, 0.0)
        a_new[diag] = a_diag
        a = cfg.damping * a + (1.0 - cfg.damping) * a_new

        mask = (r[diag] + a[diag]) > 0.0
        if mask.any() and np.array_equal(mask, exemplar_mask):
            stable_for += 1
            if stable_for >= cfg.convergence_window:
                converged = True
                break
        else:
            stable_for = 0
        exemplar_mask = mask

    exemplars = np.flatnonzero(exemplar_mask)
    if len(exemplars) == 0:
        exemplars = np.array([int(np.argmax(r[diag] + a[diag]))], dtype=np.int64)
    labels = np.argmax(s[:, exemplars], axis=1)
    labels[exemplars] = np.arange(len(exemplars))
    return APResult(labels.astype(np.int64), exemplars.astype(np.int64), n_iter, converged)


def assign_parents(theta: Array) -> Array:
    """Parent per row: the upper topic with the highest containment score.

    Ties break to the lowest column index.
    """
    theta = np.asarray(theta)
    if theta.size == 0:
        raise ValueError("empty relation matrix")
    return np.argmax(theta, axis=1).astype(np.int64)


@dataclass
class RecurClusResult:
    """Everything one clustering pass produced.

    ``upper_levels[k]`` holds the corner arrays for level k+1 (leaf = 0);
    ``memberships[k]`` maps level-k topics to their cluster at level k+1;
    ``parents[k]`` are containment-based parent links for level k.
    """

    upper_levels: list[tuple[Array, Array]] = field(default_factory=list)
    memberships: list[Array] = field(default_factory=list)
    parents: list[Array] = field(default_factory=list)
    requested_depth: int = 0
    topped_out: bool = False
    adaptive_stop: bool = False

    @property
    def depth(self) -> int:
        return len(self.upper_levels) + 1


def _keyword_indices(
    topic_lo: Array,
    topic_hi: Array,
    word_lo: Array,
    word_hi: Array,
    n_expand: int,
    cfg: BoxAlgebraConfig,
) -> Array:
    """Top keyword word-ids per topic by normalized overlap (ties: lower id)."""
    scores = bx.np_pairwise_norm_sym(topic_lo, topic_hi, word_lo, word_hi, cfg)
    n = min(n_expand, scores.shape[1])
    return np.argsort(-scores, axis=1, kind="stable")[:, :n]


def recur_clus(
    word_boxes: BoxEmbed,
    leaf_boxes: BoxEmbed,
    depth: int,
    cluster_cfg: ClusterConfig,
    box_cfg: BoxAlgebraConfig,
) -> RecurClusResult:
    """Build upper topic levels from the leaves, bottom up.

    For each level: expand boxes with their keywords, cluster the expanded
    boxes, merge each cluster by coordinate-wise mean.  Stops early when a
    level cannot be split further (recorded, not fatal) or, in adaptive
    mode, when a level is already at or below ``top_threshold`` topics.
    Parent links are recomputed from raw boxes for every adjacent pair.
    """
    if depth < 2:
        raise ValueError("depth must be >= 2 to build upper levels")
    word_lo, word_hi = word_boxes.lower_value, word_boxes.upper_value
    levels: list[tuple[Array, Array]] = [(leaf_boxes.lower_value, leaf_boxes.upper_value)]
    result = RecurClusResult(requested_depth=depth)
    while len(levels) < depth:
        cur_lo, cur_hi = levels[-1]
        n_topics = cur_lo.shape[0]
        if cluster_cfg.adaptive_depth and n_topics <= cluster_cfg.top_threshold:
            result.adaptive_stop = True
            break
        if n_topics == 1:
            result.topped_out = True
            break
        kw_idx = _keyword_indices(
            cur_lo, cur_hi, word_lo, word_hi, cluster_cfg.n_expand, box_cfg
        )
        exp_lo, exp_hi = expand_level(cur_lo, cur_hi, word_lo, word_hi, kw_idx)
        affinity = topic_affinity_matrix(bx.box_from_coords(exp_lo, exp_hi), box_cfg)
        ap = affinity_propagation(affinity, cluster_cfg)
        if ap.n_clusters < 2 and cluster_cfg.preference_mode != "min":
            off = affinity[~np.eye(n_topics, dtype=bool)]
            ap = affinity_propagation(affinity, cluster_cfg, preference=float(off.min()))
        if ap.n_clusters < 2:
            result.topped_out = True
        new_lo = np.stack(
            [exp_lo[ap.labels == c].mean(axis=0) for c in range(ap.n_clusters)]
        )
        new_hi = np.stack(
            [exp_hi[ap.labels == c].mean(axis=0) for c in range(ap.n_clusters)]
        )
        levels.append((new_lo, new_hi))
        result.upper_levels.append((new_lo, new_hi))
        result.memberships.append(ap.labels)
        if ap.n_clusters < 2:
            break
    for k in range(len(levels) - 1):
        c_lo, c_hi = levels[k]
        p_lo, p_hi = levels[k + 1]
        theta = bx.np_pairwise_asym(c_lo, c_hi, p_lo, p_hi, box_cfg)
        result.parents.append(assign_parents(theta))
    return result
