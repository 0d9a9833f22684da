"""The topic-box network.

State is a set of word boxes, per-level topic boxes (level 0 is the leaf
level), a small VAE-style encoder, and parent links between adjacent levels.
The pieces connect as follows:

* ``hier_relations``    containment scores between adjacent topic levels;
  they propagate document-topic proportions upward and define parents.
* ``topic_word_dist``   row-stochastic topic-word matrices from normalized
  box overlaps.
* ``encode``            TF-IDF row -> hidden -> Gaussian latent -> leaf
  proportions -> upper proportions through the containment matrices.
* ``decode``            proportions and topic-word matrices -> reconstructed
  word distribution, each level's term sharpened by the per-word coefficient
  of variation across topics and unit-normalized before summing.

Everything differentiable runs through :mod:`boxtaxo.autodiff` nodes; the
``*_values`` helpers are gradient-free numpy mirrors for export and sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import boxes as bx

Array = np.ndarray

CHECKPOINT_SCHEMA = "boxtaxo-checkpoint-1"

# Floor inside the CV standard deviation; keeps sqrt differentiable when a
# column is exactly constant without distorting nonzero deviations.
_CV_VAR_FLOOR = 1e-24


def _np_softmax(x: Array, axis: int = -1) -> Array:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class LevelBoxes:
    """Free parameters for one level's topic boxes."""

    params_min: ad.Node
    params_size: ad.Node

    @property
    def size(self) -> int:
        return self.params_min.shape[0]

    def boxes(self) -> bx.BoxEmbed:
        return bx.make_box(self.params_min, self.params_size)


@dataclass
class EncoderParams:
    w_hidden: ad.Node
    b_hidden: ad.Node
    w_mu: ad.Node
    b_mu: ad.Node
    w_sigma: ad.Node
    b_sigma: ad.Node
    w_pi: ad.Node
    b_pi: ad.Node

    def parameters(self) -> list[ad.Node]:
        return [
            self.w_hidden,
            self.b_hidden,
            self.w_mu,
            self.b_mu,
            self.w_sigma,
            self.b_sigma,
            self.w_pi,
            self.b_pi,
        ]


@dataclass
class EncodeResult:
    hidden: ad.Node
    mu: ad.Node
    sigma: ad.Node
    z: ad.Node
    proportions: list[ad.Node]


class ModelState:
    """Mutable container for all trainable parameters and taxonomy links.

    ``levels[0]`` is the leaf topic level; ``parents[k][i]`` is the index of
    topic i of level k's parent within level k+1.  ``memberships[k]`` records
    the cluster labels that produced level k+1 (informational).
    """

    def __init__(
        self,
        box_cfg: bx.BoxAlgebraConfig,
        word_level: LevelBoxes,
        levels: list[LevelBoxes],
        encoder: EncoderParams,
        parents: list[Array] | None = None,
        memberships: list[Array] | None = None,
    ):
        self.box_cfg = box_cfg
        self.word_level = word_level
        self.levels = levels
        self.encoder = encoder
        self.parents = parents if parents is not None else []
        self.memberships = memberships if memberships is not None else []
        self.validate()

    def validate(self) -> None:
        for k in range(len(self.levels) - 1):
            upper, lower = self.levels[k + 1].size, self.levels[k].size
            if upper > lower:
                raise ValueError(f"level {k + 1} has {upper} topics > level {k}'s {lower}")
        if len(self.parents) != max(len(self.levels) - 1, 0):
            raise ValueError("one parent array is required per non-top level")
        for k, par in enumerate(self.parents):
            if len(par) != self.levels[k].size:
                raise ValueError(f"parent array {k} has wrong length")
            if len(par) and (par.min() < 0 or par.max() >= self.levels[k + 1].size):
                raise ValueError(f"parent indices at level {k} out of range")

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def vocab_size(self) -> int:
        return self.word_level.size

    @property
    def level_sizes(self) -> list[int]:
        return [lv.size for lv in self.levels]

    def word_boxes(self) -> bx.BoxEmbed:
        return self.word_level.boxes()

    def topic_boxes(self, k: int) -> bx.BoxEmbed:
        return self.levels[k].boxes()

    def box_parameters(self) -> list[ad.Node]:
        params = [self.word_level.params_min, self.word_level.params_size]
        for lv in self.levels:
            params.extend([lv.params_min, lv.params_size])
        return params

    def parameters(self) -> list[ad.Node]:
        return self.box_parameters() + self.encoder.parameters()


def _glorot(rng: np.random.Generator, n_in: int, n_out: int) -> Array:
    scale = np.sqrt(2.0 / (n_in + n_out))
    return rng.normal(0.0, scale, size=(n_in, n_out))


def _logit(p: Array) -> Array:
    return np.log(p) - np.log1p(-p)


def anchor_centroids(
    positions: Array, k: int, rng: np.random.Generator, lloyd_iters: int = 5
) -> Array:
    """k spread-out cluster centroids of the rows of ``positions``.

    Farthest-point traversal from a random start picks one seed per distinct
    region, then a few Lloyd iterations move each seed to the mean of its
    nearest rows.  Used to start topic boxes one-per-word-cluster: topics
    that start in the same cluster stay there (overlap gradients do not
    reach across empty space), leaving other clusters without a topic.
    """
    n = positions.shape[0]
    if k >= n:
        return positions[np.arange(k) % n].copy()
    seeds = [int(rng.integers(n))]
    d2 = np.sum((positions - positions[seeds[0]]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))
        seeds.append(nxt)
        d2 = np.minimum(d2, np.sum((positions - positions[nxt]) ** 2, axis=1))
    centroids = positions[np.array(seeds)].copy()
    for _ in range(lloyd_iters):
        owner = np.linalg.norm(
            positions[:, None] - centroids[None], axis=-1
        ).argmin(axis=1)
        for i in range(k):
            member = owner == i
            if member.any():
                centroids[i] = positions[member].mean(axis=0)
    return centroids


def init_state(
    vocab_size: int,
    leaf_topics: int,
    hidden: int,
    box_cfg: bx.BoxAlgebraConfig,
    rng: np.random.Generator,
    word_positions: Array | None = None,
) -> ModelState:
    """Fresh state: small boxes, Glorot-initialized encoder, no upper levels.

    With ``word_positions`` (rows in (0, 1)^dim, normally from
    :func:`boxtaxo.corpus.spectral_positions`) word boxes start at those
    coordinates and leaf topic boxes start on their cluster centroids.
    Without it, positions are random with a wide spread: boxes bunched
    together make every pairwise affinity nearly equal, which leaves
    contrastive losses without a usable gradient direction and lets several
    topics settle on the same word cluster."""
    dim = box_cfg.dim
    if word_positions is not None:
        if word_positions.shape != (vocab_size, dim):
            raise ValueError("word_positions must be (vocab_size, dim)")
        word_min = _logit(np.clip(word_positions, 0.02, 0.98))
        anchors = anchor_centroids(word_positions, leaf_topics, rng)
        anchors = anchors + rng.normal(0.0, 0.02, size=anchors.shape)
        leaf_min = _logit(np.clip(anchors, 0.02, 0.98))
    else:
        word_min = rng.normal(0.0, 1.5, size=(vocab_size, dim))
        leaf_min = rng.normal(0.0, 1.5, size=(leaf_topics, dim))
    word_level = LevelBoxes(
        ad.parameter(word_min),
        ad.parameter(rng.normal(-2.0, 0.1, size=(vocab_size, dim))),
    )
    leaf = LevelBoxes(
        ad.parameter(leaf_min),
        ad.parameter(rng.normal(-1.0, 0.1, size=(leaf_topics, dim))),
    )
    enc = EncoderParams(
        w_hidden=ad.parameter(_glorot(rng, vocab_size, hidden)),
        b_hidden=ad.parameter(np.zeros(hidden)),
        w_mu=ad.parameter(_glorot(rng, hidden, leaf_topics)),
        b_mu=ad.parameter(np.zeros(leaf_topics)),
        w_sigma=ad.parameter(_glorot(rng, hidden, leaf_topics)),
        b_sigma=ad.parameter(np.zeros(leaf_topics)),
        w_pi=ad.parameter(_glorot(rng, leaf_topics, leaf_topics)),
        b_pi=ad.parameter(np.zeros(leaf_topics)),
    )
    return ModelState(box_cfg, word_level, [leaf], enc)


def _check_finite(value: Array, stage: str) -> None:
    if not np.isfinite(value).all():
        raise FloatingPointError(f"non-finite values in {stage}")


def hier_relations(
    state: ModelState,
    k: int,
    child_boxes: bx.BoxEmbed | None = None,
    parent_boxes: bx.BoxEmbed | None = None,
) -> ad.Node:
    """Containment matrix between level k (rows) and level k+1 (columns).

    Entry (i, j) is the log ratio of topic i's overlap with upper topic j to
    upper topic j's own volume, on raw (unexpanded) boxes.  Prebuilt boxes
    can be passed so one graph is shared across the losses of a step.
    """
    if not 0 <= k < state.depth - 1:
        raise ValueError(f"no relations above level {k} in a {state.depth}-level state")
    child = child_boxes if child_boxes is not None else state.topic_boxes(k)
    parent = parent_boxes if parent_boxes is not None else state.topic_boxes(k + 1)
    return bx.pairwise_asym_containment(child, parent, state.box_cfg)


def hier_relations_values(state: ModelState, k: int) -> Array:
    """Gradient-free mirror of :func:`hier_relations`."""
    child, parent = state.topic_boxes(k), state.topic_boxes(k + 1)
    return bx.np_pairwise_asym(
        child.lower_value, child.upper_value, parent.lower_value, parent.upper_value, state.box_cfg
    )


def topic_word_dist(
    state: ModelState,
    k: int,
    topic_boxes: bx.BoxEmbed | None = None,
    word_boxes: bx.BoxEmbed | None = None,
) -> ad.Node:
    """Row-stochastic topic-word matrix for level k.

    Row i is a softmax over the vocabulary of the symmetric overlap between
    topic i's box and each word box, discounted by both boxes' volumes.
    """
    topics = topic_boxes if topic_boxes is not None else state.topic_boxes(k)
    words = word_boxes if word_boxes is not None else state.word_boxes()
    scores = bx.pairwise_norm_sym_affinity(topics, words, state.box_cfg)
    return ad.row_softmax(scores)


def topic_word_dist_values(state: ModelState, k: int) -> Array:
    """Gradient-free mirror of :func:`topic_word_dist`."""
    topics, words = state.topic_boxes(k), state.word_boxes()
    scores = bx.np_pairwise_norm_sym(
        topics.lower_value, topics.upper_value, words.lower_value, words.upper_value, state.box_cfg
    )
    return _np_softmax(scores, axis=-1)


def encode(
    state: ModelState,
    tfidf_rows: Array,
    noise: Array,
    thetas: Sequence[ad.Node],
) -> EncodeResult:
    """Map TF-IDF rows to per-level topic proportions.

    ``noise`` is the externally drawn standard-normal sample for the
    reparameterized latent; pass zeros to get the posterior mean.  ``thetas``
    are the containment matrices for levels 0..depth-2, computed once per
    batch by the caller.
    """
    tfidf_rows = np.asarray(tfidf_rows, dtype=np.float64)
    if tfidf_rows.ndim != 2 or tfidf_rows.shape[1] != state.vocab_size:
        raise ValueError(f"expected (batch, {state.vocab_size}) TF-IDF rows")
    if len(thetas) != state.depth - 1:
        raise ValueError(f"expected {state.depth - 1} relation matrices, got {len(thetas)}")
    enc = state.encoder
    d = ad.constant(tfidf_rows)
    h = ad.relu(ad.affine(d, enc.w_hidden, enc.b_hidden))
    mu = ad.affine(h, enc.w_mu, enc.b_mu)
    sigma = ad.softplus(ad.affine(h, enc.w_sigma, enc.b_sigma))
    z = ad.gaussian_sample(mu, sigma, np.asarray(noise, dtype=np.float64))
    _check_finite(z.value, "latent sample")
    proportions = [ad.row_softmax(ad.affine(z, enc.w_pi, enc.b_pi))]
    for theta in thetas:
        proportions.append(ad.row_softmax(ad.matmul(proportions[-1], theta)))
    for k, pi in enumerate(proportions):
        _check_finite(pi.value, f"level-{k} proportions")
    return EncodeResult(hidden=h, mu=mu, sigma=sigma, z=z, proportions=proportions)


def cv_weights(phi: ad.Node) -> ad.Node:
    """Per-word coefficient of variation across topics: std / mean per column.

    Words spread evenly over topics score near 0, words concentrated in few
    topics score high; the decoder uses this to sharpen reconstructions.
    """
    mean = ad.reduce_mean(phi, axis=0)
    diff = phi - mean
    var = ad.reduce_mean(diff * diff, axis=0)
    std = ad.sqrt(var + _CV_VAR_FLOOR)
    return std / mean


def decode(
    proportions: Sequence[ad.Node],
    phis: Sequence[ad.Node],
    guard_eps: float = 1e-10,
) -> ad.Node:
    """Mix per-level reconstructions into one word distribution.

    Each level contributes (pi_k @ phi_k) * CV, normalized to unit 2-norm per
    document so no level dominates by scale; the summed vector is then
    renormalized to a probability row.  ``guard_eps`` keeps the CV factor
    positive when a phi matrix is degenerate.
    """
    if len(proportions) != len(phis) or not proportions:
        raise ValueError("need matching nonempty proportions and distributions")
    acc = None
    for pi, phi in zip(proportions, phis):
        cv = cv_weights(phi) + guard_eps
        u = ad.matmul(pi, phi) * cv
        norm = ad.sqrt(ad.reduce_sum(u * u, axis=1, keepdims=True))
        term = u / norm
        acc = term if acc is None else acc + term
    total = ad.reduce_sum(acc, axis=1, keepdims=True)
    return acc / total


def top_keywords(phi_values: Array, topic: int, n: int) -> list[int]:
    """Indices of the n largest entries of one topic row, ties to lower index."""
    row = phi_values[topic]
    if n > len(row):
        raise ValueError(f"asked for {n} keywords from a {len(row)}-word vocabulary")
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.argsort(-row, kind="stable")[:n].tolist()


def level_keyword_lists(state: ModelState, top_n: int) -> list[list[list[int]]]:
    """Top-``top_n`` keyword indices for every topic of every level."""
    out = []
    for k in range(state.depth):
        phi = topic_word_dist_values(state, k)
        out.append([top_keywords(phi, i, top_n) for i in range(phi.shape[0])])
    return out


# ---------------------------------------------------------------------------
# generative sampling


def generative_proportions(state: ModelState, z: Array) -> list[Array]:
    """Per-level proportions for a draw of the latent: softmax of z at the
    leaves, then propagation through the containment matrices."""
    pi = _np_softmax(np.asarray(z, dtype=np.float64))
    out = [pi]
    for k in range(state.depth - 1):
        theta = hier_relations_values(state, k)
        out.append(_np_softmax(out[-1] @ theta))
    return out


def sample_words(
    proportions: Sequence[Array],
    phis: Sequence[Array],
    length: int,
    rng: np.random.Generator,
) -> list[int]:
    """Draw ``length`` words: level uniform, topic from pi_k, word from phi row."""
    if len(proportions) != len(phis) or not proportions:
        raise ValueError("need matching nonempty proportions and distributions")
    n_levels = len(proportions)
    cum_pi = [np.cumsum(p) for p in proportions]
    cum_phi = [np.cumsum(phi, axis=1) for phi in phis]
    levels = rng.integers(0, n_levels, size=length)
    u_topic = rng.random(length)
    u_word = rng.random(length)
    words = np.empty(length, dtype=np.int64)
    for k in range(n_levels):
        at_k = np.flatnonzero(levels == k)
        if at_k.size == 0:
            continue
        topics = np.searchsorted(cum_pi[k], u_topic[at_k], side="right")
        topics = np.minimum(topics, len(cum_pi[k]) - 1)
        # block the word lookup so the gathered cumulative rows stay small
        for start in range(0, at_k.size, 2048):
            sel = at_k[start : start + 2048]
            rows = cum_phi[k][topics[start : start + 2048]]
            w = (u_word[sel, None] >= rows).sum(axis=1)
            words[sel] = np.minimum(w, rows.shape[1] - 1)
    return words.tolist()


def sample_document(state: ModelState, length: int, seed: int) -> list[int]:
    """Sample one synthetic document of ``length`` word indices."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(state.levels[0].size)
    proportions = generative_proportions(state, z)
    phis = [topic_word_dist_values(state, k) for k in range(state.depth)]
    return sample_words(proportions, phis, length, rng)


# ---------------------------------------------------------------------------
# serialization


def state_to_dict(state: ModelState, as_lists: bool = True, **extra) -> dict:
    """Checkpoint payload: config, parameters, links, plus caller extras.

    ``as_lists=False`` keeps array copies instead of nested lists; faster,
    for in-memory snapshots rather than JSON.
    """

    def dump(arr: Array):
        return arr.tolist() if as_lists else arr.copy()

    enc = state.encoder
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "box_config": {
            "dim": state.box_cfg.dim,
            "vol_temp": state.box_cfg.vol_temp,
            "int_temp": state.box_cfg.int_temp,
            "log_eps": state.box_cfg.log_eps,
        },
        "word_boxes": {
            "params_min": dump(state.word_level.params_min.value),
            "params_size": dump(state.word_level.params_size.value),
        },
        "levels": [
            {
                "params_min": dump(lv.params_min.value),
                "params_size": dump(lv.params_size.value),
            }
            for lv in state.levels
        ],
        "parents": [p.tolist() for p in state.parents],
        "memberships": [m.tolist() for m in state.memberships],
        "encoder": {
            "w_hidden": dump(enc.w_hidden.value),
            "b_hidden": dump(enc.b_hidden.value),
            "w_mu": dump(enc.w_mu.value),
            "b_mu": dump(enc.b_mu.value),
            "w_sigma": dump(enc.w_sigma.value),
            "b_sigma": dump(enc.b_sigma.value),
            "w_pi": dump(enc.w_pi.value),
            "b_pi": dump(enc.b_pi.value),
        },
    }
    payload.update(extra)
    return payload


def state_from_dict(payload: dict) -> ModelState:
    if payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unknown checkpoint schema: {payload.get('schema')!r}")
    cfg = bx.BoxAlgebraConfig(**payload["box_config"])
    word_level = LevelBoxes(
        ad.parameter(np.asarray(payload["word_boxes"]["params_min"])),
        ad.parameter(np.asarray(payload["word_boxes"]["params_size"])),
    )
    levels = [
        LevelBoxes(
            ad.parameter(np.asarray(lv["params_min"])),
            ad.parameter(np.asarray(lv["params_size"])),
        )
        for lv in payload["levels"]
    ]
    enc_d = payload["encoder"]
    encoder = EncoderParams(
        **{name: ad.parameter(np.asarray(enc_d[name])) for name in enc_d}
    )
    parents = [np.asarray(p, dtype=np.int64) for p in payload["parents"]]
    memberships = [np.asarray(m, dtype=np.int64) for m in payload.get("memberships", [])]
    return ModelState(cfg, word_level, levels, encoder, parents, memberships)


def taxonomy_dict(
    state: ModelState,
    words: Sequence[str],
    config: dict | None = None,
    vocab_hash: str = "",
    top_n: int = 15,
) -> dict:
    """Taxonomy export: per level, topics with parent link and keywords."""
    levels_out = []
    for k in range(state.depth):
        phi = topic_word_dist_values(state, k)
        level = []
        for i in range(phi.shape[0]):
            kw = top_keywords(phi, i, min(top_n, phi.shape[1]))
            parent = int(state.parents[k][i]) if k < state.depth - 1 else None
            level.append(
                {
                    "id": i,
                    "parent": parent,
                    "keywords": [
                        {"word": words[j], "weight": float(phi[i, j])} for j in kw
                    ],
                }
            )
        levels_out.append(level)
    return {
        "levels": levels_out,
        "config": config or {},
        "vocab_hash": vocab_hash,
    }
