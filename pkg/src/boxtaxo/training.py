"""Losses and the training loop.

One epoch is: (re)build the upper topic levels by clustering while still in
the warmup window, then sweep shuffled training batches.  Each batch builds
one graph sharing a single set of box nodes: containment matrices and
topic-word distributions feed the encoder/decoder reconstruction loss, a
sampled batch of co-occurring word pairs aligns word-box containment with
corpus conditionals, and parent links incur an overlap + volume-margin
penalty.  Gradients are clipped by global norm and applied with Adam.

All randomness derives from per-epoch seed streams, so any epoch can be
reproduced in isolation and two runs with one seed are identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import boxes as bx
from . import cluster as cl
from . import corpus as cp
from . import model as md

Array = np.ndarray

_MAX_GRAD_NORM = 5.0

# seed-stream tags: init, shuffle, noise, pair sampling
_STREAM_INIT, _STREAM_SHUFFLE, _STREAM_NOISE, _STREAM_PAIRS = 0, 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 50
    depth: int = 3
    leaf_topics: int = 50
    learning_rate: float = 5e-3
    hidden: int = 256
    margin: float = 10.0
    co_weight: float = 3.0
    ht_weight_max: float = 0.005
    cluster_stop_epoch: int = 100
    epochs: int = 300
    batch_size: int = 200
    co_batch_size: int = 1024
    spectral_init: bool = True
    seed: int = 0

    def __post_init__(self):
        positive = {
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "leaf_topics": self.leaf_topics,
            "learning_rate": self.learning_rate,
            "hidden": self.hidden,
            "batch_size": self.batch_size,
            "co_batch_size": self.co_batch_size,
        }
        for name, v in positive.items():
            if v <= 0:
                raise ValueError(f"{name} must be positive")
        nonneg = {
            "margin": self.margin,
            "co_weight": self.co_weight,
            "ht_weight_max": self.ht_weight_max,
            "cluster_stop_epoch": self.cluster_stop_epoch,
            "epochs": self.epochs,
            "seed": self.seed,
        }
        for name, v in nonneg.items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative")


def _stream(seed: int, tag: int, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, epoch]))


def beta_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup of the taxonomy-loss weight, reaching the maximum at
    the clustering stop epoch (immediately if clustering is disabled)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if cfg.cluster_stop_epoch == 0:
        return cfg.ht_weight_max
    return cfg.ht_weight_max * min(1.0, epoch / cfg.cluster_stop_epoch)


# ---------------------------------------------------------------------------
# losses


def elbo_terms(
    counts: Array, d_hat: ad.Node, mu: ad.Node, sigma: ad.Node
) -> tuple[ad.Node, ad.Node]:
    """Per-document reconstruction log likelihood and KL to a unit Gaussian."""
    counts = np.asarray(counts, dtype=np.float64)
    recon = ad.reduce_sum(ad.constant(counts) * ad.log(d_hat), axis=1)
    kl = 0.5 * ad.reduce_sum(
        mu * mu + sigma * sigma - 1.0 - 2.0 * ad.log(sigma), axis=1
    )
    return recon, kl


def elbo_loss(counts: Array, d_hat: ad.Node, mu: ad.Node, sigma: ad.Node) -> ad.Node:
    """Negative ELBO, meaned over the batch; minimized by the trainer."""
    recon, kl = elbo_terms(counts, d_hat, mu, sigma)
    return ad.reduce_mean(kl - recon)


def co_loss(
    word_boxes: bx.BoxEmbed,
    pair_i: Array,
    pair_j: Array,
    pair_prob: Array,
    cfg: bx.BoxAlgebraConfig,
) -> ad.Node:
    """Cross-entropy between corpus conditionals and box containment.

    Over the sampled batch, the target distribution is P(i | j) normalized
    to sum 1, and the box distribution is a softmax of containment scores
    R(word i | word j); the loss is minimal when they agree.
    """
    if len(pair_i) == 0:
        raise ValueError("empty co-occurrence batch")
    wi = bx.gather_boxes(word_boxes, pair_i)
    wj = bx.gather_boxes(word_boxes, pair_j)
    logits = bx.asym_containment(wi, wj, cfg)
    log_q = logits - ad.logsumexp(logits, axis=-1)
    p = np.asarray(pair_prob, dtype=np.float64)
    p = p / p.sum()
    return -ad.reduce_sum(ad.constant(p) * log_q)


def ht_loss(
    level_boxes: list[bx.BoxEmbed],
    parents: list[Array],
    margin: float,
    cfg: bx.BoxAlgebraConfig,
) -> ad.Node:
    """Parent-child taxonomy loss over all links.

    Each link pays for missing overlap (negative symmetric affinity) plus a
    hinge demanding the parent's log volume exceed the child's by the
    margin.
    """
    if len(level_boxes) != len(parents) + 1:
        raise ValueError("need one parent array per adjacent level pair")
    total: ad.Node | None = None
    for k, par in enumerate(parents):
        child = level_boxes[k]
        parent = bx.gather_boxes(level_boxes[k + 1], par)
        overlap = bx.sym_affinity(child, parent, cfg)
        gap = margin - bx.gumbel_log_volume(parent, cfg) + bx.gumbel_log_volume(child, cfg)
        term = ad.reduce_sum(ad.relu(gap) - overlap)
        total = term if total is None else total + term
    return total if total is not None else ad.constant(0.0)


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class TrainData:
    """Corpus slices the trainer actually touches."""

    tfidf: sp.csr_matrix
    counts: sp.csr_matrix
    train_idx: Array
    valid_idx: Array
    pair_i: Array
    pair_j: Array
    pair_prob: Array

    @classmethod
    def from_corpus(cls, corpus: cp.Corpus) -> "TrainData":
        coo = corpus.cooccur.tocoo()
        marg = corpus.cooccur_marginal
        keep = marg[coo.col] > 0
        pair_i = coo.row[keep].astype(np.int64)
        pair_j = coo.col[keep].astype(np.int64)
        pair_prob = coo.data[keep] / marg[coo.col[keep]]
        return cls(
            tfidf=corpus.tfidf.tocsr(),
            counts=corpus.counts.tocsr(),
            train_idx=corpus.split_indices(cp.TRAIN),
            valid_idx=corpus.split_indices(cp.VALID),
            pair_i=pair_i,
            pair_j=pair_j,
            pair_prob=pair_prob,
        )


def apply_recur_clus(
    state: md.ModelState,
    depth: int,
    cluster_cfg: cl.ClusterConfig,
    adam: ad.AdamState | None = None,
) -> cl.RecurClusResult:
    """Rebuild upper levels from the current leaves and words, in place.

    Replaced upper-level parameters get fresh optimizer slots; re-deriving
    parameters from the merged coordinates round-trips through the corner
    transform.
    """
    result = cl.recur_clus(
        state.word_boxes(),
        state.topic_boxes(0),
        depth=depth,
        cluster_cfg=cluster_cfg,
        box_cfg=state.box_cfg,
    )
    old_params = [
        p for lv in state.levels[1:] for p in (lv.params_min, lv.params_size)
    ]
    new_levels = [state.levels[0]]
    for lo, hi in result.upper_levels:
        pmin, psize = bx.params_from_coords(lo, hi)
        new_levels.append(md.LevelBoxes(ad.parameter(pmin), ad.parameter(psize)))
    state.levels = new_levels
    state.parents = result.parents
    state.memberships = result.memberships
    state.validate()
    if adam is not None and old_params:
        ad.drop_adam_slots(adam, old_params)
    return result


def refresh_parents(state: md.ModelState) -> None:
    """Recompute parent links from raw-box containment at every level."""
    for k in range(state.depth - 1):
        theta = md.hier_relations_values(state, k)
        state.parents[k] = cl.assign_parents(theta)


def _sample_pairs(
    data: TrainData, size: int, rng: np.random.Generator
) -> tuple[Array, Array, Array]:
    idx = rng.integers(0, len(data.pair_i), size=size)
    return data.pair_i[idx], data.pair_j[idx], data.pair_prob[idx]


# ---------------------------------------------------------------------------
# epochs


def train_epoch(
    state: md.ModelState,
    data: TrainData,
    epoch: int,
    cfg: TrainConfig,
    cluster_cfg: cl.ClusterConfig,
    adam: ad.AdamState,
    target_depth: int | None = None,
) -> dict:
    """One pass over the training split; mutates state and optimizer.

    While ``epoch < cluster_stop_epoch`` the upper levels are rebuilt by
    clustering first; afterwards they move only by gradient steps.  Raises
    FloatingPointError on a non-finite loss.
    """
    depth_goal = target_depth or cfg.depth
    if depth_goal >= 2 and epoch < cfg.cluster_stop_epoch:
        apply_recur_clus(state, depth_goal, cluster_cfg, adam)
    beta = beta_schedule(epoch, cfg)
    order = _stream(cfg.seed, _STREAM_SHUFFLE, epoch).permutation(data.train_idx)
    rng_noise = _stream(cfg.seed, _STREAM_NOISE, epoch)
    rng_pairs = _stream(cfg.seed, _STREAM_PAIRS, epoch)
    params = state.parameters()
    totals = {"loss": 0.0, "elbo": 0.0, "recon": 0.0, "kl": 0.0, "co": 0.0, "ht": 0.0}
    grad_norms = []
    n_batches = 0
    leaf_size = state.levels[0].size
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        tfidf_rows = data.tfidf[batch].toarray()
        counts_rows = data.counts[batch].toarray()

        word_box = state.word_boxes()
        topic_box = [state.topic_boxes(k) for k in range(state.depth)]
        thetas = [
            md.hier_relations(state, k, child_boxes=topic_box[k], parent_boxes=topic_box[k + 1])
            for k in range(state.depth - 1)
        ]
        phis = [
            md.topic_word_dist(state, k, topic_boxes=topic_box[k], word_boxes=word_box)
            for k in range(state.depth)
        ]
        noise = rng_noise.standard_normal((len(batch), leaf_size))
        enc = md.encode(state, tfidf_rows, noise, thetas)
        d_hat = md.decode(enc.proportions, phis, guard_eps=state.box_cfg.log_eps)
        recon, kl = elbo_terms(counts_rows, d_hat, enc.mu, enc.sigma)
        elbo = ad.reduce_mean(kl - recon)

        if len(data.pair_i) > 0:
            pi_idx, pj_idx, pp = _sample_pairs(data, cfg.co_batch_size, rng_pairs)
            co = co_loss(word_box, pi_idx, pj_idx, pp, state.box_cfg)
        else:
            co = ad.constant(0.0)
        ht = ht_loss(topic_box, state.parents, cfg.margin, state.box_cfg)
        loss = elbo + cfg.co_weight * co + beta * ht

        if not np.isfinite(loss.value):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {n_batches}")
        ad.backward(loss)
        grads = [p.grad for p in params]
        grad_norms.append(ad.clip_global_norm(grads, _MAX_GRAD_NORM))
        ad.adam_step(params, grads, adam)
        ad.zero_grad(params)

        totals["loss"] += float(loss.value)
        totals["elbo"] += float(elbo.value)
        totals["recon"] += float(np.mean(recon.value))
        totals["kl"] += float(np.mean(kl.value))
        totals["co"] += float(co.value)
        totals["ht"] += float(ht.value)
        n_batches += 1
    refresh_parents(state)
    stats = {k: v / max(n_batches, 1) for k, v in totals.items()}
    stats.update(
        epoch=epoch,
        beta=beta,
        n_batches=n_batches,
        grad_norm=float(np.mean(grad_norms)) if grad_norms else 0.0,
        level_sizes=state.level_sizes,
        cluster_sizes=[np.bincount(m).tolist() for m in state.memberships],
    )
    return stats


def validation_elbo(state: md.ModelState, data: TrainData, cfg: TrainConfig) -> float:
    """Mean negative ELBO over the validation split at zero noise."""
    if len(data.valid_idx) == 0:
        return float("nan")
    thetas = [md.hier_relations(state, k) for k in range(state.depth - 1)]
    phis = [md.topic_word_dist(state, k) for k in range(state.depth)]
    total, n = 0.0, 0
    for start in range(0, len(data.valid_idx), cfg.batch_size):
        batch = data.valid_idx[start : start + cfg.batch_size]
        tfidf_rows = data.tfidf[batch].toarray()
        counts_rows = data.counts[batch].toarray()
        noise = np.zeros((len(batch), state.levels[0].size))
        enc = md.encode(state, tfidf_rows, noise, thetas)
        d_hat = md.decode(enc.proportions, phis, guard_eps=state.box_cfg.log_eps)
        recon, kl = elbo_terms(counts_rows, d_hat, enc.mu, enc.sigma)
        total += float(np.sum(kl.value - recon.value))
        n += len(batch)
    return total / n


@dataclass
class FitResult:
    state: md.ModelState
    taxonomy: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_elbo: float = float("inf")
    best_state: dict | None = None
    aborted: bool = False
    abort_reason: str | None = None


def fit(
    corpus: cp.Corpus,
    cfg: TrainConfig,
    cluster_cfg: cl.ClusterConfig | None = None,
    box_cfg: bx.BoxAlgebraConfig | None = None,
    log_fn: Callable[[dict], None] | None = None,
    resume_state: md.ModelState | None = None,
    start_epoch: int = 0,
) -> FitResult:
    """Train end to end and export the learned taxonomy.

    The state is fully structured before the first epoch by one clustering
    pass, so a zero-epoch run still yields a taxonomy.  The best
    validation-ELBO snapshot is kept alongside the final state; on a
    non-finite loss the last healthy epoch snapshot is restored and the
    result is flagged as aborted.
    """
    cluster_cfg = cluster_cfg or cl.ClusterConfig()
    box_cfg = box_cfg or bx.BoxAlgebraConfig(dim=cfg.embed_dim)
    if box_cfg.dim != cfg.embed_dim:
        raise ValueError("box config dimension must match embed_dim")
    data = TrainData.from_corpus(corpus)
    if resume_state is not None:
        state = resume_state
    else:
        rng = _stream(cfg.seed, _STREAM_INIT)
        positions = None
        if cfg.spectral_init:
            positions = cp.spectral_positions(
                corpus.cooccur, corpus.cooccur_marginal, cfg.embed_dim, rng
            )
        state = md.init_state(
            len(corpus.vocab), cfg.leaf_topics, cfg.hidden, box_cfg, rng,
            word_positions=positions,
        )
    if state.depth == 1 and cfg.depth >= 2:
        apply_recur_clus(state, cfg.depth, cluster_cfg)
    adam = ad.AdamState(cfg.learning_rate)
    result = FitResult(state=state, taxonomy={})
    last_good = md.state_to_dict(state, as_lists=False)
    for epoch in range(start_epoch, cfg.epochs):
        try:
            stats = train_epoch(state, data, epoch, cfg, cluster_cfg, adam, cfg.depth)
        except FloatingPointError as err:
            result.aborted = True
            result.abort_reason = str(err)
            state = md.state_from_dict(last_good)
            result.state = state
            break
        stats["val_elbo"] = validation_elbo(state, data, cfg)
        result.history.append(stats)
        if log_fn is not None:
            log_fn(stats)
        last_good = md.state_to_dict(state, as_lists=False)
        if stats["val_elbo"] < result.best_val_elbo:
            result.best_val_elbo = stats["val_elbo"]
            result.best_epoch = epoch
            result.best_state = last_good
    result.taxonomy = md.taxonomy_dict(
        result.state,
        corpus.vocab.words,
        config=config_dict(cfg, cluster_cfg, box_cfg),
        vocab_hash=corpus.vocab.content_hash,
    )
    return result


def config_dict(
    cfg: TrainConfig, cluster_cfg: cl.ClusterConfig, box_cfg: bx.BoxAlgebraConfig
) -> dict:
    from dataclasses import asdict

    return {
        "train": asdict(cfg),
        "cluster": asdict(cluster_cfg),
        "boxes": asdict(box_cfg),
    }
