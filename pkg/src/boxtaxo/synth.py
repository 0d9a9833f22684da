"""Synthetic corpora with a known two-level topic structure.

Words are partitioned into leaf clusters, leaf clusters into groups.  Every
document belongs to one leaf cluster: most tokens are drawn uniformly from
that cluster's words, and a noise fraction is split between the cluster's
group and the whole vocabulary.  The group-level noise makes sibling leaves
statistically closer to each other than to leaves of other groups; the
small vocabulary-wide background gives every word pair a nonzero
co-occurrence rate, as in natural corpora.  Both components matter for
recovery: the sibling signal orders same-group words above cross-group
words, and the background keeps cross-group pairs inside the co-occurrence
support so that contrastive training can push them below sibling pairs
instead of leaving them unconstrained.

Word strings encode their planted position (``g<group>l<leaf>w<index>``) so
tests can audit recovered topics by name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlantedCorpus:
    docs: list[str]
    words: list[str]
    leaf_of_word: dict[str, int]
    group_of_leaf: np.ndarray
    doc_leaf: np.ndarray
    n_groups: int
    leaves_per_group: int
    words_per_leaf: int

    @property
    def n_leaves(self) -> int:
        return self.n_groups * self.leaves_per_group

    def group_of_word(self, word: str) -> int:
        return int(self.group_of_leaf[self.leaf_of_word[word]])


def make_planted_corpus(
    n_groups: int = 2,
    leaves_per_group: int = 3,
    words_per_leaf: int = 50,
    n_docs: int = 2000,
    doc_length: int = 60,
    noise: float = 0.1,
    background: float = 0.3,
    seed: int = 0,
) -> PlantedCorpus:
    """Generate documents over a planted leaf/group word partition.

    ``noise`` is the fraction of tokens not drawn from the document's own
    leaf; of those, ``background`` are drawn uniformly from the whole
    vocabulary and the rest from the document's group.
    """
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must be in [0, 1]")
    if not 0.0 <= background <= 1.0:
        raise ValueError("background must be in [0, 1]")
    n_leaves = n_groups * leaves_per_group
    rng = np.random.default_rng(seed)

    words: list[str] = []
    leaf_words: list[list[str]] = []
    leaf_of_word: dict[str, int] = {}
    group_of_leaf = np.empty(n_leaves, dtype=np.int64)
    for leaf in range(n_leaves):
        group = leaf // leaves_per_group
        group_of_leaf[leaf] = group
        ws = [f"g{group}l{leaf}w{i:03d}" for i in range(words_per_leaf)]
        leaf_words.append(ws)
        words.extend(ws)
        for w in ws:
            leaf_of_word[w] = leaf
    group_words = [
        [w for leaf in range(n_leaves) if group_of_leaf[leaf] == g for w in leaf_words[leaf]]
        for g in range(n_groups)
    ]

    doc_leaf = rng.integers(0, n_leaves, size=n_docs)
    docs = []
    for leaf in doc_leaf:
        own = leaf_words[leaf]
        pool = group_words[group_of_leaf[leaf]]
        r = rng.random(doc_length)
        own_draw = rng.integers(0, len(own), size=doc_length)
        pool_draw = rng.integers(0, len(pool), size=doc_length)
        vocab_draw = rng.integers(0, len(words), size=doc_length)
        tokens = []
        for t in range(doc_length):
            if r[t] >= noise:
                tokens.append(own[own_draw[t]])
            elif r[t] >= noise * background:
                tokens.append(pool[pool_draw[t]])
            else:
                tokens.append(words[vocab_draw[t]])
        docs.append(" ".join(tokens))
    return PlantedCorpus(
        docs=docs,
        words=words,
        leaf_of_word=leaf_of_word,
        group_of_leaf=group_of_leaf,
        doc_leaf=doc_leaf,
        n_groups=n_groups,
        leaves_per_group=leaves_per_group,
        words_per_leaf=words_per_leaf,
    )
