"""Intrinsic taxonomy quality metrics.

All scores reduce to document-level co-occurrence statistics over a
reference split (the training documents, so evaluation is self-contained):

* coherence:      mean pairwise NPMI among each topic's top keywords,
  averaged over top-5/10/15 cutoffs;
* uniqueness:     for each keyword of each topic, the reciprocal of how
  many topics list it, averaged the same way;
* cross-level coherence: mean NPMI between a parent's and a child's
  exclusive keywords (shared words are excluded), per link.

NPMI uses probabilities smoothed by a tiny epsilon inside the logs; a pair
that never co-occurs maps to exactly -1 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

Array = np.ndarray

NPMI_EPS = 1e-12
KEYWORD_CUTOFFS = (5, 10, 15)


@dataclass
class ReferenceStats:
    """Binary document-word presence for a reference document set."""

    presence: sp.csc_matrix
    doc_freq: Array
    n_docs: int

    @classmethod
    def from_counts(cls, counts: sp.spmatrix) -> "ReferenceStats":
        presence = (counts > 0).astype(np.float64).tocsc()
        doc_freq = np.asarray(presence.sum(axis=0)).ravel()
        return cls(presence=presence, doc_freq=doc_freq, n_docs=counts.shape[0])

    def pair_doc_freq(self, words: Array) -> Array:
        """Co-document counts for every pair of the given words."""
        cols = self.presence[:, words]
        return np.asarray((cols.T @ cols).todense())


def _npmi_from_probs(p_i: Array, p_j: Array, p_ij: Array) -> Array:
    """Vectorized NPMI with the never-co-occur and certain-pair conventions."""
    pmi = np.log(p_ij + NPMI_EPS) - np.log(p_i + NPMI_EPS) - np.log(p_j + NPMI_EPS)
    denom = -np.log(p_ij + NPMI_EPS)
    out = np.where(denom > 0, pmi / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(p_ij <= 0, -1.0, out)


def npmi_pair(w_i: int, w_j: int, ref: ReferenceStats) -> float:
    """NPMI of one word pair under document-level co-occurrence."""
    df_i, df_j = ref.doc_freq[w_i], ref.doc_freq[w_j]
    if df_i == 0 or df_j == 0:
        raise ValueError("word absent from the reference corpus")
    if w_i == w_j:
        co = df_i
    else:
        col_i = ref.presence[:, [w_i]].toarray().ravel()
        col_j = ref.presence[:, [w_j]].toarray().ravel()
        co = float(col_i @ col_j)
    p_i, p_j, p_ij = df_i / ref.n_docs, df_j / ref.n_docs, co / ref.n_docs
    return float(
        _npmi_from_probs(np.asarray(p_i), np.asarray(p_j), np.asarray(p_ij))
    )


def _mean_pairwise_npmi(words: Sequence[int], ref: ReferenceStats) -> float:
    """Mean NPMI over unordered distinct pairs of the given words."""
    words = np.asarray(words, dtype=np.int64)
    n = len(words)
    if n < 2:
        return 0.0
    if (ref.doc_freq[words] == 0).any():
        raise ValueError("word absent from the reference corpus")
    co = ref.pair_doc_freq(words)
    p = ref.doc_freq[words] / ref.n_docs
    p_ij = co / ref.n_docs
    scores = _npmi_from_probs(p[:, None], p[None, :], p_ij)
    iu = np.triu_indices(n, k=1)
    return float(scores[iu].mean())


def coherence_C(topic_keywords: Sequence[Sequence[int]], ref: ReferenceStats) -> float:
    """Topic coherence: mean pairwise NPMI of top-N keywords, N in 5/10/15."""
    if not topic_keywords:
        raise ValueError("no topics given")
    scores = []
    for kw in topic_keywords:
        if len(kw) < max(KEYWORD_CUTOFFS):
            raise ValueError(f"need >= {max(KEYWORD_CUTOFFS)} keywords per topic")
        for n in KEYWORD_CUTOFFS:
            scores.append(_mean_pairwise_npmi(kw[:n], ref))
    return float(np.mean(scores))


def uniqueness_D(topic_keywords: Sequence[Sequence[int]]) -> float:
    """Keyword uniqueness: reciprocal of each keyword's topic count.

    1.0 when all topics' lists are disjoint, 1/T when all T topics agree.
    """
    if not topic_keywords:
        raise ValueError("no topics given")
    per_cutoff = []
    for n in KEYWORD_CUTOFFS:
        tops = [list(kw[:n]) for kw in topic_keywords]
        counts: dict[int, int] = {}
        for t in tops:
            for w in set(t):
                counts[w] = counts.get(w, 0) + 1
        topic_scores = [float(np.mean([1.0 / counts[w] for w in t])) for t in tops]
        per_cutoff.append(np.mean(topic_scores))
    return float(np.mean(per_cutoff))


def _cross_npmi_mean(only_p: Sequence[int], only_c: Sequence[int], ref: ReferenceStats) -> float:
    """Vectorized mean NPMI over the cross product of two word lists."""
    a = np.asarray(only_p, dtype=np.int64)
    b = np.asarray(only_c, dtype=np.int64)
    cols_a = ref.presence[:, a]
    cols_b = ref.presence[:, b]
    co = np.asarray((cols_a.T @ cols_b).todense())
    p_a = ref.doc_freq[a] / ref.n_docs
    p_b = ref.doc_freq[b] / ref.n_docs
    scores = _npmi_from_probs(p_a[:, None], p_b[None, :], co / ref.n_docs)
    return float(scores.mean())


def clnpmi_HC(
    parent_keywords: Sequence[int],
    child_keywords: Sequence[int],
    ref: ReferenceStats,
) -> float:
    """Cross-level NPMI between exclusive parent and child keywords.

    At each cutoff, words on both lists are removed from both sides; the
    score is the mean NPMI over remaining (parent word, child word) pairs.
    If either side empties out, the cutoff contributes 0.
    """
    per_cutoff = []
    for n in KEYWORD_CUTOFFS:
        wp = list(parent_keywords[:n])
        wc = list(child_keywords[:n])
        only_p = [w for w in wp if w not in set(wc)]
        only_c = [w for w in wc if w not in set(wp)]
        if not only_p or not only_c:
            per_cutoff.append(0.0)
            continue
        per_cutoff.append(_cross_npmi_mean(only_p, only_c, ref))
    return float(np.mean(per_cutoff))


@dataclass
class MetricReport:
    """Per-level and overall scores plus the keyword lists they used."""

    overall: dict
    per_level: list[dict]
    keywords: list[list[list[int]]]
    reference_id: str = ""

    def to_json_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_level": self.per_level,
            "keywords": self.keywords,
            "reference": self.reference_id,
        }

    def to_text(self) -> str:
        headers = ("level", "topics", "C", "D", "CD", "HC")
        rows = []
        for k, lv in enumerate(self.per_level):
            rows.append(
                (
                    str(k),
                    str(len(self.keywords[k])),
                    f"{lv['C']:.4f}",
                    f"{lv['D']:.4f}",
                    f"{lv['CD']:.4f}",
                    "-" if lv["HC"] is None else f"{lv['HC']:.4f}",
                )
            )
        o = self.overall
        rows.append(
            (
                "all",
                str(sum(len(k) for k in self.keywords)),
                f"{o['C']:.4f}",
                f"{o['D']:.4f}",
                f"{o['CD']:.4f}",
                "-" if o["HC"] is None else f"{o['HC']:.4f}",
            )
        )
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        return "\n".join(lines) + "\n"


def report(
    level_keywords: list[list[list[int]]],
    parents: list[Array],
    ref: ReferenceStats,
    reference_id: str = "",
) -> MetricReport:
    """Score a taxonomy given per-level keyword lists and parent links.

    C, D, and their product are reported per level and pooled over all
    topics; HC covers the links between a level and the one above it (so the
    top level has none) and overall averages every link in the taxonomy.
    """
    if len(level_keywords) == 0:
        raise ValueError("no levels to score")
    per_level = []
    link_scores_all = []
    for k, topics in enumerate(level_keywords):
        c = coherence_C(topics, ref)
        d = uniqueness_D(topics)
        hc = None
        if k < len(level_keywords) - 1:
            links = [
                clnpmi_HC(level_keywords[k + 1][parents[k][i]], topics[i], ref)
                for i in range(len(topics))
            ]
            link_scores_all.extend(links)
            hc = float(np.mean(links))
        per_level.append({"C": c, "D": d, "CD": c * d, "HC": hc})
    pooled = [kw for topics in level_keywords for kw in topics]
    c_all = coherence_C(pooled, ref)
    d_all = uniqueness_D(pooled)
    overall = {
        "C": c_all,
        "D": d_all,
        "CD": c_all * d_all,
        "HC": float(np.mean(link_scores_all)) if link_scores_all else None,
    }
    return MetricReport(
        overall=overall,
        per_level=per_level,
        keywords=[[list(kw) for kw in topics] for topics in level_keywords],
        reference_id=reference_id,
    )
