"""Corpus ingestion: tokenization, vocabulary, matrices, and splits.

The pipeline is: tokenize raw documents, build a frequency-filtered
vocabulary, drop documents left without any in-vocabulary token, then derive
the count matrix, TF-IDF matrix, sliding-window co-occurrence counts, and a
deterministic train/valid/test split.  A :class:`Corpus` is immutable once
built and can be saved to and reloaded from a directory of plain-text
artifacts without losing a bit.

Co-occurrence is restricted to training documents so the statistics that
feed training never see held-out text; the evaluation reference uses the
same split.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "valid", "test")
DEFAULT_SPLIT_RATIOS = (0.48, 0.12, 0.40)

_TOKEN_RE = re.compile(r"[0-9a-z]+")

_META_SCHEMA = "boxtaxo-corpus-1"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop pure-digit tokens."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if not t.isdigit()]


@dataclass(frozen=True)
class Vocab:
    """Contiguous word indexing plus per-word document frequency."""

    words: list[str]
    doc_freq: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {w: i for i, w in enumerate(self.words)})
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")
        if len(self.doc_freq) != len(self.words):
            raise ValueError("doc_freq length does not match vocabulary")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    @property
    def content_hash(self) -> str:
        """sha256 over the ordered word list; guards checkpoint/corpus pairing."""
        h = hashlib.sha256()
        for w in self.words:
            h.update(w.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def build_vocab(
    token_docs: Sequence[Sequence[str]],
    stopwords: frozenset[str] | set[str] = frozenset(),
    min_count: int = 5,
    max_vocab: int = 15000,
) -> Vocab:
    """Frequency-filtered vocabulary over tokenized documents.

    Keeps words with total corpus frequency >= ``min_count`` that are not
    stopwords, truncated to ``max_vocab`` by descending frequency with
    lexicographic tie-breaking, so indices are deterministic.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if max_vocab < 1:
        raise ValueError("max_vocab must be >= 1")
    freq: Counter[str] = Counter()
    for doc in token_docs:
        freq.update(doc)
    kept = [
        (w, c) for w, c in freq.items() if c >= min_count and w not in stopwords
    ]
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    words = [w for w, _ in kept[:max_vocab]]
    if not words:
        raise ValueError("empty vocabulary after filtering")
    word_set = set(words)
    df = Counter()
    for doc in token_docs:
        df.update(set(doc) & word_set)
    index = {w: i for i, w in enumerate(words)}
    doc_freq = np.zeros(len(words), dtype=np.int64)
    for w, c in df.items():
        doc_freq[index[w]] = c
    return Vocab(words=words, doc_freq=doc_freq)


def docs_to_ids(token_docs: Sequence[Sequence[str]], vocab: Vocab) -> list[list[int]]:
    """Map tokens to vocabulary ids, dropping out-of-vocabulary tokens."""
    index = vocab.index
    return [[index[t] for t in doc if t in index] for doc in token_docs]


def counts_matrix(id_docs: Sequence[Sequence[int]], vocab_size: int) -> sp.csr_matrix:
    """Document-word count matrix (docs x vocab), float64 CSR."""
    indptr = [0]
    indices: list[int] = []
    data: list[int] = []
    for doc in id_docs:
        c = Counter(doc)
        for w in sorted(c):
            indices.append(w)
            data.append(c[w])
        indptr.append(len(indices))
    mat = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), indices, indptr),
        shape=(len(id_docs), vocab_size),
    )
    return mat


def tfidf(counts: sp.csr_matrix) -> sp.csr_matrix:
    """TF-IDF with tf = raw count and idf = ln((1+N)/(1+df)) + 1.

    N and the document frequencies are taken from the matrix passed in, so a
    word present in every row gets idf exactly 1.  Rows are not
    length-normalized; the decoder normalizes on its own.
    """
    if counts.nnz and counts.data.min() < 0:
        raise ValueError("counts must be nonnegative")
    n_docs = counts.shape[0]
    df = np.asarray((counts > 0).sum(axis=0)).ravel()
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    out = counts.multiply(idf[np.newaxis, :]).tocsr()
    out.sort_indices()
    return out


def cooccurrence(
    id_docs: Sequence[Sequence[int]],
    vocab_size: int,
    window: int = 10,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetric within-window co-occurrence counts and their row sums.

    Every ordered pair of distinct-word positions at distance <= ``window``
    adds 1 to X[i, j], so X is symmetric by construction and X[i, j] counts
    position pairs in both directions.  ``window = 0`` means the whole
    document.  Returns (X, X_j) with X_j = row sums.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    total = sp.csr_matrix((vocab_size, vocab_size), dtype=np.float64)
    chunk_rows: list[np.ndarray] = []
    chunk_cols: list[np.ndarray] = []
    chunk_pairs = 0

    def flush():
        nonlocal total, chunk_rows, chunk_cols, chunk_pairs
        if not chunk_rows:
            return
        rows = np.concatenate(chunk_rows)
        cols = np.concatenate(chunk_cols)
        ones = np.ones(len(rows), dtype=np.float64)
        block = sp.coo_matrix((ones, (rows, cols)), shape=(vocab_size, vocab_size))
        total = (total + block.tocsr())
        chunk_rows, chunk_cols, chunk_pairs = [], [], 0

    for doc in id_docs:
        t = np.asarray(doc, dtype=np.int64)
        n = len(t)
        if n < 2:
            continue
        max_delta = n - 1 if window == 0 else min(window, n - 1)
        for delta in range(1, max_delta + 1):
            a, b = t[:-delta], t[delta:]
            keep = a != b
            if not keep.any():
                continue
            a, b = a[keep], b[keep]
            chunk_rows.append(a)
            chunk_cols.append(b)
            chunk_rows.append(b)
            chunk_cols.append(a)
            chunk_pairs += 2 * len(a)
        if chunk_pairs >= 2_000_000:
            flush()
    flush()
    total.sum_duplicates()
    total.sort_indices()
    marginals = np.asarray(total.sum(axis=1)).ravel()
    return total, marginals


def spectral_positions(
    cooccur: sp.spmatrix,
    marginal: np.ndarray,
    dim: int,
    rng: np.random.Generator,
    shift: float = 2.0,
    span: float = 0.35,
    jitter: float = 0.01,
) -> np.ndarray:
    """Seed positions in (0, 1)^dim from the co-occurrence geometry.

    Rows of the shifted positive PMI matrix are factored with a truncated
    SVD; the leading left vectors scaled by their singular values (classical
    LSA coordinates) are centered and mapped affinely into a band of width
    ``2 * span`` around the cube center.  Words sharing contexts land close
    together and the strongest contrasts in the corpus claim the widest
    coordinate ranges.  Box training needs this: overlap gradients vanish
    between distant boxes, so the global arrangement has to come from the
    starting positions, and training then refines overlaps locally.

    The ``shift`` keeps pairs whose PMI is merely above ``-shift``: mild
    below-independence co-occurrence (such as words from related topics)
    still pulls together rather than being clipped away with the noise.
    Deterministic given the matrix, dim, and rng state; ``jitter`` breaks
    exact ties so no two boxes start identical.
    """
    n = cooccur.shape[0]
    if n == 0:
        return np.empty((0, dim))
    coo = sp.coo_matrix(cooccur)
    total = float(coo.sum())
    if total <= 0 or coo.nnz == 0:
        return np.clip(0.5 + rng.normal(0.0, jitter, size=(n, dim)), 0.02, 0.98)
    m = np.asarray(marginal, dtype=np.float64)
    vals = np.log(coo.data * total / (m[coo.row] * m[coo.col])) + shift
    keep = vals > 0
    sppmi = sp.csr_matrix(
        (vals[keep], (coo.row[keep], coo.col[keep])), shape=(n, n)
    )
    k = min(dim, n - 1)
    if n <= 2048:
        u, s, _ = np.linalg.svd(sppmi.toarray(), full_matrices=False)
        u, s = u[:, :k], s[:k]
    else:
        from scipy.sparse.linalg import svds

        u, s, _ = svds(sppmi, k=k, v0=np.full(n, 1.0 / np.sqrt(n)))
        order = np.argsort(-s)
        u, s = u[:, order], s[order]
    x = u * s
    # canonical signs: SVD is unique only up to per-column sign flips
    lead = np.argmax(np.abs(x), axis=0)
    signs = np.sign(x[lead, np.arange(x.shape[1])])
    signs[signs == 0] = 1.0
    x = x * signs
    if x.shape[1] < dim:
        x = np.hstack([x, np.zeros((n, dim - x.shape[1]))])
    x = x - x.mean(axis=0)
    scale = np.abs(x).max()
    if scale > 0:
        x = x * (span / scale)
    pos = 0.5 + x + rng.normal(0.0, jitter, size=(n, dim))
    return np.clip(pos, 0.02, 0.98)


def split_labels(
    n_docs: int,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    seed: int = 0,
) -> np.ndarray:
    """Deterministic train/valid/test labels under a seeded shuffle.

    Sizes are floor(ratio * n) for train and valid with the remainder going
    to test.  Raises if any split would be empty.
    """
    if not math.isclose(sum(ratios), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError("split ratios must sum to 1")
    n_train = int(ratios[0] * n_docs)
    n_valid = int(ratios[1] * n_docs)
    n_test = n_docs - n_train - n_valid
    if min(n_train, n_valid, n_test) < 1:
        raise ValueError("a split would be empty; corpus too small for the ratios")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_docs)
    labels = np.empty(n_docs, dtype=np.int8)
    labels[perm[:n_train]] = TRAIN
    labels[perm[n_train : n_train + n_valid]] = VALID
    labels[perm[n_train + n_valid :]] = TEST
    return labels


@dataclass(frozen=True)
class Corpus:
    """Everything training and evaluation read; immutable once built."""

    vocab: Vocab
    id_docs: list[list[int]]
    counts: sp.csr_matrix
    tfidf: sp.csr_matrix
    cooccur: sp.csr_matrix
    cooccur_marginal: np.ndarray
    split: np.ndarray

    @property
    def n_docs(self) -> int:
        return len(self.id_docs)

    def split_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.split == label)

    def summary(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "vocab_size": len(self.vocab),
            "splits": {
                name: int((self.split == lab).sum())
                for name, lab in zip(SPLIT_NAMES, (TRAIN, VALID, TEST))
            },
            "cooccur_nnz": int(self.cooccur.nnz),
        }


def build_corpus(
    raw_docs: Iterable[str],
    stopwords: frozenset[str] | set[str] = frozenset(),
    min_count: int = 5,
    max_vocab: int = 15000,
    window: int = 10,
    ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    seed: int = 0,
) -> Corpus:
    """Full ingestion pipeline from raw text to a ready Corpus.

    Documents with no in-vocabulary tokens are dropped before splitting, so
    every retained document has at least one token.  Co-occurrence counts
    come from training documents only.
    """
    token_docs = [tokenize(d) for d in raw_docs]
    if not any(token_docs):
        raise ValueError("empty corpus")
    vocab = build_vocab(token_docs, stopwords, min_count, max_vocab)
    id_docs = [d for d in docs_to_ids(token_docs, vocab) if d]
    if not id_docs:
        raise ValueError("empty corpus")
    counts = counts_matrix(id_docs, len(vocab))
    weights = tfidf(counts)
    split = split_labels(len(id_docs), ratios, seed)
    train_docs = [id_docs[i] for i in np.flatnonzero(split == TRAIN)]
    cooc, marg = cooccurrence(train_docs, len(vocab), window)
    return Corpus(
        vocab=vocab,
        id_docs=id_docs,
        counts=counts,
        tfidf=weights,
        cooccur=cooc,
        cooccur_marginal=marg,
        split=split,
    )


def conditional_prob(corpus: Corpus, i: int, j: int) -> float:
    """P(i | j) = X[i, j] / X_j; 0 when word j never co-occurs."""
    denom = corpus.cooccur_marginal[j]
    if denom == 0:
        return 0.0
    return float(corpus.cooccur[i, j]) / float(denom)


# ---------------------------------------------------------------------------
# on-disk artifacts


def write_sparse_triplets(mat: sp.spmatrix, path: Path, integral: bool = False) -> None:
    """Write "rows cols nnz" then 0-indexed "i j value" lines."""
    coo = mat.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for k in order:
            v = coo.data[k]
            text = str(int(v)) if integral else repr(float(v))
            f.write(f"{coo.row[k]} {coo.col[k]} {text}\n")


def read_sparse_triplets(path: Path) -> sp.csr_matrix:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        rows, cols, nnz = int(header[0]), int(header[1]), int(header[2])
        r = np.empty(nnz, dtype=np.int64)
        c = np.empty(nnz, dtype=np.int64)
        d = np.empty(nnz, dtype=np.float64)
        for k in range(nnz):
            parts = f.readline().split()
            r[k], c[k], d[k] = int(parts[0]), int(parts[1]), float(parts[2])
    out = sp.coo_matrix((d, (r, c)), shape=(rows, cols)).tocsr()
    out.sort_indices()
    return out


def save_corpus(corpus: Corpus, out_dir: Path, config: dict | None = None) -> None:
    """Write all corpus artifacts; rewriting with the same corpus is byte-identical."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "vocab.json", "w", encoding="utf-8") as f:
        json.dump(corpus.vocab.words, f, ensure_ascii=False, indent=0)
        f.write("\n")
    with open(out_dir / "tokens.txt", "w", encoding="utf-8") as f:
        for doc in corpus.id_docs:
            f.write(" ".join(map(str, doc)))
            f.write("\n")
    write_sparse_triplets(corpus.counts, out_dir / "counts.txt", integral=True)
    write_sparse_triplets(corpus.tfidf, out_dir / "tfidf.txt")
    write_sparse_triplets(corpus.cooccur, out_dir / "cooccur.txt", integral=True)
    splits = {
        name: corpus.split_indices(lab).tolist()
        for name, lab in zip(SPLIT_NAMES, (TRAIN, VALID, TEST))
    }
    with open(out_dir / "splits.json", "w", encoding="utf-8") as f:
        json.dump(splits, f, indent=0, sort_keys=True)
        f.write("\n")
    meta = {
        "schema": _META_SCHEMA,
        "vocab_hash": corpus.vocab.content_hash,
        "summary": corpus.summary(),
        "config": config or {},
    }
    with open(out_dir / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_corpus(corpus_dir: Path) -> Corpus:
    corpus_dir = Path(corpus_dir)
    with open(corpus_dir / "vocab.json", "r", encoding="utf-8") as f:
        words = json.load(f)
    with open(corpus_dir / "tokens.txt", "r", encoding="utf-8") as f:
        id_docs = [[int(t) for t in line.split()] for line in f]
    counts = read_sparse_triplets(corpus_dir / "counts.txt")
    weights = read_sparse_triplets(corpus_dir / "tfidf.txt")
    cooc = read_sparse_triplets(corpus_dir / "cooccur.txt")
    with open(corpus_dir / "splits.json", "r", encoding="utf-8") as f:
        splits = json.load(f)
    n_docs = counts.shape[0]
    labels = np.empty(n_docs, dtype=np.int8)
    for name, lab in zip(SPLIT_NAMES, (TRAIN, VALID, TEST)):
        labels[np.asarray(splits[name], dtype=np.int64)] = lab
    doc_freq = np.asarray((counts > 0).sum(axis=0)).ravel().astype(np.int64)
    vocab = Vocab(words=words, doc_freq=doc_freq)
    return Corpus(
        vocab=vocab,
        id_docs=id_docs,
        counts=counts,
        tfidf=weights,
        cooccur=cooc,
        cooccur_marginal=np.asarray(cooc.sum(axis=1)).ravel(),
        split=labels,
    )
