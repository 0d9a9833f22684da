"""Topic taxonomies from box embeddings.

Words and topics live as axis-aligned boxes in the unit hypercube; a
variational document model learns per-level topic mixtures, and upper
levels of the taxonomy are mined by clustering the topic boxes.
"""

from .autodiff import AdamState, Node, adam_step, clip_global_norm, constant, parameter
from .boxes import (
    BoxAlgebraConfig,
    BoxEmbed,
    asym_containment,
    box_from_coords,
    gumbel_log_volume,
    hard_volume,
    intersect,
    make_box,
    norm_sym_affinity,
    soft_union,
    sym_affinity,
    union_box,
)
from .cluster import (
    APResult,
    ClusterConfig,
    RecurClusResult,
    affinity_propagation,
    assign_parents,
    expand_topic_box,
    recur_clus,
    topic_affinity_matrix,
)
from .corpus import (
    Corpus,
    Vocab,
    build_corpus,
    build_vocab,
    cooccurrence,
    counts_matrix,
    load_corpus,
    save_corpus,
    split_labels,
    tfidf,
    tokenize,
)
from .metrics import MetricReport, ReferenceStats, clnpmi_HC, coherence_C, npmi_pair, report, uniqueness_D
from .model import (
    ModelState,
    decode,
    encode,
    init_state,
    sample_document,
    state_from_dict,
    state_to_dict,
    taxonomy_dict,
    top_keywords,
    topic_word_dist,
)
from .synth import PlantedCorpus, make_planted_corpus
from .training import FitResult, TrainConfig, beta_schedule, co_loss, elbo_loss, fit, ht_loss, train_epoch

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "APResult",
    "BoxAlgebraConfig",
    "BoxEmbed",
    "ClusterConfig",
    "Corpus",
    "FitResult",
    "MetricReport",
    "ModelState",
    "Node",
    "PlantedCorpus",
    "RecurClusResult",
    "ReferenceStats",
    "TrainConfig",
    "Vocab",
    "adam_step",
    "affinity_propagation",
    "assign_parents",
    "asym_containment",
    "beta_schedule",
    "box_from_coords",
    "build_corpus",
    "build_vocab",
    "clip_global_norm",
    "clnpmi_HC",
    "co_loss",
    "coherence_C",
    "constant",
    "cooccurrence",
    "counts_matrix",
    "decode",
    "elbo_loss",
    "encode",
    "expand_topic_box",
    "fit",
    "gumbel_log_volume",
    "hard_volume",
    "ht_loss",
    "init_state",
    "intersect",
    "load_corpus",
    "make_box",
    "make_planted_corpus",
    "norm_sym_affinity",
    "npmi_pair",
    "parameter",
    "recur_clus",
    "report",
    "sample_document",
    "save_corpus",
    "soft_union",
    "split_labels",
    "state_from_dict",
    "state_to_dict",
    "sym_affinity",
    "taxonomy_dict",
    "tfidf",
    "tokenize",
    "top_keywords",
    "topic_affinity_matrix",
    "topic_word_dist",
    "train_epoch",
    "uniqueness_D",
    "union_box",
    "__version__",
]
