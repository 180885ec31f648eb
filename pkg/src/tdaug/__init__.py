"""Rare-word translation data augmentation for parallel corpora."""

__version__ = "0.1.0"

from .align import (  # noqa: E402
    AlignmentLinks,
    TranslationLexicon,
    lexical_tables_from_alignments,
    load_alignments,
    train_ibm1,
    trans,
    viterbi_alignments,
)
from .analysis import augmentation_stats, corpus_bleu, length_ratio, rare_word_coverage  # noqa: E402
from .augment import (  # noqa: E402
    AugmentationModels,
    AugmentationRecord,
    AugmentConfig,
    AugmentedCorpus,
    augment_pair,
    candidate_substitutions,
    oversample,
    run_tda,
    select_translation,
)
from .bpe import MergeTable, apply_bpe, learn_bpe, undo_bpe  # noqa: E402
from .corpus import (  # noqa: E402
    ParallelCorpus,
    RareWordSet,
    SentencePair,
    Vocabulary,
    build_vocabulary,
    load_parallel,
    rare_words,
)
from .lm import NGramLM, train_ngram_lm  # noqa: E402

__all__ = [
    "__version__",
    "AlignmentLinks",
    "TranslationLexicon",
    "lexical_tables_from_alignments",
    "load_alignments",
    "train_ibm1",
    "trans",
    "viterbi_alignments",
    "augmentation_stats",
    "corpus_bleu",
    "length_ratio",
    "rare_word_coverage",
    "AugmentationModels",
    "AugmentationRecord",
    "AugmentConfig",
    "AugmentedCorpus",
    "augment_pair",
    "candidate_substitutions",
    "oversample",
    "run_tda",
    "select_translation",
    "MergeTable",
    "apply_bpe",
    "learn_bpe",
    "undo_bpe",
    "ParallelCorpus",
    "RareWordSet",
    "SentencePair",
    "Vocabulary",
    "build_vocabulary",
    "load_parallel",
    "rare_words",
    "NGramLM",
    "train_ngram_lm",
]
