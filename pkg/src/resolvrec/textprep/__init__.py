"""Text preprocessing: tokens, stems, TF-IDF vocabularies and word vectors."""
from .tokenize import (
    NUM,
    default_stopwords,
    lemma_table,
    load_stopwords,
    normalize,
    preprocess,
    remove_stopwords,
    tokenize,
)
from .vocab import (
    NgramConfig,
    SparseVector,
    TfidfEncoder,
    Vocabulary,
    build_vocab,
    ngrams,
    tfidf,
    tfidf_matrix,
)
from .wordvec import WordVectorTable, char_ngrams, embed_text, load_word_vectors, stable_hash

__all__ = [
    "NUM", "NgramConfig", "SparseVector", "TfidfEncoder", "Vocabulary", "WordVectorTable",
    "build_vocab", "char_ngrams", "default_stopwords", "embed_text", "lemma_table",
    "load_stopwords", "load_word_vectors", "ngrams", "normalize", "preprocess",
    "remove_stopwords", "stable_hash", "tfidf", "tfidf_matrix", "tokenize",
]
