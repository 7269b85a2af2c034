"""Bundled synthetic 4-class corpus with controlled label ambiguity.

Documents are bags of pronounceable pseudo-words. Most draw their content
words from a single class pool; a controlled fraction mixes the pools of
two classes and takes either label at random, which makes those documents
irreducibly ambiguous. A competent classifier lands mid-80s-to-low-90s
micro F1 on held-out data, with its errors concentrated where uncertainty
is high, so moderation curves show a clear saturation knee.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from modq.corpus import Dataset, Document

CLASS_NAMES = ["arts", "politics", "science", "sports"]
_WORDS_PER_CLASS = 40
_FILLER_WORDS = 60
_CONTENT_PROB = 0.55  # remaining tokens come from the shared filler pool
_CONTAMINATION = 0.12  # off-class content tokens in unambiguous documents


def _word_pools(rng: np.random.Generator) -> tuple[list[list[str]], list[str]]:
    syllables = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]
    words = []
    for i in rng.permutation(len(syllables) ** 2)[: 4 * _WORDS_PER_CLASS + _FILLER_WORDS]:
        words.append(syllables[i // len(syllables)] + syllables[i % len(syllables)])
    pools = [words[k * _WORDS_PER_CLASS : (k + 1) * _WORDS_PER_CLASS] for k in range(4)]
    return pools, words[4 * _WORDS_PER_CLASS :]


def generate_corpus(n: int = 2000, ambiguity: float = 0.15, seed: int = 7) -> Dataset:
    """Deterministic corpus of n documents over the 4 bundled classes."""
    if n < 8:
        raise ValueError("need at least 8 documents")
    if not 0.0 <= ambiguity < 1.0:
        raise ValueError("ambiguity must be in [0, 1)")
    rng = np.random.default_rng(seed)
    pools, filler = _word_pools(rng)

    documents = []
    for doc_id in range(n):
        primary = int(rng.integers(4))
        ambiguous = bool(rng.random() < ambiguity)
        if ambiguous:
            other = int((primary + 1 + rng.integers(3)) % 4)
            label = primary if rng.random() < 0.5 else other
            sources = (pools[primary], pools[other])
        else:
            label = primary
            sources = (pools[primary], pools[primary])
        length = int(rng.integers(10, 21))
        tokens = []
        for _ in range(length):
            if rng.random() < _CONTENT_PROB:
                pool = sources[int(rng.integers(2))]
                if not ambiguous and rng.random() < _CONTAMINATION:
                    pool = pools[int((label + 1 + rng.integers(3)) % 4)]
                tokens.append(pool[int(rng.integers(len(pool)))])
            else:
                tokens.append(filler[int(rng.integers(len(filler)))])
        documents.append(Document(doc_id, " ".join(tokens), label))
    return Dataset(documents, 4, list(CLASS_NAMES))


def write_jsonl(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in dataset.documents:
            row = {"id": doc.doc_id, "text": doc.text, "label": dataset.class_names[doc.label]}
            fh.write(json.dumps(row) + "\n")
