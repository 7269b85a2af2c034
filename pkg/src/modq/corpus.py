"""Dataset loading, reproducible splits, and TF-IDF feature extraction.

Datasets are plain labeled documents; labels from disk are re-mapped to
dense class indices 0..C-1 in lexicographic order of the raw label
strings so runs are reproducible regardless of file order.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class Document:
    doc_id: int
    text: str
    label: int


@dataclass
class Dataset:
    documents: list[Document]
    num_classes: int
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.documents)

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("need >= 2 classes")
        if len(self.class_names) != self.num_classes:
            raise ValueError("class_names length does not match num_classes")
        seen = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise ValueError(f"duplicate document id {doc.doc_id}")
            seen.add(doc.doc_id)
            if not 0 <= doc.label < self.num_classes:
                raise ValueError(f"label {doc.label} out of range for document {doc.doc_id}")


@dataclass
class Vocabulary:
    index: dict[str, int]
    document_frequency: dict[str, int]
    corpus_size: int

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class FeatureVector:
    indices: np.ndarray  # int32, strictly increasing
    weights: np.ndarray  # float64, L2-normalized unless empty
    dimension: int


@dataclass
class CsrMatrix:
    """Row-major sparse matrix consumed by the kernel backend."""

    indptr: np.ndarray  # int64, len n_rows+1
    indices: np.ndarray  # int32
    data: np.ndarray  # float64
    shape: tuple[int, int]

    def toarray(self) -> np.ndarray:
        dense = np.zeros(self.shape)
        for i in range(self.shape[0]):
            s, e = self.indptr[i], self.indptr[i + 1]
            dense[i, self.indices[s:e]] = self.data[s:e]
        return dense


def _rows_from_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed row at line {lineno} of {path}: {exc}") from None
            if not isinstance(row, dict) or "text" not in row or "label" not in row:
                raise ValueError(f"malformed row at line {lineno} of {path}: need 'text' and 'label'")
            if not isinstance(row["label"], str):
                raise ValueError(f"malformed row at line {lineno} of {path}: label must be a string")
            yield lineno, row.get("id"), str(row["text"]), row["label"]


def _rows_from_csv(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "text" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise ValueError(f"unknown label column: {path} needs a 'text,label' header")
        for lineno, row in enumerate(reader, start=2):
            if row.get("text") is None or row.get("label") is None:
                raise ValueError(f"malformed row at line {lineno} of {path}")
            yield lineno, None, row["text"], row["label"]


def load_dataset(path: str | Path, fmt: str | None = None) -> Dataset:
    """Load a labeled dataset from JSONL or CSV.

    `fmt` is "jsonl" or "csv"; when omitted it is inferred from the file
    suffix. Raw labels are re-mapped to dense indices in lexicographic
    order; missing ids are assigned by row order.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unknown dataset format {fmt!r}")

    rows = list(_rows_from_jsonl(path) if fmt == "jsonl" else _rows_from_csv(path))
    if not rows:
        raise ValueError("empty dataset")

    class_names = sorted({label for _, _, _, label in rows})
    if len(class_names) < 2:
        raise ValueError("need >= 2 classes")
    label_index = {name: i for i, name in enumerate(class_names)}

    documents = []
    for order, (lineno, doc_id, text, label) in enumerate(rows):
        if doc_id is not None and not isinstance(doc_id, int):
            raise ValueError(f"malformed row at line {lineno} of {path}: id must be an integer")
        documents.append(Document(doc_id if doc_id is not None else order, text, label_index[label]))

    dataset = Dataset(documents, len(class_names), class_names)
    dataset.validate()
    return dataset


def _largest_remainder_sizes(n: int, ratios: tuple[float, float, float]) -> list[int]:
    exact = [n * r for r in ratios]
    sizes = [math.floor(x) for x in exact]
    remainders = [x - s for x, s in zip(exact, sizes)]
    # ties broken toward the earlier split
    for i in sorted(range(len(ratios)), key=lambda i: (-remainders[i], i))[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_dataset(
    dataset: Dataset,
    ratios: tuple[float, float, float],
    seed: int,
    eval_seed: int | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into (train, test, eval) datasets.

    Sizes follow the largest-remainder rule so the partition is exact.
    The evaluation split depends only on `eval_seed` (default: `seed`),
    which lets trials vary `seed` against a constant held-out set.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    if eval_seed is None:
        eval_seed = seed

    n = len(dataset)
    n_train, n_test, n_eval = _largest_remainder_sizes(n, tuple(ratios))
    if min(n_train, n_test, n_eval) == 0:
        raise ValueError("a split would be empty; adjust ratios or dataset size")

    eval_rng = np.random.default_rng(eval_seed)
    eval_pick = eval_rng.permutation(n)[:n_eval]
    eval_set = set(eval_pick.tolist())

    pool = [i for i in range(n) if i not in eval_set]
    rng = np.random.default_rng(seed)
    pool = [pool[j] for j in rng.permutation(len(pool))]
    train_idx, test_idx = sorted(pool[:n_train]), sorted(pool[n_train:])

    def subset(idx):
        docs = [dataset.documents[i] for i in idx]
        return Dataset(docs, dataset.num_classes, list(dataset.class_names))

    return subset(train_idx), subset(test_idx), subset(sorted(eval_set))


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 2 chars."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


def build_vocabulary(train: Dataset, max_size: int = 20000, min_df: int = 1) -> Vocabulary:
    """Rank tokens by (document frequency desc, token asc), truncate to max_size."""
    if max_size < 1 or min_df < 1:
        raise ValueError("max_size and min_df must be >= 1")
    df: dict[str, int] = {}
    for doc in train.documents:
        for token in set(tokenize(doc.text)):
            df[token] = df.get(token, 0) + 1
    kept = sorted((t for t, c in df.items() if c >= min_df), key=lambda t: (-df[t], t))[:max_size]
    if not kept:
        raise ValueError("empty vocabulary")
    return Vocabulary({t: i for i, t in enumerate(kept)}, {t: df[t] for t in kept}, len(train))


def _idf(vocab: Vocabulary, token: str) -> float:
    # smoothed idf: never zero for retained tokens
    return math.log((1 + vocab.corpus_size) / (1 + vocab.document_frequency[token])) + 1.0


def vectorize(doc: Document, vocab: Vocabulary) -> FeatureVector:
    """TF-IDF features, L2-normalized; out-of-vocabulary tokens are ignored."""
    if len(vocab) == 0:
        raise ValueError("empty vocabulary")
    counts: dict[int, float] = {}
    idf_by_index: dict[int, float] = {}
    for token in tokenize(doc.text):
        idx = vocab.index.get(token)
        if idx is not None:
            counts[idx] = counts.get(idx, 0.0) + 1.0
            idf_by_index[idx] = _idf(vocab, token)
    indices = np.array(sorted(counts), dtype=np.int32)
    weights = np.array([counts[i] * idf_by_index[i] for i in indices], dtype=np.float64)
    norm = float(np.linalg.norm(weights))
    if norm > 0:
        weights /= norm
    return FeatureVector(indices, weights, len(vocab))


def feature_matrix(dataset: Dataset, vocab: Vocabulary) -> tuple[CsrMatrix, np.ndarray]:
    """Vectorize a whole dataset into a CSR matrix plus a label array."""
    indptr = np.zeros(len(dataset) + 1, dtype=np.int64)
    index_chunks, weight_chunks = [], []
    for i, doc in enumerate(dataset.documents):
        fv = vectorize(doc, vocab)
        index_chunks.append(fv.indices)
        weight_chunks.append(fv.weights)
        indptr[i + 1] = indptr[i] + len(fv.indices)
    indices = np.concatenate(index_chunks) if index_chunks else np.zeros(0, dtype=np.int32)
    data = np.concatenate(weight_chunks) if weight_chunks else np.zeros(0)
    labels = np.array([doc.label for doc in dataset.documents], dtype=np.int64)
    return CsrMatrix(indptr, indices.astype(np.int32), data, (len(dataset), len(vocab))), labels
