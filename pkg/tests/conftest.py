import numpy as np
import pytest

from modq.corpus import CsrMatrix
from modq.evaluation import EvaluationRecord
from modq.uncertainty import UncertaintyScore


def csr_from_dense(arr: np.ndarray) -> CsrMatrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for row in arr:
        nz = np.nonzero(row)[0]
        indices.extend(nz.tolist())
        data.extend(row[nz].tolist())
        indptr.append(len(indices))
    return CsrMatrix(
        np.array(indptr, dtype=np.int64),
        np.array(indices, dtype=np.int32),
        np.array(data, dtype=np.float64),
        arr.shape,
    )


def make_records(rows, score_function="lc"):
    """rows: (doc_id, true, pred, confidence, uncertainty) tuples."""
    return [
        EvaluationRecord(i, t, p, c, UncertaintyScore(u, score_function))
        for i, t, p, c, u in rows
    ]


@pytest.fixture(scope="session")
def toy_separable():
    """Linearly separable 2-feature, 2-class set (unit-norm rows)."""
    X = csr_from_dense(np.array([
        [1.0, 0.0],
        [0.9, 0.1],
        [0.0, 1.0],
        [0.1, 0.9],
    ]))
    y = np.array([0, 0, 1, 1], dtype=np.int64)
    return X, y
