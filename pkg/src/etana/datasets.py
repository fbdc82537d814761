"""Loading benchmark data and splitting it for evaluation.

Dense files hold one instance per line, comma-, tab- or whitespace-separated,
with one column holding the class label.  Sparse files follow the
``label idx:val idx:val ...`` convention with 1-based ascending indices.
Labels of any spelling are mapped to ``0..N-1`` in first-seen order.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, EmptyDataset, NonAscendingIndex, ParseError, RaggedRows, TooFewInstances

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "na", "nan", "n/a"})


@dataclass(eq=False)
class Dataset:
    """Feature matrix (dense array or CSR), integer labels and their symbols."""

    matrix: np.ndarray | sparse.csr_matrix
    labels: np.ndarray | None
    classes: list[str] = field(default_factory=list)
    names: list[str] | None = None

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape[0] != self.matrix.shape[0]:
                raise ConfigError("row count differs from label count")

    @property
    def n_instances(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.matrix)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.matrix[rows], labels, list(self.classes), self.names)

    def row(self, i: int) -> np.ndarray:
        r = self.matrix[i]
        return np.asarray(r.toarray()).ravel() if sparse.issparse(r) else np.asarray(r, dtype=float)

    def symbols(self, labels) -> list[str]:
        return [self.classes[int(i)] for i in labels]


class _LabelMap:
    def __init__(self, known: Sequence[str] = ()):
        self.index = {s: i for i, s in enumerate(known)}

    def __call__(self, symbol: str) -> int:
        if symbol not in self.index:
            self.index[symbol] = len(self.index)
        return self.index[symbol]

    @property
    def classes(self) -> list[str]:
        return list(self.index)


def _split(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None:
        return line.split()
    return next(csv.reader([line], delimiter=delimiter))


def _sniff(line: str) -> str | None:
    if "," in line:
        return ","
    if "\t" in line:
        return "\t"
    return None


def _cell(token: str, row: int, col: int) -> float:
    t = token.strip()
    if t.lower() in MISSING_TOKENS:
        return np.nan
    try:
        return float(t)
    except ValueError:
        raise ParseError(f"non-numeric feature value {t!r}", row=row, column=col) from None


def _resolve_label_col(label_col, header: list[str] | None, width: int) -> int | None:
    if label_col is None:
        return None
    if isinstance(label_col, str):
        s = label_col.strip()
        if s.lower() == "none":
            return None
        try:
            label_col = int(s)
        except ValueError:
            if header is None or s not in header:
                raise ConfigError(f"label column {s!r} not found (is there a header line?)") from None
            return header.index(s)
    idx = int(label_col)
    if idx < 0:
        idx += width
    if not 0 <= idx < width:
        raise ConfigError(f"label column {label_col} out of range for {width} columns")
    return idx


def load_dense(path, label_col=-1, header: bool = False, delimiter: str | None = "auto",
               labels_path=None, classes: Sequence[str] = (), limit: int | None = None) -> Dataset:
    """Parse a rectangular numeric table.

    ``label_col`` is a column index (negative counts from the right), a
    header name, or ``None`` for unlabelled rows.  ``labels_path`` instead
    reads labels from a separate file with one label per line.  Passing the
    ``classes`` of another dataset keeps label indices aligned across a
    provided train/validation split.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    rows: list[list[float]] = []
    symbols: list[str] = []
    names = None
    width = None
    col = None
    first = True
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        if delimiter == "auto":
            delimiter = _sniff(raw)
        tokens = _split(raw, delimiter)
        if first:
            width = len(tokens)
            hdr = [t.strip() for t in tokens] if header else None
            col = None if labels_path is not None else _resolve_label_col(label_col, hdr, width)
            first = False
            if header:
                names = [t for i, t in enumerate(hdr) if i != col]
                continue
        if len(tokens) != width:
            raise RaggedRows(f"expected {width} columns, found {len(tokens)}", row=lineno)
        feats = []
        for j, tok in enumerate(tokens):
            if j == col:
                symbols.append(tok.strip())
            else:
                feats.append(_cell(tok, lineno, j + 1))
        rows.append(feats)
        if limit is not None and len(rows) >= limit:
            break
    n_feat = 0 if width is None else width - (col is not None)
    matrix = np.array(rows, dtype=float).reshape(len(rows), n_feat)
    if labels_path is not None:
        symbols = [s.strip() for s in Path(labels_path).read_text(encoding="utf-8").split()]
        symbols = symbols[: len(rows)]
        if len(symbols) != len(rows):
            raise ParseError(f"{labels_path}: {len(symbols)} labels for {len(rows)} rows")
    if col is None and labels_path is None:
        return Dataset(matrix, None, list(classes), names)
    lm = _LabelMap(classes)
    labels = np.array([lm(s) for s in symbols], dtype=np.int64)
    return Dataset(matrix, labels, lm.classes, names)


def write_dense(ds: Dataset, path, delimiter: str = ",", header: bool = False) -> None:
    """Write features then the label symbol (last column), exactly round-trippable."""
    path = Path(path)
    X = ds.matrix.toarray() if ds.is_sparse else ds.matrix
    with path.open("w", encoding="utf-8", newline="") as fh:
        if header:
            names = ds.names or [f"f{k + 1}" for k in range(X.shape[1])]
            cols = names + (["label"] if ds.labels is not None else [])
            fh.write(delimiter.join(cols) + "\n")
        for i in range(X.shape[0]):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in X[i]]
            if ds.labels is not None:
                cells.append(ds.classes[ds.labels[i]])
            fh.write(delimiter.join(cells) + "\n")


def load_sparse(path, n_features: int | None = None, classes: Sequence[str] = (),
                limit: int | None = None) -> Dataset:
    """Parse ``label idx:val ...`` lines into a CSR matrix.

    Unlisted coordinates are 0.  ``n_features`` fixes the dimension, otherwise
    the largest index seen is used.
    """
    path = Path(path)
    lm = _LabelMap(classes)
    labels: list[int] = []
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            labels.append(lm(parts[0]))
            prev = 0
            for tok in parts[1:]:
                try:
                    i_s, v_s = tok.split(":", 1)
                    idx, val = int(i_s), float(v_s)
                except ValueError:
                    raise ParseError(f"malformed pair {tok!r}", row=lineno) from None
                if idx <= prev:
                    raise NonAscendingIndex(f"index {idx} after {prev}", row=lineno)
                if n_features is not None and idx > n_features:
                    raise ParseError(f"index {idx} exceeds declared dimension {n_features}", row=lineno)
                prev = idx
                indices.append(idx - 1)
                data.append(val)
            indptr.append(len(indices))
            if limit is not None and len(labels) >= limit:
                break
    K = n_features if n_features is not None else (max(indices) + 1 if indices else 0)
    matrix = sparse.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), K),
    )
    return Dataset(matrix, np.asarray(labels, dtype=np.int64), lm.classes)


def load_dataset(path, fmt: str = "dense", **kwargs) -> Dataset:
    if fmt == "dense":
        return load_dense(path, **kwargs)
    if fmt == "sparse":
        kwargs.pop("label_col", None)
        kwargs.pop("header", None)
        kwargs.pop("labels_path", None)
        return load_sparse(path, **kwargs)
    raise ConfigError(f"unknown dataset format {fmt!r}")


def concat(a: Dataset, b: Dataset) -> Dataset:
    """Stack two datasets that share a label map (``b`` loaded with ``a.classes``)."""
    if a.classes != b.classes[: len(a.classes)]:
        raise ConfigError("datasets do not share a label mapping")
    if a.is_sparse or b.is_sparse:
        m = sparse.vstack([sparse.csr_matrix(a.matrix), sparse.csr_matrix(b.matrix)]).tocsr()
    else:
        m = np.vstack([a.matrix, b.matrix])
    return Dataset(m, np.concatenate([a.labels, b.labels]), list(b.classes), a.names)


@dataclass(frozen=True)
class SplitPlan:
    kind: str = "kfold"  # or "provided"
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("kfold", "provided"):
            raise ConfigError(f"unknown split kind {self.kind!r}")
        if self.kind == "kfold" and self.folds < 2:
            raise ConfigError("k-fold splitting needs at least 2 folds")


def make_folds(n_instances: int, plan: SplitPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle, then contiguous near-equal validation folds.

    The first ``n % folds`` folds get one extra instance.  Not stratified.
    """
    if isinstance(n_instances, Dataset):
        n_instances = n_instances.n_instances
    if n_instances == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if n_instances < plan.folds:
        raise TooFewInstances(f"{n_instances} instances cannot fill {plan.folds} folds")
    perm = np.random.default_rng(plan.seed).permutation(n_instances)
    chunks = np.array_split(perm, plan.folds)
    out = []
    for i, val in enumerate(chunks):
        train = np.concatenate([c for j, c in enumerate(chunks) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out
