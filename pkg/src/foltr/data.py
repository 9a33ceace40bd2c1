"""LETOR / SVMLight ranking data: parsing, min-max normalization and query-level splits."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np


class LetorParseError(ValueError):
    """Raised for malformed LETOR input; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Document:
    features: np.ndarray
    relevance: int
    doc_key: str


@dataclass(frozen=True, eq=False)
class QueryGroup:
    """Candidate documents of one query, stored column-wise.

    ``features`` has shape ``(n_docs, feature_dim)``; ``labels`` holds the
    integer relevance grade of each row.
    """

    query_id: str
    features: np.ndarray
    labels: np.ndarray
    doc_keys: tuple[str, ...] = ()

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, ndmin=2)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if features.shape[0] == 0:
            raise ValueError(f"query {self.query_id!r} has no documents")
        if labels.shape[0] != features.shape[0]:
            raise ValueError("labels and features disagree on document count")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        keys = tuple(self.doc_keys) or tuple(f"{self.query_id}:{i}" for i in range(len(labels)))
        object.__setattr__(self, "doc_keys", keys)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, QueryGroup):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.doc_keys == other.doc_keys
        )

    @property
    def documents(self) -> list[Document]:
        return [
            Document(self.features[i], int(self.labels[i]), self.doc_keys[i])
            for i in range(len(self))
        ]


@dataclass(frozen=True)
class Dataset:
    queries: tuple[QueryGroup, ...]
    feature_dim: int
    grade_levels: int = 5
    name: str = field(default="dataset", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        seen = set()
        for q in self.queries:
            if q.features.shape[1] != self.feature_dim:
                raise ValueError(f"query {q.query_id!r} has feature dim {q.features.shape[1]}")
            if q.query_id in seen:
                raise ValueError(f"duplicate query id {q.query_id!r}")
            seen.add(q.query_id)
            if q.labels.min() < 0 or q.labels.max() >= self.grade_levels:
                raise ValueError(
                    f"query {q.query_id!r} has labels outside [0, {self.grade_levels - 1}]"
                )

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def query_ids(self) -> list[str]:
        return [q.query_id for q in self.queries]

    def subset(self, indices: Iterable[int], name: str | None = None) -> Dataset:
        return Dataset(
            tuple(self.queries[i] for i in indices),
            self.feature_dim,
            self.grade_levels,
            name=name or self.name,
        )


def _infer_grade_levels(max_label: int) -> int:
    return 3 if max_label <= 2 else 5


def parse_letor(stream: TextIO | str, grade_levels: int | None = None, name: str = "dataset") -> Dataset:
    """Parse ``<rel> qid:<qid> <fid>:<val> ... [# comment]`` lines.

    Queries keep first-appearance order. Feature ids are 1-based; ids that a
    line omits are 0.0 and the dimension is the largest id seen. When
    ``grade_levels`` is not given it is 3 if no label exceeds 2, else 5.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    rows: dict[str, list[tuple[int, dict[int, float], str]]] = {}
    max_fid = 0
    for lineno, raw in enumerate(stream, start=1):
        line, _, comment = raw.partition("#")
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < 2 or not tokens[1].startswith("qid:"):
            raise LetorParseError(lineno, "expected '<rel> qid:<qid> ...'")
        try:
            rel_value = float(tokens[0])
        except ValueError:
            raise LetorParseError(lineno, f"non-numeric relevance {tokens[0]!r}") from None
        if rel_value != int(rel_value) or rel_value < 0:
            raise LetorParseError(lineno, f"relevance must be a non-negative integer, got {tokens[0]!r}")
        qid = tokens[1][4:]
        if not qid:
            raise LetorParseError(lineno, "empty qid")
        feats: dict[int, float] = {}
        for tok in tokens[2:]:
            fid_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LetorParseError(lineno, f"malformed feature token {tok!r}")
            try:
                fid = int(fid_s)
                val = float(val_s)
            except ValueError:
                raise LetorParseError(lineno, f"non-numeric feature token {tok!r}") from None
            if fid < 1:
                raise LetorParseError(lineno, f"feature id must be positive, got {fid}")
            feats[fid] = val
            max_fid = max(max_fid, fid)
        rows.setdefault(qid, []).append((int(rel_value), feats, comment.strip()))

    if not rows:
        raise ValueError("empty LETOR input")
    if max_fid == 0:
        raise ValueError("LETOR input has no features")

    max_label = max(rel for docs in rows.values() for rel, _, _ in docs)
    if grade_levels is None:
        grade_levels = _infer_grade_levels(max_label)

    queries = []
    for qid, docs in rows.items():
        mat = np.zeros((len(docs), max_fid))
        for i, (_, feats, _) in enumerate(docs):
            for fid, val in feats.items():
                mat[i, fid - 1] = val
        labels = [rel for rel, _, _ in docs]
        keys = tuple(c if c else f"{qid}:{i}" for i, (_, _, c) in enumerate(docs))
        queries.append(QueryGroup(qid, mat, labels, keys))
    return Dataset(tuple(queries), max_fid, grade_levels, name=name)


def load_letor(path: str | Path, grade_levels: int | None = None) -> Dataset:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_letor(fh, grade_levels=grade_levels, name=path.stem)


def dump_letor(dataset: Dataset) -> str:
    """Serialize to LETOR text; ``parse_letor`` of the result equals ``dataset``.

    Every feature is written (zeros included) so the dimension survives.
    """
    out = []
    for q in dataset.queries:
        for i in range(len(q)):
            feats = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(q.features[i].tolist()))
            out.append(f"{int(q.labels[i])} qid:{q.query_id} {feats} # {q.doc_keys[i]}")
    return "\n".join(out) + "\n"


def _minmax_scaler(matrices):
    stacked = np.vstack(matrices)
    lo = stacked.min(axis=0)
    span = stacked.max(axis=0) - lo
    constant = span == 0
    span[constant] = 1.0

    def scale(x):
        out = (x - lo) / span
        out[:, constant] = 0.0
        # guard against 1 + eps from rounding
        return np.clip(out, 0.0, 1.0)

    return scale


def _rescaled(dataset: Dataset, scale) -> Dataset:
    queries = tuple(
        QueryGroup(q.query_id, scale(q.features), q.labels, q.doc_keys) for q in dataset.queries
    )
    return Dataset(queries, dataset.feature_dim, dataset.grade_levels, name=dataset.name)


def normalize_features(dataset: Dataset) -> Dataset:
    """Global per-feature min-max scaling to [0, 1]; constant features become 0.0."""
    if len(dataset) == 0:
        raise ValueError("cannot normalize an empty dataset")
    return _rescaled(dataset, _minmax_scaler([q.features for q in dataset.queries]))


def split_train_test(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Query-level random split; the test side gets ``round(n * test_fraction)`` queries (at least one per side)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 queries to split")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = sorted(perm[:n_test].tolist())
    train_idx = sorted(perm[n_test:].tolist())
    return (
        dataset.subset(train_idx, name=dataset.name),
        dataset.subset(test_idx, name=dataset.name),
    )


def pad_features(dataset: Dataset, dim: int) -> Dataset:
    if dim == dataset.feature_dim:
        return dataset
    queries = tuple(
        QueryGroup(
            q.query_id,
            np.pad(q.features, ((0, 0), (0, dim - dataset.feature_dim))),
            q.labels,
            q.doc_keys,
        )
        for q in dataset.queries
    )
    return Dataset(queries, dim, dataset.grade_levels, name=dataset.name)


def normalize_pair(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    """Normalize separately supplied train/test files with one min-max pass over both.

    Sparse files may never mention the highest feature ids, so the narrower
    side is zero-padded first.
    """
    dim = max(train.feature_dim, test.feature_dim)
    train, test = pad_features(train, dim), pad_features(test, dim)
    scale = _minmax_scaler([q.features for q in train.queries + test.queries])
    return _rescaled(train, scale), _rescaled(test, scale)
