"""Sound event co-occurrence graph and its Laplacian penalty."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class EventVocabulary:
    labels: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(set(labels)) != len(labels):
            raise ValueError("event labels must be unique")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> EventVocabulary:
        return cls(tuple(sorted(set(labels))))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label) -> bool:
        return label in self._index

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown event label {label!r}") from None


@dataclass(frozen=True)
class GraphLaplacian:
    laplacian: np.ndarray
    degree: np.ndarray

    @property
    def size(self) -> int:
        return self.laplacian.shape[0]


@dataclass(frozen=True)
class EventGraph:
    vocab: EventVocabulary
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.float64)
        m = len(self.vocab)
        if a.shape != (m, m):
            raise ValueError(f"adjacency shape {a.shape} does not match {m} labels")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if (a < 0).any() or (a > 1).any() or np.diag(a).any():
            raise ValueError("adjacency entries must lie in [0, 1] with a zero diagonal")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    def laplacian(self) -> GraphLaplacian:
        return laplacian(self.adjacency)

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))


def count_cooccurrence(clips: Iterable[Iterable], vocab: EventVocabulary) -> np.ndarray:
    """Number of clips in which each pair of distinct events is present.

    Each clip is an iterable of events (anything with a ``label`` attribute,
    or bare label strings); an event counts once per clip however often it
    occurs.
    """
    m = len(vocab)
    counts = np.zeros((m, m), dtype=np.int64)
    for events in clips:
        present = sorted({vocab.index(getattr(e, "label", e)) for e in events})
        if len(present) < 2:
            continue
        idx = np.array(present)
        counts[np.ix_(idx, idx)] += 1
    np.fill_diagonal(counts, 0)
    return counts


def normalize(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        return np.zeros_like(counts)
    return counts / top


def laplacian(adjacency: np.ndarray) -> GraphLaplacian:
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    degree = np.diag(a.sum(axis=1))
    lap = degree - a
    lap.setflags(write=False)
    degree.setflags(write=False)
    return GraphLaplacian(lap, degree)


def penalty(lap: GraphLaplacian | np.ndarray, v: Sequence[float]) -> float:
    """Quadratic form v^T L v."""
    L = lap.laplacian if isinstance(lap, GraphLaplacian) else np.asarray(lap)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (L.shape[0],):
        raise ValueError(f"vector of length {v.shape} does not match graph of size {L.shape[0]}")
    return float(v @ L @ v)


def build_graph(clips: Sequence[Iterable], vocab: EventVocabulary) -> tuple[EventGraph, np.ndarray]:
    counts = count_cooccurrence(clips, vocab)
    return EventGraph(vocab, normalize(counts)), counts


def write_graph(path: str | Path, graph: EventGraph) -> None:
    """Plain text: M, tab-separated labels, then M rows of A (9 significant digits)."""
    lines = [str(len(graph.vocab)), "\t".join(graph.vocab.labels)]
    for row in graph.adjacency:
        lines.append("\t".join(f"{x:.9g}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph(path: str | Path) -> EventGraph:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise ValueError(f"{path}: truncated graph file")
    try:
        m = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}: first line must be the number of events") from None
    labels = lines[1].split("\t") if m else []
    if len(labels) != m or len(lines) < 2 + m:
        raise ValueError(f"{path}: expected {m} labels and {m} matrix rows")
    rows = []
    for k, line in enumerate(lines[2:2 + m], start=3):
        vals = line.split("\t")
        if len(vals) != m:
            raise ValueError(f"{path}:{k}: expected {m} values, found {len(vals)}")
        rows.append([float(x) for x in vals])
    return EventGraph(EventVocabulary(tuple(labels)), np.array(rows).reshape(m, m))
