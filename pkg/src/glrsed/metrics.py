"""Segment-based F1 score and error rate."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import Event

SEGMENT = 0.040
_EPS = 1e-9


@dataclass(frozen=True)
class SegmentCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    n_ref: int = 0

    def __add__(self, other: SegmentCounts) -> SegmentCounts:
        return SegmentCounts(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self) -> tuple[int, ...]:
        return (self.tp, self.fp, self.fn, self.substitutions, self.deletions, self.insertions, self.n_ref)

    @property
    def f1(self) -> float:
        """F1 in percent; 100 when there is nothing to find and nothing found."""
        denom = 2 * self.tp + self.fp + self.fn
        return 100.0 if denom == 0 else 100.0 * 2 * self.tp / denom

    @property
    def error_rate(self) -> float | None:
        if self.n_ref == 0:
            return None
        return (self.substitutions + self.deletions + self.insertions) / self.n_ref


@dataclass(frozen=True)
class EvalResult:
    f1: float
    error_rate: float | None
    counts: SegmentCounts


@dataclass(frozen=True)
class EventScore:
    label: str
    f1: float
    error_rate: float | None
    counts: SegmentCounts
    absent: bool


def num_segments(duration: float, segment: float = SEGMENT) -> int:
    return max(0, math.ceil(duration / segment - _EPS))


def segment_rasterize(events: Sequence[Event], duration: float, labels: Sequence[str],
                      segment: float = SEGMENT) -> np.ndarray:
    """(M, K) activity; segment k is on if an event overlaps it with positive length."""
    index = {lab: i for i, lab in enumerate(labels)}
    K = num_segments(duration, segment)
    out = np.zeros((len(labels), K), dtype=np.int8)
    for ev in events:
        if ev.label not in index:
            raise KeyError(f"unknown event label {ev.label!r}")
        first = math.floor(ev.onset / segment + _EPS)
        last = math.ceil(ev.offset / segment - _EPS) - 1
        first, last = max(first, 0), min(last, K - 1)
        if last >= first:
            out[index[ev.label], first:last + 1] = 1
    return out


def segment_counts(ref: np.ndarray, hyp: np.ndarray) -> SegmentCounts:
    """Counts over (M, K) binary matrices, with S/D/I decided per segment."""
    ref = np.asarray(ref, dtype=bool)
    hyp = np.asarray(hyp, dtype=bool)
    if ref.shape != hyp.shape:
        raise ValueError(f"reference shape {ref.shape} differs from hypothesis shape {hyp.shape}")
    tp = (ref & hyp).sum(axis=0)
    fp = (hyp & ~ref).sum(axis=0)
    fn = (ref & ~hyp).sum(axis=0)
    return SegmentCounts(
        tp=int(tp.sum()), fp=int(fp.sum()), fn=int(fn.sum()),
        substitutions=int(np.minimum(fn, fp).sum()),
        deletions=int(np.maximum(0, fn - fp).sum()),
        insertions=int(np.maximum(0, fp - fn).sum()),
        n_ref=int(ref.sum()),
    )


def _rasters(refs, hyps, durations, labels, segment):
    if not (len(refs) == len(hyps) == len(durations)):
        raise ValueError("reference, hypothesis and duration lists must have equal length")
    for ref, hyp, dur in zip(refs, hyps, durations):
        yield (segment_rasterize(ref, dur, labels, segment),
               segment_rasterize(hyp, dur, labels, segment))


def evaluate(refs: Sequence[Sequence[Event]], hyps: Sequence[Sequence[Event]],
             durations: Sequence[float], labels: Sequence[str], segment: float = SEGMENT) -> EvalResult:
    """Micro-averaged segment metrics over all clips and labels."""
    total = SegmentCounts()
    for r, h in _rasters(refs, hyps, durations, labels, segment):
        total = total + segment_counts(r, h)
    return EvalResult(total.f1, total.error_rate, total)


def evaluate_per_event(refs, hyps, durations, labels: Sequence[str],
                       segment: float = SEGMENT) -> list[EventScore]:
    per = [SegmentCounts() for _ in labels]
    for r, h in _rasters(refs, hyps, durations, labels, segment):
        for m in range(len(labels)):
            per[m] = per[m] + segment_counts(r[m:m + 1], h[m:m + 1])
    out = []
    for label, c in zip(labels, per):
        absent = c.n_ref == 0 and c.tp + c.fp == 0
        out.append(EventScore(label, 0.0 if absent else c.f1, c.error_rate, c, absent))
    return out


def evaluate_per_scene(refs, hyps, durations, scenes: Sequence[str], labels: Sequence[str],
                       segment: float = SEGMENT) -> dict[str, tuple[float | None, EvalResult]]:
    """scene -> (macro F1 over events active in that scene's reference, micro result)."""
    out = {}
    for scene in sorted(set(scenes)):
        idx = [i for i, s in enumerate(scenes) if s == scene]
        sub = ([refs[i] for i in idx], [hyps[i] for i in idx], [durations[i] for i in idx])
        micro = evaluate(*sub, labels, segment)
        scores = [e for e in evaluate_per_event(*sub, labels, segment) if e.counts.n_ref > 0]
        macro = float(np.mean([e.f1 for e in scores])) if scores else None
        out[scene] = (macro, micro)
    return out


REPORT_HEADER = ("scope,name,f1,error_rate,tp,fp,fn,substitutions,deletions,insertions,n_ref,note")


def _fmt(x: float | None) -> str:
    return "undefined" if x is None else f"{x:.6f}"


def _row(scope: str, name: str, f1: float | None, er: float | None, c: SegmentCounts, note: str = "") -> str:
    name = name.replace(",", ";")
    return ",".join([scope, name, _fmt(f1), _fmt(er), *map(str, c.astuple()), note])


def format_report(refs, hyps, durations, labels: Sequence[str], scenes: Sequence[str] | None = None,
                  segment: float = SEGMENT) -> str:
    """CSV text: one overall row, one row per event, one per scene when scenes are known."""
    lines = [REPORT_HEADER]
    if not refs:
        lines.append(_row("overall", "micro", None, None, SegmentCounts(), "no clips"))
        return "\n".join(lines) + "\n"
    overall = evaluate(refs, hyps, durations, labels, segment)
    lines.append(_row("overall", "micro", overall.f1, overall.error_rate, overall.counts))
    for e in evaluate_per_event(refs, hyps, durations, labels, segment):
        lines.append(_row("event", e.label, e.f1, e.error_rate, e.counts, "absent" if e.absent else ""))
    if scenes is not None and any(scenes):
        for scene, (macro, micro) in evaluate_per_scene(refs, hyps, durations, scenes, labels, segment).items():
            lines.append(_row("scene", scene, macro, micro.error_rate, micro.counts, "macro_f1"))
    return "\n".join(lines) + "\n"
