"""Annotations, event rolls, folds and a synthetic correlated-event scene generator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

from . import features as feat
from .events import Event
from .graph import EventVocabulary

HEADER = ("audio_path", "scene_label", "onset_seconds", "offset_seconds", "event_label")


class AnnotationError(ValueError):
    pass


@dataclass
class AnnotatedClip:
    audio_path: str
    scene_label: str
    events: list[Event] = field(default_factory=list)
    duration: float = 0.0

    @property
    def labels(self) -> set[str]:
        return {e.label for e in self.events}


# ---------------------------------------------------------------------------
# annotation TSV
# ---------------------------------------------------------------------------


def wav_duration(path: str | Path) -> float:
    sr, data = wavfile.read(str(path), mmap=True)
    return data.shape[0] / sr


def parse_annotations(path: str | Path, audio_root: str | Path | None = None) -> list[AnnotatedClip]:
    """Group TSV rows by audio path, keeping first-appearance order.

    A row with only ``audio_path`` and ``scene_label`` declares a clip without
    events. Clip durations come from the WAV header under ``audio_root`` (the
    annotation file's directory by default) or, failing that, the latest offset.
    """
    path = Path(path)
    root = path.parent if audio_root is None else Path(audio_root)
    clips: dict[str, AnnotatedClip] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if lineno == 1 and tuple(c.strip() for c in cols) == HEADER:
            continue
        if len(cols) not in (2, 5):
            raise AnnotationError(f"{path}:{lineno}: expected 5 tab-separated fields, found {len(cols)}")
        audio, scene = cols[0].strip(), cols[1].strip()
        if not audio:
            raise AnnotationError(f"{path}:{lineno}: empty audio path")
        clip = clips.setdefault(audio, AnnotatedClip(audio, scene))
        if clip.scene_label != scene:
            raise AnnotationError(f"{path}:{lineno}: scene {scene!r} conflicts with {clip.scene_label!r}")
        if len(cols) == 2:
            continue
        try:
            onset, offset = float(cols[2]), float(cols[3])
        except ValueError:
            raise AnnotationError(f"{path}:{lineno}: non-numeric onset/offset") from None
        if not (math.isfinite(onset) and math.isfinite(offset)) or onset < 0:
            raise AnnotationError(f"{path}:{lineno}: invalid onset/offset")
        if onset >= offset:
            raise AnnotationError(f"{path}:{lineno}: onset {onset} is not before offset {offset}")
        label = cols[4].strip()
        if not label:
            raise AnnotationError(f"{path}:{lineno}: empty event label")
        clip.events.append(Event(label, onset, offset))

    for clip in clips.values():
        last = max((e.offset for e in clip.events), default=0.0)
        wav = root / clip.audio_path
        clip.duration = wav_duration(wav) if wav.is_file() else last
        if last > clip.duration + 1e-6:
            raise AnnotationError(f"{clip.audio_path}: event ends at {last} after clip end {clip.duration}")
    return list(clips.values())


def serialize_annotations(clips: Iterable[AnnotatedClip]) -> str:
    lines = []
    for clip in clips:
        if not clip.events:
            lines.append(f"{clip.audio_path}\t{clip.scene_label}")
        for e in clip.events:
            lines.append(f"{clip.audio_path}\t{clip.scene_label}\t{e.onset:.6f}\t{e.offset:.6f}\t{e.label}")
    return "".join(line + "\n" for line in lines)


def write_annotations(path: str | Path, clips: Iterable[AnnotatedClip]) -> None:
    Path(path).write_text(serialize_annotations(clips), encoding="utf-8")


def vocabulary(clips: Iterable[AnnotatedClip]) -> EventVocabulary:
    return EventVocabulary.from_labels(e.label for c in clips for e in c.events)


# ---------------------------------------------------------------------------
# event rolls
# ---------------------------------------------------------------------------


def frame_count(duration: float, frame_length: float = feat.FRAME_LENGTH,
                frame_shift: float = feat.FRAME_SHIFT, sample_rate: int | None = None) -> int:
    """Frames in a clip, counted in samples when the rate is known (as features do)."""
    if sample_rate is not None:
        return feat.num_frames(int(round(duration * sample_rate)),
                               feat.frame_samples(frame_length, sample_rate),
                               feat.frame_samples(frame_shift, sample_rate))
    if duration < frame_length - 1e-9:
        return 0
    return int(math.floor((duration - frame_length) / frame_shift + 1e-9)) + 1


def to_event_roll(events: Sequence[Event], duration: float, vocab: EventVocabulary,
                  frame_shift: float = feat.FRAME_SHIFT, frame_length: float = feat.FRAME_LENGTH,
                  sample_rate: int | None = None, n_frames: int | None = None) -> np.ndarray:
    """(M, T) binary roll; frame t is active when (t + 0.5) * shift lies in [onset, offset)."""
    T = frame_count(duration, frame_length, frame_shift, sample_rate) if n_frames is None else n_frames
    roll = np.zeros((len(vocab), T), dtype=np.int8)
    centers = (np.arange(T) + 0.5) * frame_shift
    for e in events:
        roll[vocab.index(e.label)] |= ((centers >= e.onset) & (centers < e.offset)).astype(np.int8)
    return roll


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    train: list
    test: list


def make_folds(items: Sequence, k: int = 4, seed: int = 0) -> list[Fold]:
    """k disjoint, exhaustive test sets whose sizes differ by at most one."""
    n = len(items)
    if k < 1 or k > n:
        raise ValueError(f"cannot make {k} folds from {n} clips")
    perm = np.random.default_rng(seed).permutation(n)
    folds = []
    for i in range(k):
        test_idx = sorted(perm[i::k])
        test_set = set(test_idx)
        folds.append(Fold([items[j] for j in range(n) if j not in test_set],
                          [items[j] for j in test_idx]))
    return folds


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic scene generator.

    Per clip, each pair ``(a, b, p)`` co-occurs with probability ``p``; when it
    does not, one of its members appears alone with probability
    ``solo_prob``. Every label outside all pairs appears independently with
    probability ``single_prob``. With ``pair_sync`` the members of a firing
    pair share one time span.
    """

    num_events: int = 6
    pairs: tuple[tuple[int, int, float], ...] = ((0, 1, 0.9), (2, 3, 0.9))
    solo_prob: float = 0.5
    single_prob: float = 0.3
    event_duration: tuple[float, float] = (0.3, 1.5)
    clip_duration: float = 2.0
    sample_rate: int = 16000
    templates: tuple[str, ...] = ()
    fmin: float = 300.0
    fmax: float = 6000.0
    noise_bandwidth: float = 0.08
    amplitude: tuple[float, float] = (0.2, 0.4)
    background: float = 0.003
    headroom: float = 0.5
    pair_sync: bool = True
    scene_label: str = "synthetic"
    labels: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.num_events < 1:
            raise ValueError("num_events must be positive")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"event{i:02d}" for i in range(self.num_events)))
        if len(self.labels) != self.num_events:
            raise ValueError("labels must list num_events names")
        if not self.templates:
            object.__setattr__(self, "templates",
                               tuple("tone" if i % 2 == 0 else "noise" for i in range(self.num_events)))
        if len(self.templates) != self.num_events or set(self.templates) - {"tone", "noise"}:
            raise ValueError("templates must give 'tone' or 'noise' for every label")
        object.__setattr__(self, "pairs", tuple((int(a), int(b), float(p)) for a, b, p in self.pairs))
        members = [i for a, b, _ in self.pairs for i in (a, b)]
        if len(set(members)) != len(members) or any(not 0 <= i < self.num_events for i in members):
            raise ValueError("pairs must use distinct, valid label indices")
        probs = [p for *_, p in self.pairs] + [self.solo_prob, self.single_prob]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        lo, hi = self.event_duration
        if not 0 < lo <= hi <= self.clip_duration:
            raise ValueError("event durations must be positive and no longer than the clip")
        if self.sample_rate <= 0 or not 0 < self.fmin < self.fmax < self.sample_rate / 2:
            raise ValueError("template band must lie inside (0, sample_rate / 2)")

    def center_frequencies(self) -> np.ndarray:
        """Mel-spaced template frequencies, one distinct band per label."""
        mels = np.linspace(feat.hz_to_mel(self.fmin), feat.hz_to_mel(self.fmax), self.num_events)
        return feat.mel_to_hz(mels)


def _sample_events(spec: SynthSpec, rng: np.random.Generator) -> list[Event]:
    chosen: list[tuple[list[int], bool]] = []
    paired = set()
    for a, b, p in spec.pairs:
        paired.update((a, b))
        if rng.random() < p:
            chosen.append(([a, b], True))
        elif rng.random() < spec.solo_prob:
            chosen.append(([a if rng.random() < 0.5 else b], False))
    for m in range(spec.num_events):
        if m not in paired and rng.random() < spec.single_prob:
            chosen.append(([m], False))

    lo, hi = spec.event_duration
    events = []
    for members, together in chosen:
        spans = []
        for _ in range(1 if together and spec.pair_sync else len(members)):
            dur = rng.uniform(lo, hi)
            onset = rng.uniform(0.0, spec.clip_duration - dur)
            spans.append((round(onset, 3), round(onset + dur, 3)))
        for k, m in enumerate(members):
            on, off = spans[min(k, len(spans) - 1)]
            events.append(Event(spec.labels[m], on, min(off, spec.clip_duration)))
    events.sort(key=lambda e: (e.onset, e.label))
    return events


def _render(spec: SynthSpec, events: Sequence[Event], rng: np.random.Generator) -> np.ndarray:
    sr = spec.sample_rate
    n = int(round(spec.clip_duration * sr))
    mix = spec.background * rng.standard_normal(n)
    freqs = spec.center_frequencies()
    fade = max(1, int(0.01 * sr))
    for e in events:
        m = spec.labels.index(e.label)
        start, stop = int(round(e.onset * sr)), int(round(e.offset * sr))
        length = stop - start
        if length <= 0:
            continue
        t = np.arange(length) / sr
        amp = rng.uniform(*spec.amplitude)
        if spec.templates[m] == "tone":
            sig = np.sin(2 * np.pi * freqs[m] * t + rng.uniform(0, 2 * np.pi))
        else:
            spec_ = np.fft.rfft(rng.standard_normal(length))
            f = np.fft.rfftfreq(length, 1.0 / sr)
            bw = spec.noise_bandwidth * freqs[m]
            spec_[np.abs(f - freqs[m]) > bw] = 0.0
            sig = np.fft.irfft(spec_, n=length)
            rms = np.sqrt(np.mean(sig ** 2))
            sig = sig / rms / np.sqrt(2.0) if rms > 0 else sig
        k = min(fade, length // 2)
        if k > 0:
            ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
            sig[:k] *= ramp
            sig[length - k:] *= ramp[::-1]
        mix[start:stop] += amp * sig
    # fixed headroom gain, then hard clip into [-1, 1]
    return np.clip(spec.headroom * mix, -1.0, 1.0)


def synth_clip(spec: SynthSpec, index: int) -> tuple[list[Event], np.ndarray]:
    rng = np.random.default_rng([spec.seed, index])
    events = _sample_events(spec, rng)
    return events, _render(spec, events, rng)


def synth_generate(spec: SynthSpec, n_clips: int, out_dir: str | Path | None = None,
                   prefix: str = "clip") -> list[AnnotatedClip]:
    """Generate clips; with ``out_dir`` also write ``audio/*.wav`` and ``annotations.tsv``."""
    clips = []
    audio_dir = None
    if out_dir is not None:
        audio_dir = Path(out_dir) / "audio"
        audio_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_clips):
        events, samples = synth_clip(spec, i)
        rel = f"audio/{prefix}_{i:05d}.wav"
        if audio_dir is not None:
            feat.write_wav(Path(out_dir) / rel, feat.AudioClip(samples, spec.sample_rate))
        clips.append(AnnotatedClip(rel, spec.scene_label, events, spec.clip_duration))
    if out_dir is not None:
        write_annotations(Path(out_dir) / "annotations.tsv", clips)
    return clips


def cooccurrence_frequency(clips: Sequence[AnnotatedClip], a: str, b: str) -> float:
    """Fraction of clips in which both ``a`` and ``b`` are present."""
    if not clips:
        return 0.0
    return sum(1 for c in clips if {a, b} <= c.labels) / len(clips)
