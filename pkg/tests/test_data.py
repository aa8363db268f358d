import hashlib

import numpy as np
import pytest

from glrsed import data, graph
from glrsed.data import AnnotatedClip, AnnotationError, SynthSpec
from glrsed.events import Event
from glrsed.graph import EventVocabulary


def write(tmp_path, text, name="ann.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_empty_file(tmp_path):
    assert data.parse_annotations(write(tmp_path, "")) == []


def test_parse_single_row(tmp_path):
    clips = data.parse_annotations(write(tmp_path, "a.wav\thome\t0.0\t1.0\tdishes\n"))
    assert len(clips) == 1
    c = clips[0]
    assert (c.audio_path, c.scene_label, c.duration) == ("a.wav", "home", 1.0)
    assert c.events == [Event("dishes", 0.0, 1.0)]


def test_parse_header_and_event_free_clip(tmp_path):
    text = "audio_path\tscene_label\tonset_seconds\toffset_seconds\tevent_label\nb.wav\toffice\na.wav\thome\t0.5\t2\tfan\n"
    clips = data.parse_annotations(write(tmp_path, text))
    assert [c.audio_path for c in clips] == ["b.wav", "a.wav"]
    assert clips[0].events == []


def test_parse_duration_from_wav(tmp_path):
    from glrsed.features import AudioClip, write_wav

    write_wav(tmp_path / "a.wav", AudioClip(np.zeros(32000), 16000))
    clips = data.parse_annotations(write(tmp_path, "a.wav\thome\t0.0\t1.0\tfan\n"))
    assert clips[0].duration == pytest.approx(2.0)


@pytest.mark.parametrize("row, msg", [
    ("a.wav\thome\t0.0\t1.0", "expected 5"),
    ("a.wav\thome\tx\t1.0\tfan", "non-numeric"),
    ("a.wav\thome\t1.0\t1.0\tfan", "not before"),
    ("a.wav\thome\t-1.0\t1.0\tfan", "invalid"),
    ("a.wav\thome\t0.0\t1.0\t ", "empty event"),
])
def test_parse_rejects_bad_rows(tmp_path, row, msg):
    with pytest.raises(AnnotationError, match=msg) as err:
        data.parse_annotations(write(tmp_path, "ok.wav\thome\t0\t1\tfan\n" + row + "\n"))
    assert ":2:" in str(err.value)


def test_parse_rejects_scene_conflict(tmp_path):
    with pytest.raises(AnnotationError, match="conflicts"):
        data.parse_annotations(write(tmp_path, "a.wav\thome\t0\t1\tfan\na.wav\toffice\t0\t1\tfan\n"))


def test_serialize_round_trip(tmp_path):
    text = "a.wav\thome\t0.5\t1.25\tfan\nb.wav\toffice\na.wav\thome\t0\t3\tcar\n"
    clips = data.parse_annotations(write(tmp_path, text))
    canon = data.serialize_annotations(clips)
    assert canon.splitlines()[0] == "a.wav\thome\t0.500000\t1.250000\tfan"
    again = data.parse_annotations(write(tmp_path, canon, "b.tsv"))
    assert data.serialize_annotations(again) == canon


def test_vocabulary_is_sorted():
    clips = [AnnotatedClip("a", "s", [Event("fan", 0, 1), Event("car", 0, 1)])]
    assert data.vocabulary(clips).labels == ("car", "fan")


def test_frame_count_consistent_with_features():
    assert data.frame_count(10.0, sample_rate=44100) == 499
    assert data.frame_count(10.0) == 499
    assert data.frame_count(1.0, sample_rate=16000) == 49
    assert data.frame_count(0.01) == 0


def test_event_roll_examples():
    v = EventVocabulary(("a", "b"))
    assert not data.to_event_roll([], 2.0, v).any()
    roll = data.to_event_roll([Event("a", 0.0, 1.0)], 2.0, v)
    assert roll.shape == (2, 99)
    assert np.flatnonzero(roll[0]).tolist() == list(range(50))
    full = data.to_event_roll([Event("b", 0.0, 2.0)], 2.0, v)
    assert full[1].all()


def test_event_roll_unknown_label():
    with pytest.raises(KeyError):
        data.to_event_roll([Event("z", 0, 1)], 1.0, EventVocabulary(("a",)))


@pytest.mark.parametrize("n, k, sizes", [(8, 4, [2, 2, 2, 2]), (10, 4, [3, 3, 2, 2]), (5, 1, [5])])
def test_folds(n, k, sizes):
    items = list(range(n))
    folds = data.make_folds(items, k, seed=3)
    assert [len(f.test) for f in folds] == sizes
    tests = [set(f.test) for f in folds]
    assert set().union(*tests) == set(items)
    for i in range(k):
        for j in range(i + 1, k):
            assert not tests[i] & tests[j]
    for f in folds:
        assert sorted(f.train + f.test) == items


def test_folds_invalid():
    with pytest.raises(ValueError):
        data.make_folds([1, 2], 3)


def test_synth_pair_probability_one():
    spec = SynthSpec(pairs=((0, 1, 1.0),), clip_duration=1.0, event_duration=(0.2, 0.5), seed=5)
    clips = data.synth_generate(spec, 100)
    for c in clips:
        if "event00" in c.labels:
            assert "event01" in c.labels
    assert data.cooccurrence_frequency(clips, "event00", "event01") == 1.0


def test_synth_pair_probability_zero():
    spec = SynthSpec(pairs=((0, 1, 0.0),), clip_duration=1.0, event_duration=(0.2, 0.5))
    clips = data.synth_generate(spec, 50)
    counts = graph.count_cooccurrence([c.events for c in clips], EventVocabulary(spec.labels))
    assert counts[0, 1] == 0


def test_synth_events_inside_clip():
    spec = SynthSpec(clip_duration=1.0, event_duration=(0.2, 0.9), seed=2)
    for c in data.synth_generate(spec, 30):
        for e in c.events:
            assert 0 <= e.onset < e.offset <= 1.0


def _digest(path):
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(path).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_deterministic(tmp_path):
    spec = SynthSpec(clip_duration=1.0, event_duration=(0.2, 0.5), seed=9)
    data.synth_generate(spec, 4, tmp_path / "a")
    data.synth_generate(spec, 4, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert len(list((tmp_path / "a" / "audio").glob("*.wav"))) == 4
    parsed = data.parse_annotations(tmp_path / "a" / "annotations.tsv")
    assert [c.duration for c in parsed] == [1.0] * 4


def test_synth_audio_in_range():
    _, audio = data.synth_clip(SynthSpec(seed=1), 0)
    assert audio.shape == (32000,)
    assert np.abs(audio).max() <= 1.0


@pytest.mark.parametrize("kwargs", [
    {"pairs": ((0, 0, 0.5),)},
    {"pairs": ((0, 9, 0.5),)},
    {"pairs": ((0, 1, 1.5),)},
    {"event_duration": (0.5, 3.0)},
    {"labels": ("a",)},
    {"templates": ("tone",) * 5 + ("chirp",)},
])
def test_synth_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)


def test_synthetic_tones_are_separable():
    # each label's template energy lands in a distinct mel band region
    from glrsed import features as feat

    spec = SynthSpec(seed=0)
    fb = feat.mel_filterbank(64, 640, spec.sample_rate)
    centers = fb.argmax(axis=1) * spec.sample_rate / 640
    bands = [int(np.argmin(np.abs(centers - f))) for f in spec.center_frequencies()]
    assert len(set(bands)) == spec.num_events
