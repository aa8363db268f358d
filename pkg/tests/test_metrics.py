
import numpy as np
import pytest

from glrsed import metrics
from glrsed.events import Event
from glrsed.metrics import SegmentCounts


def brute_counts(refs, hyps, durations, labels, seg=0.04):
    """Enumerate every (segment, label) cell with explicit interval overlaps."""
    tp = fp = fn = s = d = i = n = 0
    for ref, hyp, dur in zip(refs, hyps, durations):
        k = 0
        while k * seg < dur - 1e-9:
            lo, hi = k * seg, (k + 1) * seg

            def active(events, label):
                return any(e.label == label and min(e.offset, hi) - max(e.onset, lo) > 1e-9 for e in events)

            seg_fp = seg_fn = 0
            for label in labels:
                r, h = active(ref, label), active(hyp, label)
                tp += r and h
                seg_fp += h and not r
                seg_fn += r and not h
                n += r
            fp += seg_fp
            fn += seg_fn
            s += min(seg_fp, seg_fn)
            d += max(0, seg_fn - seg_fp)
            i += max(0, seg_fp - seg_fn)
            k += 1
    return SegmentCounts(tp, fp, fn, s, d, i, n)


def random_events(rng, labels, dur, n_max=4):
    out = []
    for _ in range(rng.integers(0, n_max + 1)):
        on = float(rng.choice([rng.uniform(0, dur), round(rng.uniform(0, dur) / 0.04) * 0.04]))
        off = min(dur, on + float(rng.uniform(0.01, 0.5)))
        if off > on:
            out.append(Event(str(rng.choice(labels)), on, off))
    return out


def test_num_segments():
    assert metrics.num_segments(1.0) == 25
    assert metrics.num_segments(1.01) == 26
    assert metrics.num_segments(0.0) == 0


def test_rasterize_examples():
    assert not metrics.segment_rasterize([], 1.0, ["a"]).any()
    r = metrics.segment_rasterize([Event("a", 0.0, 0.10)], 0.4, ["a"])
    assert np.flatnonzero(r[0]).tolist() == [0, 1, 2]
    r = metrics.segment_rasterize([Event("a", 0.04, 0.08)], 0.4, ["a"])
    assert np.flatnonzero(r[0]).tolist() == [1]


def test_rasterize_unknown_label():
    with pytest.raises(KeyError):
        metrics.segment_rasterize([Event("z", 0, 1)], 1.0, ["a"])


def test_hand_case():
    res = metrics.evaluate([[Event("A", 0, 0.04), Event("B", 0, 0.04)]],
                           [[Event("A", 0, 0.04), Event("C", 0, 0.04)]], [0.04], ["A", "B", "C"])
    c = res.counts
    assert (c.tp, c.fp, c.fn, c.substitutions, c.deletions, c.insertions) == (1, 1, 1, 1, 0, 0)
    assert res.f1 == pytest.approx(50.0)
    assert res.error_rate == pytest.approx(0.5)


def test_perfect_and_empty_hypothesis():
    ref = [[Event("a", 0.1, 0.5), Event("b", 0.3, 0.9)]]
    assert metrics.evaluate(ref, ref, [1.0], ["a", "b"]).f1 == 100.0
    assert metrics.evaluate(ref, ref, [1.0], ["a", "b"]).error_rate == 0.0
    empty = metrics.evaluate(ref, [[]], [1.0], ["a", "b"])
    assert empty.f1 == 0.0 and empty.error_rate == 1.0


def test_no_reference_activity():
    res = metrics.evaluate([[]], [[]], [1.0], ["a"])
    assert res.f1 == 100.0 and res.error_rate is None
    res = metrics.evaluate([[]], [[Event("a", 0, 0.2)]], [1.0], ["a"])
    assert res.f1 == 0.0 and res.error_rate is None


def test_length_mismatch():
    with pytest.raises(ValueError):
        metrics.evaluate([[]], [[], []], [1.0], ["a"])


@pytest.mark.parametrize("case", range(200))
def test_matches_brute_force(case):
    rng = np.random.default_rng(case)
    labels = ["a", "b", "c", "d"][: rng.integers(1, 5)]
    n = int(rng.integers(1, 3))
    durs = [float(rng.choice([0.4, 0.5, 1.0, 0.77])) for _ in range(n)]
    refs = [random_events(rng, labels, d) for d in durs]
    hyps = [random_events(rng, labels, d) for d in durs]
    assert metrics.evaluate(refs, hyps, durs, labels).counts == brute_counts(refs, hyps, durs, labels)


def test_per_event_examples():
    ref = [[Event("a", 0, 0.4), Event("b", 0, 0.4)]]
    hyp = [[Event("a", 0, 0.4)]]
    scores = {s.label: s for s in metrics.evaluate_per_event(ref, hyp, [0.4], ["a", "b", "c"])}
    assert scores["a"].f1 == 100.0
    assert scores["b"].f1 == 0.0
    assert scores["c"].absent and scores["c"].error_rate is None


def test_per_event_disjoint_errors_match_brute_force():
    ref = [[Event("a", 0.0, 0.4), Event("b", 0.4, 0.8)]]
    hyp = [[Event("a", 0.1, 0.4), Event("b", 0.4, 1.0)]]
    for s in metrics.evaluate_per_event(ref, hyp, [1.0], ["a", "b"]):
        sub = lambda evs: [[e for e in evs[0] if e.label == s.label]]  # noqa: E731
        expected = brute_counts(sub(ref), sub(hyp), [1.0], [s.label])
        assert s.counts == expected
    # per-label counts add up to the micro totals for TP/FP/FN
    total = metrics.evaluate(ref, hyp, [1.0], ["a", "b"]).counts
    per = metrics.evaluate_per_event(ref, hyp, [1.0], ["a", "b"])
    assert sum(s.counts.tp for s in per) == total.tp
    assert sum(s.counts.fp for s in per) == total.fp


def test_per_scene_macro():
    refs = [[Event("a", 0, 0.4)], [Event("b", 0, 0.4)], [Event("a", 0, 0.4)]]
    hyps = [[Event("a", 0, 0.4)], [], [Event("a", 0, 0.2)]]
    out = metrics.evaluate_per_scene(refs, hyps, [0.4] * 3, ["home", "office", "home"], ["a", "b"])
    macro, micro = out["home"]
    assert macro == pytest.approx(micro.f1)
    assert out["office"][0] == 0.0


def test_counts_addition():
    a = SegmentCounts(1, 2, 3, 1, 2, 1, 4)
    assert (a + a).astuple() == (2, 4, 6, 2, 4, 2, 8)


def test_format_report():
    refs = [[Event("a", 0, 0.4)]]
    text = metrics.format_report(refs, refs, [0.4], ["a", "b"], ["home"])
    lines = text.splitlines()
    assert lines[0] == metrics.REPORT_HEADER
    assert lines[1].startswith("overall,micro,100.000000,0.000000")
    assert lines[3].endswith("absent")
    assert lines[4].startswith("scene,home")
    empty = metrics.format_report([], [], [], ["a"]).splitlines()
    assert empty[1].startswith("overall,micro,undefined,undefined") and empty[1].endswith("no clips")
