import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gaze_recording, reading_recording
from dpgaze.errors import RecordingTooShort
from dpgaze.features import (
    FeatureDataset,
    build_wordbook,
    default_catalogue,
    extract_features,
    format_feature_csv,
    read_feature_csv,
    window_count,
)
from dpgaze.ingest import detect_events


def test_default_catalogue():
    cat = default_catalogue()
    assert cat.m == 38
    assert len(set(cat.names)) == 38
    by_name = {e.name: e for e in cat.entries}
    assert by_name["fixation_duration_mean"].theoretical_range == (0.11, 2.75)
    assert by_name["pupil_mean"].theoretical_range == (21.9, 133.9)
    assert cat.names == default_catalogue().names


def test_window_count_examples():
    assert window_count(31, 30, 0.5) == 3
    assert window_count(60, 30, 0.5) == 61
    with pytest.raises(RecordingTooShort):
        window_count(29, 30, 0.5)


@settings(max_examples=200)
@given(st.integers(1, 4000), st.integers(1, 400), st.integers(1, 50))
def test_window_count_formula(duration_halfs, window_halfs, step_halfs):
    # exact binary fractions: durations/windows/steps in units of 0.5 s
    duration, window, step = duration_halfs / 2, window_halfs / 2, step_halfs / 2
    if duration < window:
        with pytest.raises(RecordingTooShort):
            window_count(duration, window, step)
        return
    n = window_count(duration, window, step)
    assert n == (duration_halfs - window_halfs) // step_halfs + 1
    doubled = window_count(duration, window, 2 * step)
    assert abs(doubled - n / 2) <= 1


def test_wordbook_examples():
    counts = build_wordbook([0, 0, 0], 2)
    assert counts[0] == 2 and counts.sum() == 2
    ru = build_wordbook([0, math.pi / 2], 2)
    words = ["".join(w) for w in itertools.product("RULD", repeat=2)]
    assert ru[words.index("RU")] == 1 and ru.sum() == 1
    empty = build_wordbook([], 2)
    assert empty.shape == (16,) and not empty.any()


def test_wordbook_quantization_boundaries():
    # bins are centred on the compass directions
    letters = build_wordbook([-0.1, math.pi - 0.1, 3 * math.pi / 2 + 0.2, 2 * math.pi - 0.01], 1)
    np.testing.assert_array_equal(letters, [2, 0, 1, 1])


def _enumerate_ngrams(letters, n, k):
    counts = {w: 0 for w in itertools.product(range(k), repeat=n)}
    for i in range(len(letters) - n + 1):
        counts[tuple(letters[i:i + n])] += 1
    return np.array([counts[w] for w in sorted(counts)], dtype=float)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 3), max_size=20), st.integers(1, 3))
def test_wordbook_matches_enumeration(letters, n):
    directions = [c * math.pi / 2 for c in letters]
    counts = build_wordbook(directions, n)
    np.testing.assert_array_equal(counts, _enumerate_ngrams(letters, n, 4))
    assert counts.sum() == max(0, len(letters) - n + 1)


def test_stationary_stream_rows_identical():
    rec = gaze_recording([(3200, 0.5, 0.5, 1.0)])
    ev = detect_events(rec)
    s = extract_features(ev, 30, 0.5)
    assert len(s) == window_count(rec.duration, 30, 0.5)
    assert np.all(s.values == s.values[0])
    names = default_catalogue().names
    assert np.all(s.values[:, names.index("saccade_rate")] == 0)
    assert np.all(np.isfinite(s.values))


def test_too_short_recording():
    ev = detect_events(gaze_recording([(2900, 0.5, 0.5, 1.0)]))
    with pytest.raises(RecordingTooShort):
        extract_features(ev)


def test_reading_features_are_plausible(rng):
    rec = reading_recording(45, rng)
    ev = detect_events(rec)
    s = extract_features(ev, 30, 0.5)
    names = default_catalogue().names
    col = lambda n: s.values[:, names.index(n)]  # noqa: E731
    assert len(s) == 31
    assert np.all(col("fixation_rate") > 1)
    assert np.all((col("fixation_duration_mean") > 0.1) & (col("fixation_duration_mean") < 0.6))
    assert np.all(col("pupil_mean") > 40)
    # right-pointing saccades dominate left-to-right reading
    assert np.all(col("wordbook1_R") > col("wordbook1_L"))
    # wordbook counts sum to s - 1 for s saccades in a window
    two = s.values[:, [names.index(n) for n in names if n.startswith("wordbook2_") and n != "wordbook2_diversity"]]
    ones = s.values[:, [names.index(f"wordbook1_{c}") for c in "RULD"]]
    np.testing.assert_array_equal(two.sum(axis=1), np.maximum(ones.sum(axis=1) - 1, 0))


def test_feature_csv_roundtrip(rng):
    cat = default_catalogue()
    series = []
    for pid, doc in (("P1", "comic"), ("P1", "textbook"), ("P2", "comic")):
        ev = detect_events(reading_recording(32, rng, participant=pid, document=doc))
        series.append(extract_features(ev, participant_id=pid, document=doc, gender="male"))
    ds = FeatureDataset(cat, series)
    text = format_feature_csv(ds)
    header = text.splitlines()[0].split(",")
    assert header[:4] == ["participant", "document", "gender", "window_index"]
    assert header[4:] == cat.names
    back = read_feature_csv(io.StringIO(text))
    assert back.catalogue.names == cat.names
    assert back.catalogue.entries[1].theoretical_range == (0.11, 2.75)
    for a, b in zip(ds.series, back.series):
        np.testing.assert_array_equal(a.values, b.values)
        assert (a.participant_id, a.document, a.gender) == (b.participant_id, b.document, b.gender)
    assert format_feature_csv(back) == text
