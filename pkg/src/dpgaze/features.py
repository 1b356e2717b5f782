"""Sliding-window feature extraction and the Feature CSV format."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import EmptyDataset, InputError, MissingColumn, RecordingTooShort
from .ingest import EventSequence

DEFAULT_WINDOW = 30.0
DEFAULT_STEP = 0.5
LETTERS = "RULD"  # right, up, left, down; bins centred on 0, pi/2, pi, 3pi/2
META_COLUMNS = ("participant", "document", "gender", "window_index")

FIXATION_DURATION_RANGE = (0.11, 2.75)  # s
PUPIL_RANGE = (21.9, 133.9)  # px


@dataclass(frozen=True)
class FeatureEntry:
    name: str
    extractor: str
    theoretical_range: tuple[float, float] | None = None
    unit: str = ""


@dataclass(frozen=True)
class FeatureCatalogue:
    entries: tuple[FeatureEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("catalogue needs at least one feature")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def __len__(self):
        return len(self.entries)


def default_catalogue() -> FeatureCatalogue:
    fd = FIXATION_DURATION_RANGE
    entries = [
        FeatureEntry("fixation_rate", "fixation.rate", unit="1/s"),
        FeatureEntry("fixation_duration_mean", "fixation.duration.mean", fd, "s"),
        FeatureEntry("fixation_duration_var", "fixation.duration.var", unit="s^2"),
        FeatureEntry("fixation_duration_max", "fixation.duration.max", fd, "s"),
        FeatureEntry("fixation_duration_min", "fixation.duration.min", fd, "s"),
        FeatureEntry("saccade_rate", "saccade.rate", unit="1/s"),
        FeatureEntry("saccade_duration_mean", "saccade.duration.mean", unit="s"),
        FeatureEntry("saccade_duration_var", "saccade.duration.var", unit="s^2"),
        FeatureEntry("saccade_amplitude_mean", "saccade.amplitude.mean", unit="screen"),
        FeatureEntry("saccade_amplitude_var", "saccade.amplitude.var", unit="screen^2"),
        FeatureEntry("saccade_amplitude_max", "saccade.amplitude.max", unit="screen"),
        FeatureEntry("blink_rate", "blink.rate", unit="1/s"),
        FeatureEntry("blink_duration_mean", "blink.duration.mean", unit="s"),
        FeatureEntry("pupil_mean", "pupil.mean", PUPIL_RANGE, "px"),
        FeatureEntry("pupil_var", "pupil.var", unit="px^2"),
        FeatureEntry("pupil_min", "pupil.min", PUPIL_RANGE, "px"),
        FeatureEntry("pupil_max", "pupil.max", PUPIL_RANGE, "px"),
    ]
    for gram in itertools.product(LETTERS, repeat=2):
        word = "".join(gram)
        entries.append(FeatureEntry(f"wordbook2_{word}", f"wordbook2.{word}", unit="count"))
    entries.append(FeatureEntry("wordbook2_diversity", "wordbook2.diversity", unit="count"))
    for letter in LETTERS:
        entries.append(FeatureEntry(f"wordbook1_{letter}", f"wordbook1.{letter}", unit="count"))
    return FeatureCatalogue(tuple(entries))


def catalogue_from_names(names: Sequence[str]) -> FeatureCatalogue:
    """Rebuild a catalogue from CSV column names, reusing known entries."""
    known = {e.name: e for e in default_catalogue().entries}
    return FeatureCatalogue(tuple(known.get(n, FeatureEntry(n, "external")) for n in names))


def quantize_directions(directions: Iterable[float], k: int = 4) -> np.ndarray:
    """Map angles (radians) to k bins of width 2*pi/k, bin 0 centred on 0."""
    d = np.asarray(list(directions), dtype=float)
    width = 2 * math.pi / k
    return (np.floor(np.mod(d + width / 2, 2 * math.pi) / width).astype(int)) % k


def build_wordbook(directions: Sequence[float], n: int = 2, k: int = 4) -> np.ndarray:
    """Counts of every length-n word over consecutive quantized directions.

    The result has length k**n in lexicographic order of bin indices, so for
    the default alphabet ``RR, RU, RL, RD, UR, ...``.
    """
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    letters = quantize_directions(directions, k)
    counts = np.zeros(k**n, dtype=float)
    if len(letters) < n:
        return counts
    codes = np.zeros(len(letters) - n + 1, dtype=int)
    for offset in range(n):
        codes = codes * k + letters[offset:len(letters) - n + 1 + offset]
    np.add.at(counts, codes, 1.0)
    return counts


def _moments(v: np.ndarray) -> tuple[float, float, float, float]:
    # empty event class -> zeros, keeps matrices finite
    if v.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    return float(v.mean()), float(v.var()), float(v.max()), float(v.min())


def _overlapping(starts: np.ndarray, ends: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (starts < hi) & ((ends > lo) | (starts >= lo))


def _window_stats(ev: EventSequence, lo: float, hi: float, arrays) -> dict[str, float]:
    fs, fe, fd, ss, se, sd, sa, sdir, bs, be, bd = arrays
    window = hi - lo
    out: dict[str, float] = {}

    fdur = fd[_overlapping(fs, fe, lo, hi)]
    mean, var, mx, mn = _moments(fdur)
    out.update({
        "fixation.rate": fdur.size / window,
        "fixation.duration.mean": mean, "fixation.duration.var": var,
        "fixation.duration.max": mx, "fixation.duration.min": mn,
    })

    smask = _overlapping(ss, se, lo, hi)
    mean, var, _, _ = _moments(sd[smask])
    amp_mean, amp_var, amp_max, _ = _moments(sa[smask])
    out.update({
        "saccade.rate": int(smask.sum()) / window,
        "saccade.duration.mean": mean, "saccade.duration.var": var,
        "saccade.amplitude.mean": amp_mean, "saccade.amplitude.var": amp_var,
        "saccade.amplitude.max": amp_max,
    })

    bdur = bd[_overlapping(bs, be, lo, hi)]
    out["blink.rate"] = bdur.size / window
    out["blink.duration.mean"] = _moments(bdur)[0]

    a, b = np.searchsorted(ev.pupil_t, [lo, hi], side="left")
    mean, var, mx, mn = _moments(ev.pupil[a:b])
    out.update({"pupil.mean": mean, "pupil.var": var, "pupil.min": mn, "pupil.max": mx})

    dirs = sdir[smask]
    grams = build_wordbook(dirs, 2, len(LETTERS))
    for idx, gram in enumerate(itertools.product(LETTERS, repeat=2)):
        out["wordbook2." + "".join(gram)] = float(grams[idx])
    out["wordbook2.diversity"] = float(np.count_nonzero(grams))
    singles = build_wordbook(dirs, 1, len(LETTERS))
    for idx, letter in enumerate(LETTERS):
        out["wordbook1." + letter] = float(singles[idx])
    return out


def window_count(duration: float, window: float, step: float) -> int:
    if window <= 0 or step <= 0:
        raise ValueError("window and step must be positive")
    if duration < window:
        raise RecordingTooShort(f"recording lasts {duration:.3f} s, window is {window} s")
    return int(math.floor((duration - window) / step + 1e-9)) + 1


@dataclass
class FeatureSeries:
    participant_id: str
    document: str
    gender: str
    values: np.ndarray  # (T_k, m)
    window_len: float | None = DEFAULT_WINDOW
    step: float | None = DEFAULT_STEP

    def __len__(self):
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> FeatureSeries:
        return FeatureSeries(self.participant_id, self.document, self.gender, values,
                             self.window_len, self.step)


@dataclass
class FeatureDataset:
    catalogue: FeatureCatalogue
    series: list[FeatureSeries] = field(default_factory=list)

    def __post_init__(self):
        for s in self.series:
            if s.values.ndim != 2 or s.values.shape[1] != self.catalogue.m:
                raise ValueError(
                    f"series {s.participant_id}/{s.document} has shape {s.values.shape}, "
                    f"catalogue has m={self.catalogue.m}"
                )

    @property
    def labels(self) -> list[tuple[str, str, str]]:
        return [(s.participant_id, s.gender, s.document) for s in self.series]

    @property
    def participants(self) -> list[str]:
        return list(dict.fromkeys(s.participant_id for s in self.series))

    def with_series(self, series: list[FeatureSeries]) -> FeatureDataset:
        return FeatureDataset(self.catalogue, series)


def extract_features(
    ev: EventSequence,
    window: float = DEFAULT_WINDOW,
    step: float = DEFAULT_STEP,
    cat: FeatureCatalogue | None = None,
    *,
    participant_id: str = "",
    document: str = "",
    gender: str = "",
) -> FeatureSeries:
    """Aggregate events over sliding windows ``[t0 + j*step, t0 + j*step + window)``.

    An event contributes to every window it overlaps; durations are not clipped.
    """
    cat = cat or default_catalogue()
    n_windows = window_count(ev.duration, window, step)

    def cols(events, *names):
        arr = np.asarray([[getattr(e, nm) for nm in names] for e in events], dtype=float)
        return arr.reshape(-1, len(names)).T

    fs, fd = cols(ev.fixations, "start", "duration")
    ss, sd, sa, sdir = cols(ev.saccades, "start", "duration", "amplitude", "direction")
    bs, bd = cols(ev.blinks, "start", "duration")
    arrays = (fs, fs + fd, fd, ss, ss + sd, sd, sa, sdir, bs, bs + bd, bd)

    values = np.empty((n_windows, cat.m))
    for j in range(n_windows):
        lo = ev.t_start + j * step
        stats = _window_stats(ev, lo, lo + window, arrays)
        try:
            values[j] = [stats[e.extractor] for e in cat.entries]
        except KeyError as exc:
            raise ValueError(f"catalogue entry has unknown extractor {exc}") from None
    return FeatureSeries(participant_id, document, gender, values, window, step)


def write_feature_csv(ds: FeatureDataset, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(list(META_COLUMNS) + ds.catalogue.names)
    for s in ds.series:
        for j, row in enumerate(s.values):
            writer.writerow([s.participant_id, s.document, s.gender, j] + [repr(float(v)) for v in row])


def format_feature_csv(ds: FeatureDataset) -> str:
    buf = io.StringIO()
    write_feature_csv(ds, buf)
    return buf.getvalue()


def read_feature_csv(source: str | Path | TextIO) -> FeatureDataset:
    """Load a Feature CSV. Rows of one (participant, document) must be contiguous."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_feature_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        raise EmptyDataset("feature CSV is empty")
    if tuple(header[:4]) != META_COLUMNS:
        raise MissingColumn(f"header must start with {','.join(META_COLUMNS)}")
    names = header[4:]
    if not names:
        raise MissingColumn("no feature columns")
    cat = catalogue_from_names(names)

    series: list[FeatureSeries] = []
    seen: set[tuple[str, str]] = set()
    key = None
    rows: list[list[float]] = []
    meta: tuple[str, str, str] | None = None

    def flush():
        if meta is not None:
            series.append(FeatureSeries(meta[0], meta[1], meta[2], np.asarray(rows, dtype=float),
                                        None, None))

    for lineno, rec in enumerate(reader, start=1):
        if not rec:
            continue
        if len(rec) != len(header):
            raise InputError(f"expected {len(header)} fields, got {len(rec)}", lineno)
        k = (rec[0], rec[1])
        if k != key:
            if k in seen:
                raise InputError(f"rows for {k} are not contiguous", lineno)
            flush()
            seen.add(k)
            key, meta, rows = k, (rec[0], rec[1], rec[2]), []
        if int(rec[3]) != len(rows):
            raise InputError(f"window_index {rec[3]} out of sequence", lineno)
        try:
            vals = [float(v) for v in rec[4:]]
        except ValueError as exc:
            raise InputError(f"not a number ({exc})", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError("non-finite feature value", lineno)
        rows.append(vals)
    flush()
    if not series:
        raise EmptyDataset("feature CSV has no rows")
    return FeatureDataset(cat, series)
