"""Gaze CSV parsing and dispersion-threshold (I-DT) event detection."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, NamedTuple

import numpy as np

from .errors import (
    DegenerateRecording,
    EmptyRecording,
    InputError,
    MissingColumn,
    NonFiniteValue,
    NonMonotonicTimestamp,
)

DOCUMENTS = ("comic", "newspaper", "textbook")
GENDERS = ("female", "male")
GAZE_COLUMNS = ("t", "x", "y", "pupil", "confidence")

# absorbs float noise when comparing accumulated durations against thresholds
_TIME_TOL = 1e-9


class GazeSample(NamedTuple):
    t: float
    x: float
    y: float
    pupil: float
    confidence: float


@dataclass(frozen=True)
class GazeRecording:
    """One participant reading one document; samples stored column-wise."""

    participant_id: str
    document: str
    gender: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pupil: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        if self.document not in DOCUMENTS:
            raise InputError(f"unknown document {self.document!r}")
        if self.gender not in GENDERS:
            raise InputError(f"unknown gender {self.gender!r}")
        n = len(self.t)
        if n == 0:
            raise EmptyRecording("recording has no samples")
        for name in GAZE_COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise InputError(f"column {name} has wrong length")

    @classmethod
    def from_samples(cls, participant_id, document, gender, samples) -> GazeRecording:
        arr = np.asarray([tuple(s) for s in samples], dtype=float).reshape(-1, 5)
        return cls(participant_id, document, gender, *(arr[:, k].copy() for k in range(5)))

    @property
    def samples(self) -> list[GazeSample]:
        return [GazeSample(*row) for row in zip(self.t, self.x, self.y, self.pupil, self.confidence)]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def __len__(self):
        return len(self.t)


def parse_gaze_csv(source: BinaryIO | bytes) -> GazeRecording:
    """Parse a gaze CSV (metadata block, then ``t,x,y,pupil,confidence``).

    Every data row is validated; errors carry the 1-based data row number.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    meta: dict[str, str] = {}
    header: list[str] | None = None
    rows: list[tuple[float, ...]] = []
    row_no = 0
    for line in text:
        line = line.rstrip("\r\n")
        if header is None:
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    meta[key.strip()] = value.strip()
                continue
            if not line.strip():
                continue
            header = [c.strip() for c in line.split(",")]
            missing = [c for c in GAZE_COLUMNS if c not in header]
            if missing:
                raise MissingColumn(f"missing column(s): {', '.join(missing)}")
            extra = [c for c in header if c not in GAZE_COLUMNS]
            if extra or len(header) != len(GAZE_COLUMNS):
                raise InputError(f"unexpected column(s) in header: {header}")
            order = [header.index(c) for c in GAZE_COLUMNS]
            continue
        if not line.strip():
            continue
        row_no += 1
        cells = line.split(",")
        if len(cells) != len(GAZE_COLUMNS):
            raise InputError(f"expected {len(GAZE_COLUMNS)} fields, got {len(cells)}", row_no)
        try:
            values = tuple(float(cells[k]) for k in order)
        except ValueError as exc:
            raise InputError(f"not a number ({exc})", row_no) from None
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteValue("non-finite value", row_no)
        t, _, _, _, conf = values
        if t < 0:
            raise InputError("negative timestamp", row_no)
        if not 0.0 <= conf <= 1.0:
            raise InputError("confidence outside [0, 1]", row_no)
        if rows and t < rows[-1][0]:
            raise NonMonotonicTimestamp(f"timestamp {t} precedes {rows[-1][0]}", row_no)
        rows.append(values)

    if header is None:
        raise MissingColumn("no header line")
    if not rows:
        raise EmptyRecording("no data rows")
    for key in ("participant", "document", "gender"):
        if key not in meta:
            raise InputError(f"metadata field '{key}' missing")
    arr = np.asarray(rows, dtype=float)
    return GazeRecording(
        meta["participant"], meta["document"], meta["gender"],
        *(arr[:, k].copy() for k in range(5)),
    )


def read_gaze_csv(path: str | Path) -> GazeRecording:
    with open(path, "rb") as fh:
        return parse_gaze_csv(fh)


def format_gaze_csv(rec: GazeRecording) -> bytes:
    lines = [
        f"# participant={rec.participant_id}",
        f"# document={rec.document}",
        f"# gender={rec.gender}",
        ",".join(GAZE_COLUMNS),
    ]
    for row in zip(rec.t, rec.x, rec.y, rec.pupil, rec.confidence):
        lines.append(",".join(repr(float(v)) for v in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


@dataclass(frozen=True)
class DetectionConfig:
    dispersion: float = 0.05  # normalized screen units, (max x - min x) + (max y - min y)
    min_fixation: float = 0.1  # s
    blink_confidence: float = 0.5
    min_blink: float = 0.1  # s


class Fixation(NamedTuple):
    start: float
    duration: float
    x: float
    y: float
    n_samples: int


class Saccade(NamedTuple):
    start: float
    duration: float
    amplitude: float
    direction: float
    n_samples: int


class Blink(NamedTuple):
    start: float
    duration: float
    n_samples: int


@dataclass
class EventSequence:
    t_start: float
    t_end: float
    fixations: list[Fixation] = field(default_factory=list)
    saccades: list[Saccade] = field(default_factory=list)
    blinks: list[Blink] = field(default_factory=list)
    pupil_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    pupil: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def pupil_track(self) -> list[tuple[float, float]]:
        return list(zip(self.pupil_t.tolist(), self.pupil.tolist()))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) index runs where mask is True."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _idt(x, y, t, ends, lo, hi, cfg, out):
    """Append (start, stop) fixation index ranges found in samples [lo, hi)."""
    i = lo
    while i < hi:
        # smallest window starting at i that covers min_fixation
        k = int(np.searchsorted(ends[lo:hi], t[i] + cfg.min_fixation - _TIME_TOL)) + lo
        if k >= hi:
            break
        xmin, xmax = x[i:k + 1].min(), x[i:k + 1].max()
        ymin, ymax = y[i:k + 1].min(), y[i:k + 1].max()
        if (xmax - xmin) + (ymax - ymin) > cfg.dispersion:
            i += 1
            continue
        while k + 1 < hi:
            nx, ny = x[k + 1], y[k + 1]
            if (max(xmax, nx) - min(xmin, nx)) + (max(ymax, ny) - min(ymin, ny)) > cfg.dispersion:
                break
            xmin, xmax = min(xmin, nx), max(xmax, nx)
            ymin, ymax = min(ymin, ny), max(ymax, ny)
            k += 1
        out.append((i, k + 1))
        i = k + 1


def detect_events(rec: GazeRecording, cfg: DetectionConfig = DetectionConfig()) -> EventSequence:
    """Label every sample as fixation, saccade or blink.

    Blinks are low-confidence runs lasting at least ``cfg.min_blink``; shorter
    dropouts are treated as ordinary gaze samples. I-DT runs independently on
    each blink-free segment, so a blink always splits a fixation. Saccades are
    maximal runs of the remaining samples, plus a zero-length transition
    between two directly adjacent fixations.
    """
    if rec.duration < cfg.min_fixation:
        raise DegenerateRecording(
            f"recording lasts {rec.duration:.3f} s, shorter than min fixation {cfg.min_fixation} s"
        )
    t, x, y = rec.t, rec.x, rec.y
    n = len(t)
    tail = float(np.median(np.diff(t))) if n > 1 else 0.0
    ends = np.append(t[1:], t[-1] + tail)  # sample i covers [t_i, ends_i)

    segments: list[tuple[str, int, int]] = []
    is_blink = np.zeros(n, dtype=bool)
    for a, b in _runs(rec.confidence < cfg.blink_confidence):
        if ends[b - 1] - t[a] >= cfg.min_blink - _TIME_TOL:
            is_blink[a:b] = True
            segments.append(("blink", a, b))

    fix_ranges: list[tuple[int, int]] = []
    for a, b in _runs(~is_blink):
        _idt(x, y, t, ends, a, b, cfg, fix_ranges)
    segments.extend(("fixation", a, b) for a, b in fix_ranges)

    covered = is_blink.copy()
    for a, b in fix_ranges:
        covered[a:b] = True
    segments.extend(("saccade", a, b) for a, b in _runs(~covered))
    segments.sort(key=lambda s: s[1])

    ev = EventSequence(float(t[0]), float(t[-1]))
    centroids: dict[int, tuple[float, float]] = {}
    for kind, a, b in segments:
        if kind == "fixation":
            cx, cy = float(x[a:b].mean()), float(y[a:b].mean())
            centroids[a] = (cx, cy)
            ev.fixations.append(Fixation(float(t[a]), float(ends[b - 1] - t[a]), cx, cy, b - a))
        elif kind == "blink":
            ev.blinks.append(Blink(float(t[a]), float(ends[b - 1] - t[a]), b - a))

    for pos, (kind, a, b) in enumerate(segments):
        prev = segments[pos - 1] if pos > 0 else None
        nxt = segments[pos + 1] if pos + 1 < len(segments) else None
        if kind == "saccade":
            if prev is not None and prev[0] == "fixation":
                p0 = centroids[prev[1]]
            else:
                p0 = (float(x[a]), float(y[a]))
            if nxt is not None and nxt[0] == "fixation":
                p1 = centroids[nxt[1]]
            else:
                p1 = (float(x[b - 1]), float(y[b - 1]))
            dx, dy = p1[0] - p0[0], p1[1] - p0[1]
            ev.saccades.append(Saccade(
                float(t[a]), float(ends[b - 1] - t[a]), math.hypot(dx, dy), math.atan2(dy, dx), b - a
            ))
        elif kind == "fixation" and prev is not None and prev[0] == "fixation" and prev[2] == a:
            (x0, y0), (x1, y1) = centroids[prev[1]], centroids[a]
            ev.saccades.append(Saccade(
                float(t[a]), 0.0, math.hypot(x1 - x0, y1 - y0), math.atan2(y1 - y0, x1 - x0), 0
            ))
    ev.saccades.sort(key=lambda s: s.start)

    keep = ~is_blink
    ev.pupil_t = t[keep].copy()
    ev.pupil = rec.pupil[keep].copy()
    return ev
