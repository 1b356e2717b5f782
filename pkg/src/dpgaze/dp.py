"""Per-feature exponential-mechanism sanitization of feature time series.

For feature ``i`` with range ``delta_i`` and padded series length ``t_max``,
the L1 utility has sensitivity ``t_max * delta_i``. Writing
``lam_i = eps_i / (2 * t_max * delta_i)``, one scalar ``y ~ Exp(rate=lam_i)``
is drawn per (participant, feature) vector and every element is moved by
``+/- log(y) / (lam_i * t_max)`` with an independent random sign. The release
of all ``m`` features is ``sum(eps_i)``-differentially private by sequential
composition.

Randomness: every (series, feature) pair gets its own generator derived from
``SeedSequence(seed, spawn_key=(1, series_index, feature_index))``; the
subsampling draws of a series use ``spawn_key=(0, series_index)``. Results are
therefore independent of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, InputError
from .features import FeatureDataset, FeatureSeries


@dataclass(frozen=True)
class FeatureRange:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ValueError("invalid feature range")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("feature range must be finite")

    @property
    def delta(self) -> np.ndarray:
        return self.hi - self.lo


def estimate_ranges(ds: FeatureDataset, use_hints: bool = True) -> FeatureRange:
    """Global per-feature min/max over all series and windows.

    A catalogue ``theoretical_range`` widens the empirical range where it is
    wider; it never narrows it.
    """
    if not ds.series:
        raise EmptyDataset("cannot estimate ranges of an empty dataset")
    stacked = np.concatenate([s.values for s in ds.series], axis=0)
    if stacked.shape[0] == 0:
        raise EmptyDataset("dataset has no windows")
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    if use_hints:
        for i, entry in enumerate(ds.catalogue.entries):
            if entry.theoretical_range is not None:
                lo[i] = min(lo[i], entry.theoretical_range[0])
                hi[i] = max(hi[i], entry.theoretical_range[1])
    return FeatureRange(lo, hi)


def subsampled_length(t: int, w: int) -> int:
    return -(-t // w)


def subsample(series: FeatureSeries, w: int, rng: np.random.Generator) -> FeatureSeries:
    """Keep one uniformly drawn window per block of ``w``, per feature independently.

    A trailing partial block contributes one draw from its remainder.
    """
    if w < 1:
        raise ValueError("subsampling window must be >= 1")
    if w == 1:
        return series.with_values(series.values.copy())
    t, m = series.values.shape
    n_blocks = subsampled_length(t, w)
    starts = np.arange(n_blocks) * w
    sizes = np.minimum(w, t - starts)
    picks = starts[:, None] + rng.integers(0, sizes[:, None], size=(n_blocks, m))
    return series.with_values(series.values[picks, np.arange(m)[None, :]])


@dataclass
class SanitizerParams:
    epsilon_per_feature: float | Sequence[float]
    subsample_window: int = 10
    ranges: FeatureRange | None = None
    t_max: int | None = None

    def epsilons(self, m: int) -> np.ndarray:
        eps = np.broadcast_to(np.asarray(self.epsilon_per_feature, dtype=float), (m,)).copy()
        if np.any(~np.isfinite(eps)) or np.any(eps <= 0):
            raise ValueError("epsilon must be > 0 and finite")
        return eps

    def lambdas(self, m: int) -> np.ndarray:
        """Rate ``eps_i / (2 t_max delta_i)``; inf marks constant features."""
        if self.ranges is None or self.t_max is None:
            raise ValueError("ranges and t_max must be set")
        delta = self.ranges.delta
        with np.errstate(divide="ignore"):
            return self.epsilons(m) / (2.0 * self.t_max * delta)


@dataclass(frozen=True)
class NoiseDraw:
    y: float
    offset: float
    signs: np.ndarray


def draw_noise(lam: float, t_max: int, length: int, rng) -> NoiseDraw:
    y = float(rng.exponential(1.0 / lam))
    signs = rng.integers(0, 2, size=length) * 2 - 1
    return NoiseDraw(y, math.log(y) / (lam * t_max), signs)


def sanitize_vector(values: np.ndarray, lam: float, t_max: int, rng) -> tuple[np.ndarray, NoiseDraw]:
    draw = draw_noise(lam, t_max, len(values), rng)
    return values + draw.signs * draw.offset, draw


def sanitize_series(p: FeatureSeries, params: SanitizerParams, rng) -> FeatureSeries:
    """Sanitize every feature column of an (already subsampled) series.

    ``rng`` is consumed feature by feature in column order. Features with a
    zero range are returned unchanged.
    """
    t, m = p.values.shape
    if params.t_max is None or params.t_max < t:
        raise ValueError(f"t_max={params.t_max} is smaller than the series length {t}")
    lam = params.lambdas(m)
    out = p.values.copy()
    for i in range(m):
        if np.isfinite(lam[i]):
            out[:, i], _ = sanitize_vector(p.values[:, i], lam[i], params.t_max, rng)
    return p.with_values(out)


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(keys)))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for (seed, keys)."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


@dataclass
class PrivacyReceipt:
    feature_names: list[str]
    epsilons: list[float]
    total_epsilon: float
    w: int
    t_max: int
    ranges: FeatureRange
    seed: int
    constant_features: list[str] = field(default_factory=list)
    range_source: str = "dataset"

    def to_text(self) -> str:
        eps = self.epsilons
        eps_text = repr(eps[0]) if all(e == eps[0] for e in eps) else ",".join(map(repr, eps))
        lines = [
            f"epsilon_per_feature={eps_text}",
            f"total_epsilon={self.total_epsilon!r}",
            f"w={self.w}",
            f"t_max={self.t_max}",
            f"seed={self.seed}",
            f"range_source={self.range_source}",
            f"constant_features={','.join(self.constant_features)}",
        ]
        for name, lo, hi in zip(self.feature_names, self.ranges.lo, self.ranges.hi):
            lines.append(f"range.{name}={float(lo)!r},{float(hi)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> PrivacyReceipt:
        kv: dict[str, str] = {}
        names, lo, hi = [], [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InputError(f"malformed receipt line {line!r}")
            if key.startswith("range."):
                a, b = value.split(",")
                names.append(key[len("range."):])
                lo.append(float(a))
                hi.append(float(b))
            else:
                kv[key] = value
        eps = [float(v) for v in kv["epsilon_per_feature"].split(",")]
        if len(eps) == 1:
            eps = eps * len(names)
        return cls(
            feature_names=names,
            epsilons=eps,
            total_epsilon=float(kv["total_epsilon"]),
            w=int(kv["w"]),
            t_max=int(kv["t_max"]),
            ranges=FeatureRange(np.asarray(lo), np.asarray(hi)),
            seed=int(kv["seed"]),
            constant_features=[c for c in kv.get("constant_features", "").split(",") if c],
            range_source=kv.get("range_source", "dataset"),
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def compose(epsilons: Sequence[float]) -> float:
    """Sequential composition: the total budget is the sum of the parts."""
    return math.fsum(epsilons)


def sanitize_dataset(
    ds: FeatureDataset,
    params: SanitizerParams,
    seed: int,
    *,
    range_source: str = "dataset",
) -> tuple[FeatureDataset, PrivacyReceipt]:
    """Subsample and sanitize every series; labels pass through unchanged.

    ``params.ranges`` defaults to :func:`estimate_ranges` on ``ds``;
    ``params.t_max`` is always recomputed as the longest subsampled series.
    """
    if not ds.series:
        raise EmptyDataset("nothing to sanitize")
    m = ds.catalogue.m
    w = params.subsample_window
    ranges = params.ranges if params.ranges is not None else estimate_ranges(ds)
    t_max = max(subsampled_length(len(s), w) for s in ds.series)
    run = SanitizerParams(params.epsilon_per_feature, w, ranges, t_max)
    lam = run.lambdas(m)
    eps = run.epsilons(m)

    out = []
    for k, s in enumerate(ds.series):
        sub = subsample(s, w, stream(seed, 0, k))
        values = sub.values.copy()
        for i in range(m):
            if np.isfinite(lam[i]):
                values[:, i], _ = sanitize_vector(sub.values[:, i], lam[i], t_max, stream(seed, 1, k, i))
        out.append(sub.with_values(values))

    constant = [e.name for e, d in zip(ds.catalogue.entries, ranges.delta) if d == 0]
    receipt = PrivacyReceipt(
        feature_names=ds.catalogue.names,
        epsilons=eps.tolist(),
        total_epsilon=compose(eps.tolist()),
        w=w,
        t_max=t_max,
        ranges=ranges,
        seed=seed,
        constant_features=constant,
        range_source=range_source,
    )
    return ds.with_series(out), receipt
