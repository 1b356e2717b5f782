"""Threat-model and utility experiments over an epsilon sweep.

Tasks:

* ``gender`` -- attacker without prior knowledge; binary SVM, leave-one-person-out.
* ``document`` -- utility task; 3-class SVM, leave-one-person-out.
* ``reid`` -- attacker with prior knowledge; identity SVM trained on the clean
  first half of every (participant, document) series, tested on the sanitized
  second half.

Every (epsilon index, repeat) cell derives its own seed from the configured
seed, so cells can run in any order or process. ``gender`` and ``document``
in the same cell see the same sanitized release.
"""

from __future__ import annotations

import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dp
from .errors import (
    ConfigError,
    InsufficientParticipants,
    InsufficientWindows,
    MissingClass,
    MissingDocument,
)
from .features import FeatureDataset, FeatureSeries
from .ingest import DOCUMENTS
from .learn import (
    accuracy,
    apply_standardizer,
    balance_classes,
    fit_standardizer,
    majority_vote,
    train_multiclass,
    train_svm,
)

log = logging.getLogger(__name__)

TASKS = ("gender", "reid", "document")
DEFAULT_EPSILONS = (100.0, 50.0, 30.0, 20.0, 10.0, 7.0)
RESULTS_HEADER = "task,epsilon_per_feature,total_epsilon,repeat,voted_accuracy,window_accuracy,chance"


@dataclass(frozen=True)
class ExperimentConfig:
    tasks: tuple[str, ...] = TASKS
    train_noised: bool = True
    epsilon_list: tuple[float, ...] = DEFAULT_EPSILONS
    w: int = 10
    repeats: int = 5
    seed: int = 0
    C: float = 1.0
    gamma: float | None = None
    jobs: int = 1

    def validate(self) -> None:
        if not self.tasks:
            raise ConfigError("no tasks configured")
        unknown = [t for t in self.tasks if t not in TASKS]
        if unknown:
            raise ConfigError(f"unknown task(s): {unknown}")
        eps = list(self.epsilon_list)
        if not eps:
            raise ConfigError("epsilon_list is empty")
        if any(not math.isfinite(e) or e <= 0 for e in eps):
            raise ConfigError("every epsilon must be finite and > 0")
        diffs = np.diff(eps)
        if len(eps) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError("epsilon_list must be strictly ascending or descending")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.w < 1:
            raise ConfigError("w must be >= 1")
        if self.C <= 0:
            raise ConfigError("C must be > 0")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")


@dataclass(frozen=True)
class ResultRow:
    task: str
    epsilon_per_feature: float
    total_epsilon: float
    repeat: int | str
    voted_accuracy: float
    window_accuracy: float
    chance: float

    def to_csv(self) -> str:
        return ",".join([
            self.task, repr(self.epsilon_per_feature), repr(self.total_epsilon), str(self.repeat),
            repr(self.voted_accuracy), repr(self.window_accuracy), repr(self.chance),
        ])


def chance_level(unit_labels: Sequence) -> float:
    """Accuracy of always guessing the most frequent evaluation-unit label."""
    labels = list(unit_labels)
    if not labels:
        raise ValueError("no evaluation units")
    return max(labels.count(v) for v in set(labels)) / len(labels)


def loocv_folds(participants: Sequence[str]) -> list[tuple[str, list[str]]]:
    return [(p, [q for q in participants if q != p]) for p in participants]


def reid_split(n_windows: int) -> tuple[np.ndarray, np.ndarray]:
    """First half of the window indices for training, the rest for testing."""
    half = n_windows // 2
    return np.arange(half), np.arange(half, n_windows)


@dataclass
class _Fold:
    train_X: np.ndarray
    train_y: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray
    test_units: list = field(default_factory=list)


def _stack(series: Sequence[FeatureSeries], label, unit) -> tuple[np.ndarray, np.ndarray, list]:
    X = np.concatenate([s.values for s in series], axis=0)
    y = np.concatenate([np.full(len(s), label(s), dtype=object) for s in series])
    units = [unit(s) for s in series for _ in range(len(s))]
    return X, y.astype(str), units


def _classify(fold: _Fold, cfg: ExperimentConfig, rng: np.random.Generator, binary: bool):
    """Balance, standardize, train, predict, vote. Returns (pred units, truth units, window acc)."""
    classes = sorted(set(fold.train_y.tolist()))
    idx = balance_classes(fold.train_y, rng, classes)
    scaler = fit_standardizer(fold.train_X[idx])
    X = apply_standardizer(scaler, fold.train_X[idx])
    trainer = train_svm if binary else train_multiclass
    model = trainer(X, fold.train_y[idx], cfg.C, cfg.gamma)
    pred = model.predict(apply_standardizer(scaler, fold.test_X))

    groups: dict = {}
    truth: dict = {}
    for u, p, t in zip(fold.test_units, pred, fold.test_y):
        groups.setdefault(u, []).append(p)
        truth[u] = t
    voted = majority_vote(groups, classes)
    units = list(groups)
    return [voted[u] for u in units], [truth[u] for u in units], int(np.sum(pred == fold.test_y))


def _check_participants(ds: FeatureDataset, need_docs: bool) -> list[str]:
    participants = ds.participants
    if len(participants) < 2:
        raise InsufficientParticipants(f"need >= 2 participants, got {len(participants)}")
    if need_docs:
        for p in participants:
            docs = {s.document for s in ds.series if s.participant_id == p}
            if docs != set(DOCUMENTS):
                raise MissingDocument(f"participant {p} lacks {sorted(set(DOCUMENTS) - docs)}")
    return participants


def _subsampled_clean(ds: FeatureDataset, w: int, seed: int) -> list[FeatureSeries]:
    # same streams sanitize_dataset uses for its subsampling step
    return [dp.subsample(s, w, dp.stream(seed, 0, k)) for k, s in enumerate(ds.series)]


_release_cache: list = []  # [(ds, eps, w, seed), release] for the most recent cell


def _noised_release(ds: FeatureDataset, eps: float, w: int, seed: int) -> FeatureDataset:
    if _release_cache:
        (c_ds, c_eps, c_w, c_seed), release = _release_cache
        if c_ds is ds and (c_eps, c_w, c_seed) == (eps, w, seed):
            return release
    release = dp.sanitize_dataset(ds, dp.SanitizerParams(eps, w), seed)[0]
    _release_cache[:] = [(ds, eps, w, seed), release]
    return release


def _loocv_task(ds, cfg, eps, cell_seed, task) -> tuple[float, float, float]:
    binary = task == "gender"
    label = (lambda s: s.gender) if binary else (lambda s: s.document)
    unit = (lambda s: s.participant_id) if binary else (lambda s: (s.participant_id, s.document))
    participants = _check_participants(ds, need_docs=not binary)
    if binary:
        for g in sorted({s.gender for s in ds.series}):
            if len({s.participant_id for s in ds.series if s.gender == g}) < 2:
                raise InsufficientParticipants(f"need >= 2 participants with gender {g}")
        if len({s.gender for s in ds.series}) < 2:
            raise MissingClass("gender task needs both genders")

    release_seed = dp.derive_seed(cell_seed, 0)
    rng = np.random.default_rng(dp.derive_seed(cell_seed, 1, TASKS.index(task)))
    if cfg.train_noised:
        release = _noised_release(ds, eps, cfg.w, release_seed)
    else:
        clean = _subsampled_clean(ds, cfg.w, release_seed)

    pred_units, true_units = [], []
    correct = total = 0
    for fold_no, (held, train_ids) in enumerate(loocv_folds(participants)):
        test_full = [s for s in ds.series if s.participant_id == held]
        if cfg.train_noised:
            train = [s for s in release.series if s.participant_id != held]
            test = [s for s in release.series if s.participant_id == held]
        else:
            train = [c for c, s in zip(clean, ds.series) if s.participant_id != held]
            ranges = dp.estimate_ranges(ds.with_series([s for s in ds.series if s.participant_id != held]))
            test = dp.sanitize_dataset(
                ds.with_series(test_full), dp.SanitizerParams(eps, cfg.w, ranges),
                dp.derive_seed(cell_seed, 2, fold_no), range_source="training",
            )[0].series
        Xtr, ytr, _ = _stack(train, label, unit)
        Xte, yte, units = _stack(test, label, unit)
        voted, truth, n_ok = _classify(_Fold(Xtr, ytr, Xte, yte, units), cfg, rng, binary)
        pred_units += voted
        true_units += truth
        correct += n_ok
        total += len(yte)
    return accuracy(pred_units, true_units), correct / total, chance_level(true_units)


def _reid_task(ds, cfg, eps, cell_seed) -> tuple[float, float, float]:
    _check_participants(ds, need_docs=False)
    first, second = [], []
    for s in ds.series:
        if len(s) < 2:
            raise InsufficientWindows(f"{s.participant_id}/{s.document} has {len(s)} window(s)")
        tr, te = reid_split(len(s))
        first.append(s.with_values(s.values[tr]))
        second.append(s.with_values(s.values[te]))
    release_seed = dp.derive_seed(cell_seed, 0)
    rng = np.random.default_rng(dp.derive_seed(cell_seed, 1, TASKS.index("reid")))
    train = _subsampled_clean(ds.with_series(first), cfg.w, release_seed)
    ranges = dp.estimate_ranges(ds.with_series(first))
    test = dp.sanitize_dataset(
        ds.with_series(second), dp.SanitizerParams(eps, cfg.w, ranges),
        dp.derive_seed(cell_seed, 3), range_source="training",
    )[0].series

    ident = lambda s: s.participant_id  # noqa: E731
    unit = lambda s: (s.participant_id, s.document)  # noqa: E731
    Xtr, ytr, _ = _stack(train, ident, unit)
    Xte, yte, units = _stack(test, ident, unit)
    voted, truth, n_ok = _classify(_Fold(Xtr, ytr, Xte, yte, units), cfg, rng, binary=False)
    return accuracy(voted, truth), n_ok / len(yte), chance_level(truth)


def run_cell(ds: FeatureDataset, cfg: ExperimentConfig, task: str, eps_idx: int, repeat: int) -> ResultRow:
    eps = float(cfg.epsilon_list[eps_idx])
    cell_seed = dp.derive_seed(cfg.seed, eps_idx, repeat)
    if task == "reid":
        voted, window, chance = _reid_task(ds, cfg, eps, cell_seed)
    else:
        voted, window, chance = _loocv_task(ds, cfg, eps, cell_seed, task)
    total = dp.compose([eps] * ds.catalogue.m)
    log.info("%s eps=%g repeat=%d voted=%.3f window=%.3f chance=%.3f",
             task, eps, repeat, voted, window, chance)
    return ResultRow(task, eps, total, repeat, voted, window, chance)


def _run(ds: FeatureDataset, cfg: ExperimentConfig, tasks: Sequence[str]) -> list[ResultRow]:
    cfg.validate()
    cells = [(t, e, r) for e in range(len(cfg.epsilon_list)) for r in range(cfg.repeats) for t in tasks]
    if cfg.jobs == 1 or len(cells) == 1:
        rows = [run_cell(ds, cfg, *c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker, initargs=(ds, cfg)) as pool:
            rows = list(pool.map(_worker_cell, cells))
    order = {t: n for n, t in enumerate(tasks)}
    return sorted(rows, key=lambda r: (order[r.task], cfg.epsilon_list.index(r.epsilon_per_feature), r.repeat))


_worker_state: tuple | None = None


def _init_worker(ds, cfg):
    global _worker_state
    _worker_state = (ds, cfg)


def _worker_cell(cell):
    ds, cfg = _worker_state
    return run_cell(ds, cfg, *cell)


def run_gender(ds: FeatureDataset, cfg: ExperimentConfig) -> list[ResultRow]:
    return _run(ds, cfg, ["gender"])


def run_document(ds: FeatureDataset, cfg: ExperimentConfig) -> list[ResultRow]:
    return _run(ds, cfg, ["document"])


def run_reid(ds: FeatureDataset, cfg: ExperimentConfig) -> list[ResultRow]:
    return _run(ds, cfg, ["reid"])


def mean_rows(rows: Sequence[ResultRow]) -> list[ResultRow]:
    """One ``repeat=mean`` row per (task, epsilon), in first-seen order."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.task, r.epsilon_per_feature), []).append(r)
    out = []
    for (task, eps), rs in groups.items():
        n = len(rs)
        out.append(ResultRow(
            task, eps, rs[0].total_epsilon, "mean",
            math.fsum(r.voted_accuracy for r in rs) / n,
            math.fsum(r.window_accuracy for r in rs) / n,
            math.fsum(r.chance for r in rs) / n,
        ))
    return out


def format_results(rows: Sequence[ResultRow]) -> str:
    lines = [RESULTS_HEADER] + [r.to_csv() for r in rows] + [r.to_csv() for r in mean_rows(rows)]
    return "\n".join(lines) + "\n"


def parse_results(text: str) -> list[ResultRow]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != RESULTS_HEADER:
        raise ValueError("not a results.csv file")
    out = []
    for line in lines[1:]:
        task, eps, total, rep, voted, window, chance = line.split(",")
        out.append(ResultRow(task, float(eps), float(total), rep if rep == "mean" else int(rep),
                             float(voted), float(window), float(chance)))
    return out


def atomic_write(path: str | Path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sweep(ds: FeatureDataset, cfg: ExperimentConfig, out: str | Path | None = None) -> list[ResultRow]:
    """Run every configured task over epsilon_list x repeats; optionally write results.csv."""
    rows = _run(ds, cfg, list(cfg.tasks))
    if out is not None:
        atomic_write(out, format_results(rows))
    return rows
