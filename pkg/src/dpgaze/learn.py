"""Standardization, class balancing, RBF-SVM (SMO), voting and accuracy."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numba
import numpy as np

from .errors import (
    EmptyGroup,
    EmptyMatrix,
    IterationLimit,
    LengthMismatch,
    MissingClass,
    SingleClassInput,
)

KKT_TOL = 1e-3
MAX_ITER = 100_000
_TAU = 1e-12


@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray


def fit_standardizer(X: np.ndarray) -> StandardizationParams:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyMatrix("cannot fit a standardizer on an empty matrix")
    return StandardizationParams(X.mean(axis=0), X.std(axis=0))


def apply_standardizer(params: StandardizationParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    scale = np.where(params.std > 0, params.std, 1.0)
    out = (X - params.mean) / scale
    out[:, params.std == 0] = 0.0
    return out


def balance_classes(labels: Sequence, rng: np.random.Generator, classes: Sequence | None = None) -> np.ndarray:
    """Indices that downsample every class to the minority-class count.

    ``classes`` lists the classes that must be present; by default every label
    seen. Returned indices are sorted.
    """
    labels = np.asarray(labels)
    present = list(np.unique(labels))
    wanted = sorted(classes) if classes is not None else present
    missing = [c for c in wanted if c not in present]
    if missing or not wanted:
        raise MissingClass(f"class(es) {missing} absent from training labels")
    pools = [np.flatnonzero(labels == c) for c in wanted]
    n = min(len(p) for p in pools)
    chosen = [rng.choice(p, size=n, replace=False) for p in pools]
    return np.sort(np.concatenate(chosen))


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = A @ B.T
    sq *= -2.0
    sq += (A * A).sum(axis=1)[:, None]
    sq += (B * B).sum(axis=1)[None, :]
    np.maximum(sq, 0.0, out=sq)
    sq *= -gamma
    return np.exp(sq, out=sq)


def default_gamma(X: np.ndarray) -> float:
    """1 / (m * mean per-feature variance); 1.0 when the data is constant."""
    v = float(np.asarray(X).var(axis=0).mean())
    return 1.0 / (X.shape[1] * v) if v > 0 else 1.0


@numba.njit(cache=True)
def _smo(K, rows, y, C, tol, max_iter):
    # K[rows[a], rows[b]] is the kernel between training points a and b
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    gap = np.inf
    it = 0
    while it < max_iter:
        # maximal violating pair
        gmax = -np.inf
        gmax2 = -np.inf
        i = -1
        j = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -G[t] > gmax:
                    gmax = -G[t]
                    i = t
                if alpha[t] > 0 and G[t] > gmax2:
                    gmax2 = G[t]
                    j = t
            else:
                if alpha[t] > 0 and G[t] > gmax:
                    gmax = G[t]
                    i = t
                if alpha[t] < C and -G[t] > gmax2:
                    gmax2 = -G[t]
                    j = t
        gap = gmax + gmax2
        if gap < tol or i < 0 or j < 0:
            break
        it += 1

        ri = rows[i]
        rj = rows[j]
        kij = K[ri, rj]
        old_ai = alpha[i]
        old_aj = alpha[j]
        if y[i] != y[j]:
            quad = K[ri, ri] + K[rj, rj] + 2.0 * kij
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[ri, ri] + K[rj, rj] - 2.0 * kij
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        yi = y[i]
        yj = y[j]
        for t in range(n):
            rt = rows[t]
            G[t] += y[t] * (yi * K[ri, rt] * dai + yj * K[rj, rt] * daj)

    # bias: average y*G over free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    sum_free = 0.0
    n_free = 0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            sum_free += yg
    rho = sum_free / n_free if n_free > 0 else (ub + lb) / 2.0
    return alpha, -rho, it, gap


@dataclass
class SvmModel:
    """Binary RBF-SVM; ``classes[0]`` is the +1 side of the decision function."""

    classes: tuple
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for the support vectors
    bias: float
    gamma: float
    C: float
    alpha: np.ndarray  # full dual vector over the training rows
    y: np.ndarray  # +/-1 training targets
    support: np.ndarray  # training-row indices of the support vectors
    n_iter: int = 0
    kkt_gap: float = 0.0

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return rbf_kernel(np.asarray(X, dtype=float), self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        f = self.decision_function(X)
        return np.where(f >= 0, self.classes[0], self.classes[1])

    def dump(self) -> str:
        lines = [f"gamma={self.gamma!r}", f"C={self.C!r}", f"bias={self.bias!r}",
                 f"classes={','.join(map(str, self.classes))}"]
        for coef, sv in zip(self.dual_coef, self.support_vectors):
            lines.append(f"{coef!r} " + " ".join(repr(float(v)) for v in sv))
        return "\n".join(lines) + "\n"


def _solve(K: np.ndarray, rows: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    alpha, bias, n_iter, gap = _smo(np.ascontiguousarray(K), rows.astype(np.int64), y,
                                    float(C), float(tol), int(max_iter))
    if n_iter >= max_iter and gap >= tol:
        raise IterationLimit(f"SMO did not reach KKT gap {tol} within {max_iter} iterations (gap {gap:.3g})")
    return alpha, bias, n_iter, gap


def train_svm(
    X: np.ndarray,
    y: Sequence,
    C: float = 1.0,
    gamma: float | None = None,
    *,
    tol: float = KKT_TOL,
    max_iter: int = MAX_ITER,
    kernel: np.ndarray | None = None,
    rows: np.ndarray | None = None,
) -> SvmModel:
    """Soft-margin dual solved by SMO with maximal-violating-pair selection.

    ``kernel`` may pass a precomputed Gram matrix under ``gamma``; ``rows``
    then maps each row of ``X`` to its row/column in ``kernel`` (identity by
    default), so one-vs-one machines can share a single Gram matrix.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(y)
    classes = tuple(np.unique(labels).tolist())
    if len(classes) < 2:
        raise SingleClassInput("binary SVM needs two classes")
    if len(classes) > 2:
        raise ValueError(f"binary SVM got {len(classes)} classes; use train_multiclass")
    if gamma is None:
        gamma = default_gamma(X)
    K = rbf_kernel(X, X, gamma) if kernel is None else kernel
    if rows is None:
        rows = np.arange(len(X))
    target = np.where(labels == classes[0], 1.0, -1.0)
    alpha, bias, n_iter, gap = _solve(K, rows, target, C, tol, max_iter)
    support = np.flatnonzero(alpha > 0)
    return SvmModel(
        classes=classes,
        support_vectors=X[support],
        dual_coef=alpha[support] * target[support],
        bias=float(bias),
        gamma=float(gamma),
        C=float(C),
        alpha=alpha,
        y=target,
        support=support,
        n_iter=int(n_iter),
        kkt_gap=float(gap),
    )


@dataclass
class MulticlassSvm:
    """One-vs-one ensemble; ``machines[(a, b)]`` votes for ``a`` when f >= 0."""

    classes: tuple
    gamma: float
    machines: dict

    def decision_matrix(self, X: np.ndarray) -> dict:
        X = np.asarray(X, dtype=float)
        pool = np.concatenate([m.support_vectors for m in self.machines.values()], axis=0)
        Kx = rbf_kernel(X, pool, self.gamma)
        out, col = {}, 0
        for pair, m in self.machines.items():
            n_sv = len(m.dual_coef)
            out[pair] = Kx[:, col:col + n_sv] @ m.dual_coef + m.bias
            col += n_sv
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        k = len(self.classes)
        X = np.asarray(X, dtype=float)
        votes = np.zeros((X.shape[0], k))
        score = np.zeros((X.shape[0], k))
        index = {c: n for n, c in enumerate(self.classes)}
        for (a, b), f in self.decision_matrix(X).items():
            ia, ib = index[a], index[b]
            win_a = f >= 0
            votes[:, ia] += win_a
            votes[:, ib] += ~win_a
            score[:, ia] += f
            score[:, ib] -= f
        # most votes, then largest summed decision value, then smallest class index
        best = np.empty(X.shape[0], dtype=int)
        for r in range(X.shape[0]):
            order = np.lexsort((np.arange(k), -score[r], -votes[r]))
            best[r] = order[0]
        return np.asarray(self.classes)[best]


def train_multiclass(
    X: np.ndarray,
    y: Sequence,
    C: float = 1.0,
    gamma: float | None = None,
    *,
    tol: float = KKT_TOL,
    max_iter: int = MAX_ITER,
) -> MulticlassSvm:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(y)
    classes = tuple(np.unique(labels).tolist())
    if len(classes) < 2:
        raise SingleClassInput("classifier needs at least two classes")
    if gamma is None:
        gamma = default_gamma(X)
    K = rbf_kernel(X, X, gamma)
    machines = {}
    for a, b in itertools.combinations(classes, 2):
        idx = np.flatnonzero((labels == a) | (labels == b))
        machines[(a, b)] = train_svm(
            X[idx], labels[idx], C, gamma, tol=tol, max_iter=max_iter, kernel=K, rows=idx
        )
    return MulticlassSvm(classes, float(gamma), machines)


def predict(model: SvmModel | MulticlassSvm, X: np.ndarray) -> np.ndarray:
    return model.predict(X)


def majority_vote(groups: Mapping[Hashable, Sequence], labels: Sequence | None = None) -> dict:
    """Modal label per group; ties go to the label that sorts first in ``labels``.

    ``labels`` defaults to the sorted set of all predicted labels.
    """
    order = list(labels) if labels is not None else sorted({v for g in groups.values() for v in g})
    rank = {lab: n for n, lab in enumerate(order)}
    result = {}
    for key, preds in groups.items():
        if len(preds) == 0:
            raise EmptyGroup(f"group {key!r} has no predictions")
        counts = Counter(preds)
        result[key] = min(counts, key=lambda lab: (-counts[lab], rank[lab]))
    return result


def accuracy(pred: Sequence, truth: Sequence) -> float:
    """Fraction of exact matches; (TP+TN)/(TP+FP+TN+FN) in the binary case."""
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth) or not pred:
        raise LengthMismatch(f"got {len(pred)} predictions for {len(truth)} labels")
    return sum(p == t for p, t in zip(pred, truth)) / len(pred)
