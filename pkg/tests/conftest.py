import numpy as np
import pytest

from dpgaze.ingest import GazeRecording


def gaze_recording(segments, rate=100.0, t0=0.0, pupil=40.0, participant="P01",
                   document="comic", gender="female"):
    """Build a recording from (n_samples, x, y, confidence) segments sampled at ``rate``."""
    xs, ys, cs = [], [], []
    for n, x, y, c in segments:
        xs += [x] * n
        ys += [y] * n
        cs += [c] * n
    n = len(xs)
    t = t0 + np.arange(n) / rate
    return GazeRecording(participant, document, gender, t, np.array(xs, float), np.array(ys, float),
                         np.full(n, pupil), np.array(cs, float))


def reading_recording(seconds, rng, rate=50.0, participant="P01", document="comic", gender="female"):
    """Fixation/saccade/blink stream loosely shaped like reading: 0.2-0.4 s fixations,
    left-to-right steps with occasional line returns, sparse blinks."""
    t, x, y, pupil, conf = [], [], [], [], []
    px, py, now = 0.1, 0.1, 0.0
    n_total = int(seconds * rate) + 1
    while len(t) < n_total:
        dur = int(rng.uniform(0.2, 0.4) * rate)
        for _ in range(dur):
            t.append(len(t) / rate)
            x.append(px + rng.normal(0, 0.002))
            y.append(py + rng.normal(0, 0.002))
            pupil.append(rng.normal(45, 2))
            conf.append(1.0)
        if rng.random() < 0.05:
            for _ in range(int(0.15 * rate)):
                t.append(len(t) / rate)
                x.append(px)
                y.append(py)
                pupil.append(0.0)
                conf.append(0.0)
        if px > 0.85:
            px, py = 0.1, (py + 0.08) % 0.9
        else:
            px += rng.uniform(0.08, 0.15)
        t.append(len(t) / rate)
        x.append(px - 0.04)
        y.append(py)
        pupil.append(rng.normal(45, 2))
        conf.append(1.0)
    k = n_total
    arr = lambda v: np.asarray(v[:k], float)  # noqa: E731
    return GazeRecording(participant, document, gender, arr(t), arr(x), arr(y), arr(pupil), arr(conf))


def qp_oracle(K, y, C):
    """Maximize sum(a) - a'Qa/2 over the SVM dual polytope with a general-purpose SLSQP solver."""
    from scipy.optimize import minimize

    Q = (y[:, None] * y[None, :]) * K
    res = minimize(
        lambda a: 0.5 * a @ Q @ a - a.sum(),
        np.zeros(len(y)),
        jac=lambda a: Q @ a - 1.0,
        bounds=[(0.0, C)] * len(y),
        constraints=[{"type": "eq", "fun": lambda a: y @ a, "jac": lambda a: y}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 2000},
    )
    # status 8 is SLSQP stalling at the tolerance floor; accept it only when the point is certified optimal
    assert res.success or kkt_gap(np.clip(res.x, 0.0, C), y, K, C) < 1e-4, res.message
    return res.x, dual_objective(res.x, y, K)


def dual_objective(alpha, y, K):
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def kkt_gap(alpha, y, K, C):
    """max over I_up of -y*G minus min over I_low of -y*G, G = Qa - 1."""
    G = y * (K @ (alpha * y)) - 1.0
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    return float(np.max(-y[up] * G[up]) - np.min(-y[low] * G[low]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class ForcedY:
    """Generator stand-in whose exponential draws always return ``y``."""

    def __init__(self, y=1.0, seed=0):
        self.y = y
        self._rng = np.random.default_rng(seed)

    def exponential(self, scale=1.0, size=None):
        return self.y

    def integers(self, *args, **kwargs):
        return self._rng.integers(*args, **kwargs)


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
