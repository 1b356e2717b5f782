"""Command-line entry point: ``dpgaze {extract,sanitize,synth,evaluate}``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.

Every flag can also be given in a plain-text config file (``--config``) as
``key = value`` lines; ``#`` starts a comment. Flags override the file.
Recognised keys::

    seed, jobs
    detection.dispersion, detection.min_fixation, detection.blink_confidence, detection.min_blink
    features.window, features.step
    sanitizer.epsilon, sanitizer.w
    svm.C, svm.gamma
    experiment.tasks, experiment.epsilons, experiment.repeats, experiment.train_noised
    synth.n, synth.T, synth.m, synth.s_gender, synth.s_identity, synth.s_document
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import dp, experiments, features, ingest, synth
from .errors import ConfigError, DpGazeError

log = logging.getLogger("dpgaze")


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"must be > 0 and finite, got {text}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(_positive_float(t) for t in text.split(",") if t.strip())


def _task_list(text: str) -> tuple[str, ...]:
    tasks = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in tasks if t not in experiments.TASKS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown task(s) {bad}; choose from {experiments.TASKS}")
    return tasks


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    dispersion: float = ingest.DetectionConfig.dispersion
    min_fixation: float = ingest.DetectionConfig.min_fixation
    blink_confidence: float = ingest.DetectionConfig.blink_confidence
    min_blink: float = ingest.DetectionConfig.min_blink
    window: float = features.DEFAULT_WINDOW
    step: float = features.DEFAULT_STEP
    epsilon: float = 15.0
    w: int = 10
    C: float = 1.0
    gamma: float | None = None
    tasks: tuple[str, ...] = experiments.TASKS
    epsilons: tuple[float, ...] = experiments.DEFAULT_EPSILONS
    repeats: int = 5
    train_noised: bool = True
    n: int = synth.SynthSpec.n
    T: int = synth.SynthSpec.T
    m: int = synth.SynthSpec.m
    s_gender: float = synth.SynthSpec.s_gender
    s_identity: float = synth.SynthSpec.s_identity
    s_document: float = synth.SynthSpec.s_document


# config key -> (RunConfig field, parser)
CONFIG_KEYS = {
    "seed": ("seed", int),
    "jobs": ("jobs", _positive_int),
    "detection.dispersion": ("dispersion", _positive_float),
    "detection.min_fixation": ("min_fixation", _positive_float),
    "detection.blink_confidence": ("blink_confidence", _nonneg_float),
    "detection.min_blink": ("min_blink", _positive_float),
    "features.window": ("window", _positive_float),
    "features.step": ("step", _positive_float),
    "sanitizer.epsilon": ("epsilon", _positive_float),
    "sanitizer.w": ("w", _positive_int),
    "svm.C": ("C", _positive_float),
    "svm.gamma": ("gamma", _positive_float),
    "experiment.tasks": ("tasks", _task_list),
    "experiment.epsilons": ("epsilons", _float_list),
    "experiment.repeats": ("repeats", _positive_int),
    "experiment.train_noised": ("train_noised", _bool),
    "synth.n": ("n", _positive_int),
    "synth.T": ("T", _positive_int),
    "synth.m": ("m", _positive_int),
    "synth.s_gender": ("s_gender", _nonneg_float),
    "synth.s_identity": ("s_identity", _nonneg_float),
    "synth.s_document": ("s_document", _nonneg_float),
}


def load_config(path: str | Path) -> dict:
    """Parse a config file into RunConfig field overrides; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        name, parse = CONFIG_KEYS[key]
        try:
            out[name] = parse(value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def _require_files(paths) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")


def _require_out_dir(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")


def cmd_extract(args) -> int:
    cfg = resolve(args)
    _require_files(args.gaze)
    _require_out_dir(args.out)
    det = ingest.DetectionConfig(cfg.dispersion, cfg.min_fixation, cfg.blink_confidence, cfg.min_blink)
    cat = features.default_catalogue()
    series = []
    for path in args.gaze:
        rec = ingest.read_gaze_csv(path)
        ev = ingest.detect_events(rec, det)
        s = features.extract_features(ev, cfg.window, cfg.step, cat, participant_id=rec.participant_id,
                                      document=rec.document, gender=rec.gender)
        print(f"{path}: {len(s)} windows")
        series.append(s)
    ds = features.FeatureDataset(cat, series)
    experiments.atomic_write(args.out, features.format_feature_csv(ds))
    print(f"m = {cat.m} features")
    return 0


def cmd_sanitize(args) -> int:
    cfg = resolve(args)
    _require_files([args.features])
    _require_out_dir(args.out)
    receipt_path = args.receipt or f"{args.out}.receipt"
    _require_out_dir(receipt_path)
    ds = features.read_feature_csv(args.features)
    san, receipt = dp.sanitize_dataset(ds, dp.SanitizerParams(cfg.epsilon, cfg.w), cfg.seed)
    experiments.atomic_write(args.out, features.format_feature_csv(san))
    experiments.atomic_write(receipt_path, receipt.to_text())
    print(f"epsilon per feature = {cfg.epsilon!r}, m = {ds.catalogue.m}, total epsilon = {receipt.total_epsilon!r}")
    if receipt.constant_features:
        print(f"constant features passed through: {', '.join(receipt.constant_features)}")
    return 0


def cmd_synth(args) -> int:
    cfg = resolve(args)
    _require_out_dir(args.out)
    spec = synth.SynthSpec(n=cfg.n, T=cfg.T, m=cfg.m, s_gender=cfg.s_gender, s_identity=cfg.s_identity,
                           s_document=cfg.s_document, seed=cfg.seed)
    ds = synth.generate(spec)
    experiments.atomic_write(args.out, features.format_feature_csv(ds))
    print(f"{len(ds.series)} series, {cfg.n} participants, m = {cfg.m}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve(args)
    _require_files([args.features])
    _require_out_dir(args.out)
    exp = experiments.ExperimentConfig(
        tasks=cfg.tasks, train_noised=cfg.train_noised, epsilon_list=cfg.epsilons, w=cfg.w,
        repeats=cfg.repeats, seed=cfg.seed, C=cfg.C, gamma=cfg.gamma, jobs=cfg.jobs,
    )
    exp.validate()
    ds = features.read_feature_csv(args.features)
    rows = experiments.sweep(ds, exp, args.out)
    for task in exp.tasks:
        chance = next(r.chance for r in rows if r.task == task)
        print(f"{task}: chance level {chance:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpgaze", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="plain-text key = value config file")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("extract", help="gaze CSVs -> feature CSV")
    common(p)
    p.add_argument("gaze", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=_positive_float)
    p.add_argument("--step", type=_positive_float)
    p.add_argument("--dispersion", type=_positive_float)
    p.add_argument("--min-fixation", dest="min_fixation", type=_positive_float)
    p.add_argument("--blink-confidence", dest="blink_confidence", type=_nonneg_float)
    p.add_argument("--min-blink", dest="min_blink", type=_positive_float)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("sanitize", help="feature CSV -> sanitized feature CSV + receipt")
    common(p)
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--receipt", help="receipt path (default: OUT.receipt)")
    p.add_argument("--epsilon", type=_positive_float, help="per-feature epsilon")
    p.add_argument("--w", type=_positive_int, help="subsampling window")
    p.set_defaults(func=cmd_sanitize)

    p = sub.add_parser("synth", help="write a synthetic feature CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--T", type=_positive_int)
    p.add_argument("--m", type=_positive_int)
    p.add_argument("--s-gender", dest="s_gender", type=_nonneg_float)
    p.add_argument("--s-identity", dest="s_identity", type=_nonneg_float)
    p.add_argument("--s-document", dest="s_document", type=_nonneg_float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="run the epsilon sweep and write results.csv")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--out", default="results.csv")
    p.add_argument("--tasks", type=_task_list)
    p.add_argument("--epsilons", type=_float_list)
    p.add_argument("--repeats", type=_positive_int)
    p.add_argument("--w", type=_positive_int)
    p.add_argument("--C", type=_positive_float)
    p.add_argument("--gamma", type=_positive_float)
    p.add_argument("--jobs", type=_positive_int)
    regime = p.add_mutually_exclusive_group()
    regime.add_argument("--noised-train", dest="train_noised", action="store_const", const=True)
    regime.add_argument("--clean-train", dest="train_noised", action="store_const", const=False)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DpGazeError, OSError, ValueError) as exc:
        print(f"dpgaze {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"dpgaze {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
