"""Batch command-line interface for the full experiment lifecycle.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure. Relative input
paths resolve against $PAIRSENSE_DATA_DIR when it is set. Reports contain no
timestamps, so a fixed seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datamodel, evaluation
from .errors import DataError, NumericError
from .fusionmodels import FusionSpec
from .pipeline import TrainedPipeline, fit_pipeline
from .trainer import TrainConfig

CONFIG_SCHEMA_VERSION = 1
DATA_DIR_ENV = "PAIRSENSE_DATA_DIR"


def resolve_path(p: str | Path) -> Path:
    p = Path(p)
    if p.is_absolute() or p.exists():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    return Path(base) / p if base else p


def load_config(path: Path) -> dict:
    path = resolve_path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    version = cfg.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise DataError(f"config schema_version {version!r} unsupported (expected {CONFIG_SCHEMA_VERSION})")
    if "model" not in cfg:
        raise DataError("config is missing the 'model' section")
    return cfg


def config_to_run(cfg: dict, args) -> tuple[FusionSpec, TrainConfig, Path, int]:
    """Merge config with CLI flag overrides -> (spec, train config, corpus, folds)."""
    spec = FusionSpec.from_dict(cfg["model"])
    train_section = dict(cfg.get("train", {}))
    train_section.setdefault("regime", cfg.get("regime", "fusion"))
    if getattr(args, "seed", None) is not None:
        train_section["seed"] = args.seed
    else:
        train_section.setdefault("seed", cfg.get("seed", 0))
    tcfg = TrainConfig.from_dict(train_section)
    corpus_path = getattr(args, "corpus", None) or cfg.get("corpus")
    if not corpus_path:
        raise DataError("no corpus given (config 'corpus' or --corpus)")
    folds = getattr(args, "folds", None) or cfg.get("folds", 5)
    return spec, tcfg, resolve_path(corpus_path), int(folds)


def _read_lines(path: Path) -> list[str]:
    path = resolve_path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    mix = tuple(float(v) for v in args.class_mix.split(","))
    corpus = datamodel.synth_corpus(
        seed=args.seed, n_pairs=args.pairs, class_mix=mix, separability=args.separability,
        utterances_per_pair=args.utterances_per_pair,
        audio_set=args.audio_set, video_set=args.video_set,
        audio_len=_parse_range(args.audio_len), video_len=_parse_range(args.video_len),
        profile=args.profile,
    )
    manifest = datamodel.make_manifest(args.audio_set, args.video_set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    datamodel.save_corpus(corpus, out, manifest)
    print(f"wrote {len(corpus)} records to {out}")
    return 0


def _parse_range(text: str) -> tuple[int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) != 2 or parts[0] > parts[1] or parts[0] < 0:
        raise DataError(f"bad length range {text!r}; use MIN,MAX")
    return parts[0], parts[1]


def cmd_train(args) -> int:
    cfg = load_config(Path(args.config))
    spec, tcfg, corpus_path, _ = config_to_run(cfg, args)
    corpus = datamodel.load_corpus(corpus_path)
    pipe = fit_pipeline(corpus, spec, tcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pipe.save(out)
    for name, hist in sorted(pipe.histories.items()):
        hist.write_csv(out.parent / f"{out.name}.{name.replace(':', '_').replace('/', '_')}.history.csv")
    print(f"saved model to {out.with_suffix('.ckpt')}")
    return 0


def cmd_evaluate(args) -> int:
    pipe = TrainedPipeline.load(resolve_path(args.model))
    corpus = datamodel.load_corpus(resolve_path(args.corpus))
    report = evaluation.metrics(corpus.labels(), pipe.predict_labels(corpus))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "report.txt", report.to_text())
    _write(out_dir / "report.csv", evaluation.reports_to_csv([("evaluate", report)]))
    _write(out_dir / "confusion.csv", evaluation.confusion_to_csv(report.confusion))
    sys.stdout.write(report.to_text())
    return 0


def cmd_crossval(args) -> int:
    cfg = load_config(Path(args.config))
    spec, tcfg, corpus_path, k = config_to_run(cfg, args)
    corpus = datamodel.load_corpus(corpus_path)
    plan = evaluation.plan_folds(corpus.pair_ids(), k, tcfg.seed)
    result = evaluation.cross_validate(corpus, spec, tcfg, plan, jobs=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    named = [(f"fold{i}", r) for i, r in enumerate(result.per_fold)]
    named.append(("pooled", result.pooled))
    _write(out_dir / "reports.csv", evaluation.reports_to_csv(named))
    _write(out_dir / "pooled_report.txt", result.pooled.to_text())
    _write(out_dir / "pooled_confusion.csv", evaluation.confusion_to_csv(result.pooled.confusion))
    summary = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "name": cfg.get("name", spec.method),
        "model": spec.to_dict(),
        "train_config": tcfg.to_dict(),
        "folds": k,
        "result": result.to_dict(),
    }
    _write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"pooled macro-F1 {result.pooled.macro_f1:.4f}, accuracy {result.pooled.accuracy:.4f} "
          f"(fold accuracy {result.accuracy_mean:.4f} +/- {result.accuracy_sd:.4f})")
    return 0


def cmd_wer(args) -> int:
    refs = _read_lines(Path(args.ref))
    hyps = _read_lines(Path(args.hyp))
    if len(refs) != len(hyps):
        raise DataError(f"ref has {len(refs)} lines, hyp has {len(hyps)}")
    totals = np.zeros(4, dtype=np.int64)
    rates = []
    for ref_line, hyp_line in zip(refs, hyps):
        counts, rate = evaluation.wer_of_texts(ref_line, hyp_line)
        totals += (counts.s, counts.d, counts.i, counts.n)
        rates.append(rate)
    s, d, i, n = (int(v) for v in totals)
    print(f"S={s} D={d} I={i} N={n}")
    print(f"WER={(s + d + i) / n:.4f}")
    if len(rates) > 1:
        print(f"per-line mean={np.mean(rates):.4f} sd={np.std(rates):.4f} "
              f"min={min(rates):.4f} max={max(rates):.4f}")
    return 0


def cmd_kappa(args) -> int:
    a = [line for line in _read_lines(Path(args.a)) if line != ""]
    b = [line for line in _read_lines(Path(args.b)) if line != ""]
    print(f"kappa={evaluation.cohens_kappa(a, b):.4f}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.results:
        path = resolve_path(path)
        summary_path = path / "summary.json" if path.is_dir() else path
        if not summary_path.exists():
            raise DataError(f"no summary.json at {path}")
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        rep = evaluation.EvalReport.from_dict(summary["result"]["pooled"])
        rows.append((summary.get("name", summary_path.parent.name), rep))
    csv_text = evaluation.reports_to_csv(rows)
    if args.out:
        _write(Path(args.out), csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairsense",
                                description="Multimodal confusion/conflict detection experiments")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic feature file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--pairs", type=int, default=19)
    sp.add_argument("--utterances-per-pair", type=int, default=50)
    sp.add_argument("--class-mix", default="0.047,0.093,0.860")
    sp.add_argument("--separability", type=float, default=3.0)
    sp.add_argument("--profile", choices=("shared", "complementary"), default="shared")
    sp.add_argument("--audio-set", default="pitch")
    sp.add_argument("--video-set", default="facial_aus")
    sp.add_argument("--audio-len", default="8,8")
    sp.add_argument("--video-len", default="6,6")
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train one model on a corpus")
    tp.add_argument("--config", required=True)
    tp.add_argument("--corpus")
    tp.add_argument("--seed", type=int)
    tp.add_argument("--out", required=True, help="checkpoint path prefix")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("evaluate", help="evaluate a trained model on a labeled corpus")
    ep.add_argument("--model", required=True, help="checkpoint path prefix")
    ep.add_argument("--corpus", required=True)
    ep.add_argument("--out-dir", default="eval_out")
    ep.set_defaults(func=cmd_evaluate)

    cp = sub.add_parser("crossval", help="subject-independent cross-validation")
    cp.add_argument("--config", required=True)
    cp.add_argument("--corpus")
    cp.add_argument("--seed", type=int)
    cp.add_argument("--folds", type=int)
    cp.add_argument("--jobs", type=int, default=1)
    cp.add_argument("--out-dir", default="crossval_out")
    cp.set_defaults(func=cmd_crossval)

    wp = sub.add_parser("wer", help="word error rate between paired line files")
    wp.add_argument("--ref", required=True)
    wp.add_argument("--hyp", required=True)
    wp.set_defaults(func=cmd_wer)

    kp = sub.add_parser("kappa", help="Cohen's kappa between two label files")
    kp.add_argument("--a", required=True)
    kp.add_argument("--b", required=True)
    kp.set_defaults(func=cmd_kappa)

    rp = sub.add_parser("report", help="combine stored crossval results into one CSV")
    rp.add_argument("results", nargs="+", help="summary.json files or their directories")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
