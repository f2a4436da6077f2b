"""Command line interface: ``idiomdet {synth,stats,train,predict,evaluate,ablate}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import corpus
from .encoder import CheckpointError, EncoderConfig, load_checkpoint, save_checkpoint
from .metrics import evaluate
from .postprocess import apply_overrides, build_override_table, read_submission, save_override_table
from .preprocess import BuildPolicy
from .tokenizer import MarkerError, WordTokenizer, build_vocab, load_tokenizer
from .training import (
    TrainConfig,
    TrainingDivergedError,
    coerce_fields,
    ensemble_predict,
    parse_key_values,
    train,
    write_history,
)

log = logging.getLogger("idiomdet")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
INVALID_ERRORS = (corpus.SchemaError, corpus.ValidationError, CheckpointError, MarkerError, KeyError, ValueError)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def load_run_config(path: Optional[str]) -> tuple[TrainConfig, dict, BuildPolicy, dict]:
    """Split one flat key=value file into training, encoder and policy settings.

    Keys not belonging to any of the three (currently only ``setting``) are
    returned in the last dict.
    """
    values = parse_key_values(Path(path).read_text(encoding="utf-8")) if path else {}
    groups = {}
    for name, cls in (("train", TrainConfig), ("encoder", EncoderConfig), ("policy", BuildPolicy)):
        names = {f.name for f in dataclasses.fields(cls)} - {"vocab_size"}
        groups[name] = coerce_fields(cls, {k: v for k, v in values.items() if k in names})
    used = set().union(*groups.values())
    rest = {k: v for k, v in values.items() if k not in used}
    unknown = set(rest) - {"setting"}
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return TrainConfig(**groups["train"]), groups["encoder"], BuildPolicy(**groups["policy"]), rest


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    d = corpus.generate_synthetic_corpus(args.n, args.cue_strength, args.seed)
    s = corpus.synthetic_splits(d)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (
        ("zero_shot_train", s.zero_train),
        ("zero_shot_dev", s.zero_dev),
        ("one_shot_train", s.one_shot_train),
        ("one_shot_dev", s.one_dev),
    ):
        _write_atomic(out / f"{name}.csv", corpus.dumps_dataset(part))
    print(f"wrote {len(d)} rows to {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    d = corpus.load_dataset(args.data, expect_labels=False)
    if args.tokenizer == "builtin":
        tok = WordTokenizer(build_vocab(d))
    else:
        tok = load_tokenizer(args.tokenizer)
    st = corpus.length_statistics(d, tok)
    by_lang = {lang: sum(1 for i in d if i.language == lang) for lang in corpus.LANGUAGES}
    by_setting = {s: sum(1 for i in d if i.setting == s) for s in corpus.SETTINGS}
    print(f"rows: {len(d)}  tokenizer: {args.tokenizer}")
    print("per language: " + "  ".join(f"{k}={v}" for k, v in by_lang.items()))
    print("per setting:  " + "  ".join(f"{k}={v}" for k, v in by_setting.items()))
    one = [i for i in d if i.setting == "one_shot"]
    if one:
        print("one_shot per language: " + "  ".join(
            f"{lang}={sum(1 for i in one if i.language == lang)}" for lang in corpus.LANGUAGES))
    print(f"{'':18}{'mean':>9}{'median':>9}{'max':>7}{'p90':>7}")
    print(f"{'target length':18}{st.mean:>9.2f}{st.median:>9.1f}{st.max:>7}{st.p90:>7}")
    print(f"{'mwe position':18}{st.mwe_position_mean:>9.2f}{st.mwe_position_median:>9.1f}"
          f"{st.mwe_position_max:>7}{st.mwe_position_p90:>7}  (found in {st.mwe_found}/{st.count})")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    cfg, enc_kwargs, policy, rest = load_run_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    setting = args.setting or rest.get("setting") or ("one_shot" if args.init_checkpoint else "zero_shot")
    train_data = corpus.load_dataset(args.train)
    dev_data = corpus.load_dataset(args.dev)
    init = load_checkpoint(args.init_checkpoint) if args.init_checkpoint else None
    enc = EncoderConfig(vocab_size=1, **enc_kwargs)
    result = train(train_data, dev_data, cfg, enc, policy, setting=setting, init=init)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "best.safetensors"
    save_checkpoint(result.checkpoint, ckpt_path)
    tmp = out / ".history.jsonl.tmp"
    write_history(result.history, tmp)
    os.replace(tmp, out / "history.jsonl")
    _write_atomic(out / "config.txt", cfg.to_text())
    manifest = {
        "command": "train",
        "argv": sys.argv[1:],
        "train_config": dataclasses.asdict(cfg),
        "encoder_config": dataclasses.asdict(result.checkpoint.config),
        "policy": dataclasses.asdict(policy),
        "setting": setting,
        "train_provenance": train_data.provenance,
        "dev_provenance": dev_data.provenance,
        "init_checkpoint": args.init_checkpoint,
        "seed": cfg.seed,
        "checkpoint": str(ckpt_path),
        "outputs": [str(ckpt_path), str(out / "history.jsonl"), str(out / "config.txt")],
        "best_epoch": result.best_epoch,
        "best_dev_macro_f1": result.best_dev_f1,
        "started": started,
        "finished": _now(),
    }
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    print(f"best epoch {result.best_epoch}: dev macro F1 {result.best_dev_f1:.4f} -> {ckpt_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    data = corpus.load_dataset(args.data, expect_labels=False)
    preds = ensemble_predict(args.checkpoints, data)
    if args.postprocess:
        table = build_override_table(corpus.load_dataset(args.postprocess))
        preds = apply_overrides(preds, table)
        save_override_table(table, Path(str(args.out) + ".overrides.tsv"))
    out = Path(args.out)
    tmp = out.with_name(f".{out.name}.tmp")
    preds.write_submission(tmp)
    os.replace(tmp, out)
    preds.write_sidecar(Path(str(out) + ".jsonl"))
    n_over = sum(p.overridden for p in preds)
    print(f"wrote {len(preds)} predictions to {out} ({len(args.checkpoints)} model(s), {n_over} overridden)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    preds = read_submission(args.pred)
    gold = corpus.load_dataset(args.gold)
    reports = evaluate(preds, gold, args.group_by)
    for name, rep in reports.items():
        print(rep.to_text())
    if args.json:
        _write_atomic(Path(args.json), "".join(r.to_json() + "\n" for r in reports.values()))
    return EXIT_OK


ABLATION_ROWS = {
    "baseline": {},
    "+FGM": {"fgm_epsilon": 1.0},
    "+R-drop": {"rdrop_alpha": 1.0},
    "+R-drop+postprocess": {"rdrop_alpha": 1.0},
    "+AEDA": {"aeda_enabled": True},
    "+contrastive": {"contrastive_weight": 0.1},
}


def run_ablation(
    seed: int,
    n: int = 1000,
    cue_strength: float = 0.85,
    seeds: int = 5,
    rows: Sequence[str] = tuple(ABLATION_ROWS),
    settings: Sequence[str] = ("zero_shot", "one_shot"),
    base: TrainConfig = TrainConfig(),
    enc: Optional[EncoderConfig] = None,
) -> dict:
    """Train every requested ablation row on one synthetic corpus for several seeds.

    Returns ``{row: {setting: [dev macro F1 per seed]}}``. The postprocess row
    reuses the R-drop models and applies the override table built from the
    setting's training data.
    """
    splits = corpus.synthetic_splits(corpus.generate_synthetic_corpus(n, cue_strength, seed))
    enc = enc or EncoderConfig(vocab_size=1)
    scores: dict = {r: {s: [] for s in settings} for r in rows}
    cache: dict = {}
    for row in rows:
        overrides = ABLATION_ROWS[row]
        key = tuple(sorted(overrides.items()))
        for k in range(seeds):
            if (key, k) not in cache:
                cfg = dataclasses.replace(base, seed=seed + k, **overrides)
                zs = train(splits.zero_train, splits.zero_dev, cfg, enc, setting="zero_shot")
                os_ = None
                if "one_shot" in settings:
                    os_ = train(splits.one_shot_train, splits.one_dev, cfg, setting="one_shot", init=zs.checkpoint)
                cache[(key, k)] = (zs, os_)
                log.info("ablation %s seed %d done", row, seed + k)
            zs, os_ = cache[(key, k)]
            for setting, res, tr, dev in (
                ("zero_shot", zs, splits.zero_train, splits.zero_dev),
                ("one_shot", os_, splits.one_shot_train, splits.one_dev),
            ):
                if setting not in settings:
                    continue
                if row.endswith("postprocess"):
                    preds = ensemble_predict([res.checkpoint], dev)
                    preds = apply_overrides(preds, build_override_table(tr))
                    scores[row][setting].append(evaluate(preds, dev)["overall"].macro_f1)
                else:
                    scores[row][setting].append(res.best_dev_f1)
    return scores


def format_ablation(scores: dict) -> str:
    settings = list(next(iter(scores.values())))
    lines = [f"{'model':<22}" + "".join(f"{s:>20}" for s in settings)]
    for row, cols in scores.items():
        cells = []
        for s in settings:
            vals = [100 * v for v in cols[s]]
            sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
            cells.append(f"{statistics.fmean(vals):>12.2f} ± {sd:<5.2f}")
        lines.append(f"{row:<22}" + "".join(cells))
    return "\n".join(lines)


def rdrop_vs_baseline(scores: dict, setting: str = "zero_shot") -> tuple[int, int]:
    """Seeds where +R-drop scores at least the baseline, and the number of seeds."""
    base, rd = scores["baseline"][setting], scores["+R-drop"][setting]
    return sum(r >= b for r, b in zip(rd, base)), len(base)


def cmd_ablate(args) -> int:
    started = _now()
    base = TrainConfig(epochs=args.epochs) if args.epochs else TrainConfig()
    rows = args.rows.split(",") if args.rows else list(ABLATION_ROWS)
    for r in rows:
        if r not in ABLATION_ROWS:
            raise ValueError(f"unknown ablation row {r!r}; choose from {', '.join(ABLATION_ROWS)}")
    settings = args.settings.split(",")
    scores = run_ablation(args.seed, args.n, args.cue_strength, args.seeds, rows, settings, base)
    table = format_ablation(scores)
    lines = [f"synthetic corpus n={args.n} cue_strength={args.cue_strength} seed={args.seed}; "
             f"{args.seeds} training seeds; dev Macro F1 x 100 (mean ± sd)", table]
    if "baseline" in scores and "+R-drop" in scores and "zero_shot" in settings:
        wins, total = rdrop_vs_baseline(scores)
        verdict = "PASS" if wins >= 3 * total / 5 else "FAIL"
        lines.append(f"diagnostic: +R-drop >= baseline (zero_shot) in {wins}/{total} seeds [{verdict}]")
    report = "\n".join(lines) + "\n"
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "ablation.txt", report)
    _write_atomic(out / "ablation.json", json.dumps(scores, indent=2, sort_keys=True) + "\n")
    manifest = {"command": "ablate", "argv": sys.argv[1:], "seed": args.seed, "n": args.n,
                "cue_strength": args.cue_strength, "seeds": args.seeds, "rows": rows, "settings": settings,
                "train_config": dataclasses.asdict(base), "outputs": ["ablation.txt", "ablation.json"],
                "started": started, "finished": _now()}
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    print(report, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idiomdet", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus as four CSV splits")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--cue-strength", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="dataset sizes and token length statistics")
    p.add_argument("data")
    p.add_argument("--tokenizer", default="builtin", help="'builtin' or 'hf:<name-or-path>'")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train with best-on-dev checkpoint selection")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--config", help="key=value file (training, encoder and policy keys)")
    p.add_argument("--init-checkpoint", help="warm start from this checkpoint (one-shot continued training)")
    p.add_argument("--setting", choices=corpus.SETTINGS, help="selects the learning rate; default inferred")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="mean-probability ensemble prediction")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--data", required=True)
    p.add_argument("--postprocess", metavar="TRAIN", help="apply the single-label override rule built from TRAIN")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="Macro F1 report")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--group-by", choices=("language", "setting"))
    p.add_argument("--json", help="also write line-delimited JSON reports here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="ablation matrix on synthetic data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--cue-strength", type=float, default=0.85)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--rows", help="comma-separated subset of: " + ", ".join(ABLATION_ROWS))
    p.add_argument("--settings", default="zero_shot,one_shot")
    p.add_argument("--epochs", type=int, help="override the number of epochs")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TrainingDivergedError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except INVALID_ERRORS as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
