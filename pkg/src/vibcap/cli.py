"""Command-line surface: synth, train, caption, eval, ablate, retrieve, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Options may come from a JSON config file (--config); explicit flags override
file values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

from .data import DataError, SynthConfig, generate_corpus, load_manifest, tokenize, validate_manifest
from .dsp import SignalError, TriaxialSignal, load_signal_csv
from .metrics import METRIC_COLUMNS, evaluate_model
from .model import CaptionModel, ModelConfig, VARIANTS
from .training import (
    INPUT_MODES,
    CheckpointError,
    NumericalError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    vocab_for_run,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise DataError(f"config file {p} must hold a JSON object")
    return d


def _merge_dataclass(cls, file_values: dict, flag_values: dict):
    """Defaults < config file < explicit flags; unknown file keys rejected."""
    known = {f.name for f in fields(cls)}
    bad = set(file_values) - known
    if bad:
        raise DataError(f"unknown config fields for {cls.__name__}: {sorted(bad)}")
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        return cls(**merged)
    except TypeError as e:
        raise DataError(str(e)) from None


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    file_cfg = _load_json_config(args.config)
    flags = {"materials": args.materials,
             "samples_per_material": args.samples_per_material,
             "sample_rate": args.sample_rate,
             "duration": args.duration,
             "seed": args.seed}
    if "class_mix" in file_cfg and isinstance(file_cfg["class_mix"], list):
        file_cfg = {**file_cfg, "class_mix": tuple(file_cfg["class_mix"])}
    cfg = _merge_dataclass(SynthConfig, file_cfg, flags)
    cfg.validate()
    manifest = generate_corpus(cfg, args.out)
    n = cfg.materials * cfg.samples_per_material
    print(f"wrote {n} signals and {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _train_flags(args) -> dict:
    return {"lambda1": args.lambda1, "lambda2": args.lambda2, "lambda3": args.lambda3,
            "learning_rate": args.learning_rate, "batch_size": args.batch_size,
            "epochs": args.epochs, "seed": args.seed, "variant": args.variant,
            "input_mode": args.input_mode, "grad_clip": args.grad_clip,
            "exclude_category": args.exclude_category}


def _run_training(manifest_path, train_cfg: TrainConfig, out_dir: Path,
                  quiet: bool = False):
    from .plots import save_loss_curves

    dataset = load_manifest(manifest_path)
    vocab = vocab_for_run(dataset, train_cfg)
    model = CaptionModel(ModelConfig(), vocab, seed=train_cfg.seed)

    def progress(log, total):
        if not quiet and (log.step % 50 == 0 or log.step == total):
            print(f"step {log.step}/{total}  total {log.total:.4f}  ce {log.ce:.4f}")

    ckpt, logs = train(model, dataset, train_cfg, progress=progress)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.vpac"
    save_checkpoint(ckpt, ckpt_path)
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "total", "ce", "periodicity",
                         "aperiodicity", "orthogonality", "grad_norm"])
        for l in logs:
            writer.writerow([l.step, l.epoch, f"{l.total:.6f}", f"{l.ce:.6f}",
                             f"{l.periodicity:.6f}", f"{l.aperiodicity:.6f}",
                             f"{l.orthogonality:.6f}", f"{l.grad_norm:.6f}"])
    save_loss_curves(logs, out_dir / "loss_curve.png")
    return ckpt_path, model, dataset


def cmd_train(args) -> int:
    file_cfg = _load_json_config(args.config)
    cfg = _merge_dataclass(TrainConfig, file_cfg, _train_flags(args))
    cfg.validate()
    out_dir = Path(args.out)
    ckpt_path, _, _ = _run_training(args.manifest, cfg, out_dir, quiet=args.quiet)
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {out_dir / 'train_log.csv'}")
    print(f"figure: {out_dir / 'loss_curve.png'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# caption

def cmd_caption(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    mode = "beam" if args.beam else "greedy"
    for path in args.signals:
        sig = load_signal_csv(path)
        if isinstance(sig, TriaxialSignal):
            sample = model.prepare(sig, ckpt.train_config.input_mode, sample_id=path)
        else:
            sample = model.prepare(sig, sample_id=path)
        caption = model.caption(sample, variant=ckpt.train_config.variant,
                                mode=mode, beam=args.beam or 3)
        print(f"{path}\t{caption}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    from .plots import save_metric_bars

    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    dataset = load_manifest(args.manifest)
    mode = "beam" if args.beam else "greedy"
    report = evaluate_model(model, dataset, split=args.split,
                            variant=ckpt.train_config.variant,
                            input_mode=ckpt.train_config.input_mode,
                            mode=mode, beam=args.beam or 3,
                            exclude_category=ckpt.train_config.exclude_category)
    label = Path(args.checkpoint).stem
    print(report.to_table(label))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json())
        (out / "report.txt").write_text(report.to_table(label) + "\n")
        (out / "report.csv").write_text(report.to_csv(label))
        save_metric_bars(report.scores, out / "report.png", f"metrics: {label}")
        print(f"report written to {out}/report.{{json,txt,csv,png}}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate

ABLATION_COLUMNS = ("variant", "input_mode", "excluded_category", "seed", "status")


def _grid_cells(grid: dict) -> list[dict]:
    variants = grid.get("variants", ["full"])
    modes = grid.get("input_modes", ["dft321"])
    excluded = grid.get("excluded_categories", [None])
    seeds = grid.get("seeds", [0])
    cells = []
    for v in variants:
        for m in modes:
            for ex in excluded:
                for s in seeds:
                    cells.append({"variant": v, "input_mode": m,
                                  "excluded_category": ex, "seed": int(s)})
    return cells


def cmd_ablate(args) -> int:
    from .plots import save_ablation_bars

    grid = _load_json_config(args.grid) if args.grid else {}
    overrides = {k: v for k, v in grid.get("train", {}).items()}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cells = _grid_cells(grid)
    dataset = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell in cells:
        label = "/".join(str(cell[k]) for k in ("variant", "input_mode", "seed")
                         if cell[k] is not None)
        if cell["excluded_category"]:
            label += f"/-{cell['excluded_category']}"
        row = dict(cell, label=label, status="ok")
        try:
            cfg = TrainConfig(**overrides, variant=cell["variant"],
                              input_mode=cell["input_mode"], seed=cell["seed"],
                              exclude_category=cell["excluded_category"])
        except TypeError as e:
            raise DataError(str(e)) from None
        try:
            cfg.validate()
            vocab = vocab_for_run(dataset, cfg)
            model = CaptionModel(ModelConfig(), vocab, seed=cfg.seed)
            train(model, dataset, cfg)
            report = evaluate_model(model, dataset, split="test",
                                    variant=cfg.variant, input_mode=cfg.input_mode,
                                    exclude_category=cfg.exclude_category)
            row.update({k: report.scores[k] for k in METRIC_COLUMNS})
        except (DataError, SignalError, NumericalError, ValueError) as e:
            row["status"] = f"failed: {e}"
        rows.append(row)
        got = row.get("cider")
        print(f"[{row['status'][:6]}] {label}"
              + (f"  cider {got:.4f}" if got is not None else ""))
    _write_ablation_outputs(rows, out)
    save_ablation_bars(rows, "cider", out / "ablation.png")
    print(f"ablation written to {out}/ablation.{{csv,txt,png}}")
    return EXIT_OK


def _write_ablation_outputs(rows: list[dict], out: Path):
    cols = list(ABLATION_COLUMNS) + list(METRIC_COLUMNS)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            writer.writerow([r.get(c, "") if r.get(c) is not None else ""
                             for c in cols])
    name_w = max(len(r["label"]) for r in rows) + 2
    header = "Config".ljust(name_w) + "".join(c.rjust(9) for c in
                                              ("BLEU1", "BLEU2", "BLEU3", "BLEU4",
                                               "ROUGE-L", "CIDEr"))
    rule = "-" * len(header)
    lines = [rule, header, rule]
    for r in rows:
        if r["status"] == "ok":
            vals = "".join(f"{r[c]:9.4f}" for c in METRIC_COLUMNS)
        else:
            vals = "  " + r["status"]
        lines.append(r["label"].ljust(name_w) + vals)
    lines.append(rule)
    (out / "ablation.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# retrieve

def _checkpoint_fingerprint(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_retrieval_index(checkpoint_path, manifest_path, index_dir) -> Path:
    ckpt = load_checkpoint(checkpoint_path)
    model = ckpt.build_model()
    dataset = load_manifest(manifest_path)
    captions = {}
    signal_paths = {}
    postings: dict[str, list[str]] = {}
    for rec in dataset.records:
        sig = dataset.load_signal(rec)
        sample = model.prepare(sig, ckpt.train_config.input_mode, sample_id=rec.id)
        cap = model.caption(sample, variant=ckpt.train_config.variant)
        captions[rec.id] = cap
        signal_paths[rec.id] = str(dataset.resolve(rec))
        for tok in set(tokenize(cap)):
            postings.setdefault(tok, []).append(rec.id)
    for tok in postings:
        postings[tok].sort()
    index_dir = Path(index_dir)
    index_dir.mkdir(parents=True, exist_ok=True)
    payload = {"fingerprint": _checkpoint_fingerprint(checkpoint_path),
               "captions": captions, "signal_paths": signal_paths,
               "postings": postings}
    (index_dir / "index.json").write_text(json.dumps(payload, indent=1))
    return index_dir / "index.json"


def query_retrieval_index(index_dir, query: str, limit: int | None = None
                          ) -> list[tuple[str, int]]:
    """Rank sample ids by distinct matched query tokens; ties by id."""
    index_path = Path(index_dir) / "index.json"
    if not index_path.exists():
        raise DataError(f"no index at {index_path}; build one with --build")
    payload = json.loads(index_path.read_text())
    tokens = set(tokenize(query))
    if not tokens:
        raise UsageError("query is empty after normalization")
    counts: dict[str, int] = {}
    for tok in tokens:
        for sid in payload["postings"].get(tok, []):
            counts[sid] = counts.get(sid, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if limit:
        ranked = ranked[:limit]
    return ranked


def cmd_retrieve(args) -> int:
    index_dir = Path(args.index)
    if args.build:
        if not args.checkpoint or not args.manifest:
            raise UsageError("--build requires --checkpoint and --manifest")
        path = build_retrieval_index(args.checkpoint, args.manifest, index_dir)
        print(f"index written to {path}")
        if not args.query:
            return EXIT_OK
    if not args.query:
        raise UsageError("provide --query (or --build to only build the index)")
    index_path = index_dir / "index.json"
    if not index_path.exists():
        raise DataError(f"no index at {index_path}; build one with --build")
    payload = json.loads(index_path.read_text())
    if args.checkpoint and not args.build:
        if _checkpoint_fingerprint(args.checkpoint) != payload["fingerprint"]:
            raise DataError(
                "index is stale: checkpoint fingerprint differs; rebuild with --build")
    ranked = query_retrieval_index(index_dir, args.query, args.limit)
    for sid, score in ranked:
        print(f"{sid}\t{score}\t{payload['signal_paths'][sid]}\t{payload['captions'][sid]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck

def cmd_gradcheck(args) -> int:
    from .audit import run_full_audit

    ok = run_full_audit(cases_per_op=args.cases)
    if not ok:
        print("gradient audit FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradient audit passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate (manifest linting; handy alongside synth)

def cmd_validate(args) -> int:
    errors, warnings = validate_manifest(args.manifest)
    for w in warnings:
        print(f"warning: {w}")
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if errors:
        return EXIT_DATA
    print(f"{args.manifest}: ok ({len(warnings)} warnings)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vibcap",
                description="Vibration-to-text captioning pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired corpus")
    s.add_argument("--config", help="JSON file with SynthConfig fields")
    s.add_argument("--out", required=True)
    s.add_argument("--materials", type=int)
    s.add_argument("--samples-per-material", type=int, dest="samples_per_material")
    s.add_argument("--sample-rate", type=int, dest="sample_rate")
    s.add_argument("--duration", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a captioning model")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--learning-rate", type=float, dest="learning_rate")
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--input-mode", choices=INPUT_MODES, dest="input_mode")
    t.add_argument("--exclude-category", dest="exclude_category")
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--lambda3", type=float)
    t.add_argument("--grad-clip", type=float, dest="grad_clip")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("caption", help="caption signal files")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--beam", type=int, help="beam width (default: greedy)")
    c.add_argument("signals", nargs="+")
    c.set_defaults(func=cmd_caption)

    e = sub.add_parser("eval", help="score generated captions against references")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--out", help="directory for report files")
    e.add_argument("--beam", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score a grid of configurations")
    a.add_argument("--manifest", required=True)
    a.add_argument("--grid", help="JSON grid: variants/input_modes/excluded_categories/seeds/train")
    a.add_argument("--out", required=True)
    a.add_argument("--epochs", type=int, help="override epochs for every cell")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("retrieve", help="keyword retrieval over generated captions")
    r.add_argument("--index", required=True, help="index directory")
    r.add_argument("--build", action="store_true")
    r.add_argument("--checkpoint")
    r.add_argument("--manifest")
    r.add_argument("--query")
    r.add_argument("--limit", type=int)
    r.set_defaults(func=cmd_retrieve)

    g = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    g.add_argument("--cases", type=int, default=100, help="random cases per op")
    g.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("validate", help="lint a manifest file")
    v.add_argument("manifest")
    v.set_defaults(func=cmd_validate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SignalError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
