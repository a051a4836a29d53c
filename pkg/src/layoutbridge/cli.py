"""``layoutbridge`` command line: ingest, synth, train, generate, eval, render.

Exit status is 0 on success and non-zero on failure; failures print one JSON
object ``{"error": <category>, "message": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .codec import CapacityError, Vocab
from .data import SchemaError, load_dataset, ingest_annotations, read_predictions, synth_toy_dataset, write_dataset, write_predictions
from .geometry import GeometryError, GridSpec
from .metrics import MetricParams
from .model import ModelConfig, TrainingDiverged
from .pipeline import IdMismatchError, TrainConfig, evaluate, generate_predictions, train_and_generate
from .render import load_category_names, render_layout
from .report import FORMATS, format_report
from .tensorio import FormatError, load_checkpoint

SEED_ENV = "LAYOUTBRIDGE_SEED"

log = logging.getLogger("layoutbridge")


@dataclass(frozen=True)
class EvalConfig:
    params: MetricParams = field(default_factory=MetricParams)
    gridspec: GridSpec = field(default_factory=GridSpec)
    pred_path: Optional[Path] = None
    data_path: Optional[Path] = None
    out_path: Optional[Path] = None
    parallelism: int = 1
    fmt: str = "table"

    def __post_init__(self) -> None:
        if self.fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# --- commands -----------------------------------------------------------------


def cmd_ingest(args) -> None:
    ds = ingest_annotations(args.annotations, args.captions)
    write_dataset(ds, args.out)
    log.info("ingested %d records into %s", len(ds), args.out)


def cmd_synth(args) -> None:
    ds = synth_toy_dataset(args.seed, args.size, first_id=args.first_id, max_captions=args.max_captions)
    write_dataset(ds, args.out)
    log.info("wrote %d synthetic records to %s", len(ds), args.out)


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        K=1,
        S=args.grid_size,
        d=args.d,
        heads=args.heads,
        layers_enc=args.layers_enc,
        layers_dec=args.layers_dec,
        d_ff=args.d_ff,
        d_reg=args.d_reg,
        lam=args.lam,
        max_objects=args.max_objects,
        seed=args.seed,
    )


def cmd_train(args) -> None:
    train = load_dataset(args.data)
    test = load_dataset(args.test) if args.test else None
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    paths = train_and_generate(train, _model_config(args), args.out, tc, test)
    for name, p in paths.items():
        log.info("%s: %s", name, p)


def cmd_generate(args) -> None:
    model = load_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    ds = load_dataset(args.data)
    write_predictions(args.out, generate_predictions(model, vocab, ds.records))


def cmd_eval(args) -> None:
    cfg = EvalConfig(
        params=MetricParams(args.gamma_lc, args.gamma_ac, args.smoothing, args.max_exhaustive),
        pred_path=Path(args.pred),
        data_path=Path(args.data),
        out_path=Path(args.out) if args.out else None,
        parallelism=args.parallelism,
        fmt=args.format,
    )
    ds = load_dataset(cfg.data_path)
    corpus, samples = evaluate(read_predictions(cfg.pred_path), ds, cfg.params, cfg.parallelism)
    _emit(format_report(cfg.fmt, corpus, samples if args.per_sample else ()), cfg.out_path)


def cmd_render(args) -> None:
    if args.pred:
        layouts = read_predictions(args.pred)
        names = load_category_names() if not args.data else load_dataset(args.data).category_names
    else:
        ds = load_dataset(args.data)
        layouts = {r.sample_id: r.gt_layout for r in ds.records}
        names = ds.category_names
    if args.names:
        names = [line.split("\t")[-1] for line in Path(args.names).read_text(encoding="utf-8").splitlines()
                 if line and not line.startswith("#")]
    if args.id not in layouts:
        raise IdMismatchError([args.id])
    _emit(render_layout(layouts[args.id], names, title=f"sample {args.id}"), Path(args.out) if args.out else None)


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layoutbridge", description="Text-to-layout generation and layout quality scoring.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    seed = _default_seed()

    s = sub.add_parser("ingest", help="convert COCO-style annotations + captions to a canonical dataset")
    s.add_argument("--annotations", required=True)
    s.add_argument("--captions", required=True)
    s.add_argument("--out", required=True, help="output dataset directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="write a synthetic shape-grammar dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--first-id", type=int, default=1)
    s.add_argument("--max-captions", type=int, default=3)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the layout transformer and generate predictions")
    s.add_argument("--data", required=True, help="training dataset directory")
    s.add_argument("--test", help="dataset to generate predictions for (default: training set)")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--grid-size", type=int, default=7)
    s.add_argument("--d", type=int, default=32)
    s.add_argument("--heads", type=int, default=4)
    s.add_argument("--layers-enc", type=int, default=2)
    s.add_argument("--layers-dec", type=int, default=2)
    s.add_argument("--d-ff", type=int, default=64)
    s.add_argument("--d-reg", type=int, default=32)
    s.add_argument("--lam", type=float, default=2.0, help="regression loss weight")
    s.add_argument("--max-objects", type=int, default=16)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="greedy-decode layouts for a dataset's captions")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("--pred", required=True, help="predictions JSON-lines file")
    s.add_argument("--data", required=True, help="ground-truth dataset directory")
    s.add_argument("--format", choices=FORMATS, default="table")
    s.add_argument("--out")
    s.add_argument("--per-sample", action="store_true", help="include one row per sample")
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--gamma-lc", type=float, default=0.25)
    s.add_argument("--gamma-ac", type=float, default=0.25)
    s.add_argument("--smoothing", type=float, default=80.0)
    s.add_argument("--max-exhaustive", type=int, default=6)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="render one layout as SVG")
    s.add_argument("--id", type=int, required=True)
    s.add_argument("--pred", help="predictions file (otherwise ground truth from --data)")
    s.add_argument("--data")
    s.add_argument("--names", help="category names file, one 'index<TAB>name' per line")
    s.add_argument("--out")
    s.set_defaults(func=cmd_render)
    return p


_ERROR_CATEGORIES = (
    (SchemaError, "schema"),
    (FormatError, "format"),
    (IdMismatchError, "id-mismatch"),
    (TrainingDiverged, "divergence"),
    (CapacityError, "capacity"),
    (GeometryError, "geometry"),
    (OSError, "io"),
    (ValueError, "value"),
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "render" and not (args.pred or args.data):
        parser.error("render needs --pred or --data")
    try:
        args.func(args)
    except Exception as exc:
        for kind, name in _ERROR_CATEGORIES:
            if isinstance(exc, kind):
                sys.stderr.write(json.dumps({"error": name, "message": str(exc)}) + "\n")
                return 1
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
