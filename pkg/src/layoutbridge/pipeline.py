"""Training, generation and corpus evaluation drivers."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .codec import Vocab, layout_to_sequence, tokenize_captions
from .data import Dataset, DatasetRecord, read_predictions, write_predictions
from .geometry import GridSpec, Layout
from .metrics import LqsReport, MetricParams, aggregate_reports, layout_quality_score
from .model import Adam, LayoutTransformer, ModelConfig, TrainingDiverged, greedy_generate, make_batch
from .model.train import greedy_decode
from .tensorio import save_checkpoint

log = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.ltl"
VOCAB_FILE = "vocab.txt"
LOSS_FILE = "loss.csv"
PREDICTIONS_FILE = "predictions.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def encode_records(records: Sequence[DatasetRecord], vocab: Vocab, g: GridSpec, max_objects: int):
    return [(tokenize_captions(r.captions, vocab), layout_to_sequence(r.gt_layout, g, max_objects)) for r in records]


def train_model(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig = TrainConfig(),
    vocab: Optional[Vocab] = None,
    on_step=None,
    checkpoint_path=None,
) -> Tuple[LayoutTransformer, Vocab, List[Tuple[int, int, float, float, float]]]:
    """Teacher-forced training with Adam; returns model, vocab and the loss log.

    ``model_config.K`` and ``C`` are overridden from the vocabulary and the
    dataset categories. On divergence the last good parameters are written to
    ``checkpoint_path`` (when given) before :class:`TrainingDiverged` propagates.
    """
    if not dataset.records:
        raise ValueError("dataset is empty")
    if vocab is None:
        vocab = Vocab.build(t for r in dataset.records for t in r.captions)
    cfg = ModelConfig.from_dict({**model_config.to_dict(), "K": len(vocab), "C": max(1, len(dataset.category_names))})
    g = cfg.gridspec()
    samples = encode_records(dataset.records, vocab, g, cfg.max_objects)
    model = LayoutTransformer(cfg)
    opt = Adam(model.params, lr=train_config.lr)
    rng = np.random.default_rng(train_config.seed)
    history = []
    step = 0
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), train_config.batch_size):
            idx = order[start : start + train_config.batch_size]
            batch = make_batch([samples[i] for i in idx], g.n_joint, vocab.pad_id)
            (loss, l_cls, l_reg), grads = model.loss_and_grads(batch)
            if not math.isfinite(loss):
                if checkpoint_path is not None:
                    save_checkpoint(model, checkpoint_path)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            opt.step(model.params, grads)
            history.append((epoch, step, loss / len(idx), l_cls / len(idx), l_reg / len(idx)))
            if on_step is not None:
                on_step(history[-1])
            step += 1
    return model, vocab, history


def generate_predictions(model: LayoutTransformer, vocab: Vocab, records: Sequence[DatasetRecord]) -> List[Tuple[int, Layout]]:
    g = model.config.gridspec()
    return [(r.sample_id, greedy_generate(model, r.captions, vocab, g)) for r in records]


def token_accuracy(model: LayoutTransformer, vocab: Vocab, records: Sequence[DatasetRecord]) -> float:
    """Fraction of target joint tokens (EOS included) reproduced at the same
    position by greedy decoding."""
    g = model.config.gridspec()
    hit = total = 0
    for r in records:
        got = greedy_decode(model, r.captions, vocab).tokens
        want = layout_to_sequence(r.gt_layout, g, model.config.max_objects).tokens
        total += len(want)
        hit += sum(a == b for a, b in zip(got, want))
    return hit / total if total else 1.0


def write_loss_csv(path, history) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "loss", "loss_cls", "loss_reg"])
        for epoch, step, loss, cls, reg in history:
            w.writerow([epoch, step, repr(loss), repr(cls), repr(reg)])


def train_and_generate(
    train: Dataset,
    model_config: ModelConfig,
    out_dir,
    train_config: TrainConfig = TrainConfig(),
    test: Optional[Dataset] = None,
) -> Dict[str, Path]:
    """Train, checkpoint, log the loss curve and generate predictions for ``test``
    (defaults to the training set)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "checkpoint": out / CHECKPOINT_FILE,
        "vocab": out / VOCAB_FILE,
        "loss": out / LOSS_FILE,
        "predictions": out / PREDICTIONS_FILE,
    }
    model, vocab, history = train_model(train, model_config, train_config, checkpoint_path=paths["checkpoint"])
    save_checkpoint(model, paths["checkpoint"])
    vocab.save(paths["vocab"])
    write_loss_csv(paths["loss"], history)
    target = test if test is not None else train
    write_predictions(paths["predictions"], generate_predictions(model, vocab, target.records))
    return paths


# --- evaluation ---------------------------------------------------------------


class IdMismatchError(ValueError):
    def __init__(self, missing: Sequence[int]):
        super().__init__(f"prediction ids missing from ground truth: {sorted(missing)}")
        self.missing = sorted(missing)


def _score_one(args):
    gt, pred, params = args
    return layout_quality_score(gt, pred, params)


def evaluate(
    predictions: Dict[int, Layout],
    dataset: Dataset,
    params: MetricParams = MetricParams(),
    parallelism: int = 1,
) -> Tuple[LqsReport, List[Tuple[int, LqsReport]]]:
    """Score each predicted sample against its ground truth, then average.

    Samples are processed in ascending id order; the reduction is
    order-insensitive so the corpus report does not depend on parallelism.
    """
    gt = dataset.by_id()
    missing = [sid for sid in predictions if sid not in gt]
    if missing:
        raise IdMismatchError(missing)
    ids = sorted(predictions)
    if not ids:
        raise ValueError("no predictions to evaluate")
    jobs = [(gt[sid].gt_layout, predictions[sid], params) for sid in ids]
    if parallelism <= 1:
        reports = [_score_one(j) for j in jobs]
    else:
        chunk = max(1, len(jobs) // (4 * parallelism))
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            reports = list(pool.map(_score_one, jobs, chunksize=chunk))
    return aggregate_reports(reports), list(zip(ids, reports))


def evaluate_files(pred_file, dataset: Dataset, params: MetricParams = MetricParams(), parallelism: int = 1):
    return evaluate(read_predictions(pred_file), dataset, params, parallelism)
