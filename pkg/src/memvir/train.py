"""End-to-end training loop and run artifacts.

A run writes, under its output directory:

    run_header.json    resolved config, steps/epoch, warm-up in steps
    metrics.jsonl      one JSON object per evaluation (keys: METRIC_KEYS)
    difficulty.csv     step,loss for every training step
    checkpoint.npz     final model + optimizer state
    memvir_state.npz   final memory queues
    embeddings_test.csv  label,e0..e{D-1} for the test split
    train.csv, test.csv  the datasets used (synthetic runs only)
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .config import RunConfig, rng_stream
from .data import Dataset, gen_synthetic, load_dataset, sample_batch, save_dataset, subset_classes
from .losses import LossVariant
from .memory import MemVirState, memvir_training_step
from .metrics import evaluate_embeddings, mean_cos_to_weight
from .model import (
    CLASS_WEIGHTS,
    DimensionMismatch,
    ModelParams,
    OptimizerState,
    encoder_backward,
    encoder_forward,
    init_params,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)

log = logging.getLogger(__name__)

METRIC_KEYS = (
    "step",
    "epoch",
    "mode",
    "loss",
    "active_classes",
    "virtual_steps",
    "recall_at",
    "p_at_1",
    "r_precision",
    "map_at_r",
    "mean_cos_to_weight",
)


@dataclass
class StepInfo:
    step: int
    loss: float
    n_classes: int
    n_rows: int
    k: int
    distinct_labels: int
    batch_size: int
    n_train_classes: int


@dataclass
class RunResult:
    params: ModelParams
    optimizer: OptimizerState
    state: MemVirState
    class_ids: np.ndarray
    losses: List[float] = field(default_factory=list)
    records: List[dict] = field(default_factory=list)
    steps_per_epoch: int = 0
    warmup_steps: int = 0
    train: Optional[Dataset] = None
    test: Optional[Dataset] = None


def load_data(cfg: RunConfig):
    if cfg.synthetic is not None:
        train, test = gen_synthetic(cfg.synthetic, rng_stream(cfg.seed, "data"))
    else:
        train, test = load_dataset(cfg.train_path), load_dataset(cfg.test_path)
    if cfg.class_ratio < 1.0:
        train = subset_classes(train, cfg.class_ratio, rng_stream(cfg.seed, "subset"))
    return train, test


def embed(params: ModelParams, inputs, chunk=4096):
    parts = [encoder_forward(params, inputs[i : i + chunk])[0] for i in range(0, len(inputs), chunk)]
    return np.vstack(parts) if parts else np.zeros((0, params.embedding_dim))


def cos_to_weight_report(params: ModelParams, class_ids, ds: Dataset):
    """Cosine of each embedding to its class weight.

    Samples of classes without a weight column (unseen test classes) are
    scored against their most similar weight column instead.
    """
    emb = embed(params, ds.inputs)
    W = params.class_weights
    cols = np.searchsorted(class_ids, ds.labels)
    cols = np.clip(cols, 0, len(class_ids) - 1)
    known = class_ids[cols] == ds.labels
    x_hat = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    w_hat = W / np.linalg.norm(W, axis=0, keepdims=True)
    sims = x_hat @ w_hat
    per = np.where(known, sims[np.arange(len(ds)), cols], sims.max(axis=1))
    return float(np.mean(per))


def evaluate_model(params: ModelParams, class_ids, train: Dataset, test: Dataset, ks):
    report = evaluate_embeddings(embed(params, test.inputs), test.labels, ks)
    train_emb = embed(params, train.inputs)
    report.mean_cos_to_weight = mean_cos_to_weight(train_emb, np.searchsorted(class_ids, train.labels), params.class_weights)
    return report


def run_training(cfg: RunConfig, out_dir=None, on_step: Optional[Callable[[StepInfo], None]] = None,
                 write_artifacts=True, evaluate=True) -> RunResult:
    """Train the encoder and class weights under ``cfg``.

    Args:
        cfg: validated run configuration.
        out_dir: artifact directory; defaults to ``cfg.resolve_output_dir()``.
        on_step: called after each step's loss evaluation with a StepInfo.
        write_artifacts: write the files listed in the module docstring.
        evaluate: run retrieval evaluation every ``eval_every`` steps.
    """
    train, test = load_data(cfg)
    class_ids = train.class_ids
    C = class_ids.size
    y_all = train.dense_labels()
    widths = [train.input_dim, *cfg.hidden, cfg.embedding_dim]
    params = init_params(widths, C, rng_stream(cfg.seed, "init"), cfg.leaky_slope)
    opt = OptimizerState(cfg.optimizer, cfg.learning_rate)
    sampler = rng_stream(cfg.seed, "sampler")

    spe = cfg.steps_per_epoch or max(1, len(train) // cfg.batch_size)
    total = cfg.epochs * spe
    mv_cfg = cfg.memvir_config(spe)
    state = MemVirState()
    loss_cfg = cfg.loss
    log.info("steps/epoch=%d total_steps=%d warmup=%d steps (mode=%s, N=%d, M=%d)",
             spe, total, mv_cfg.warmup_step, mv_cfg.mode.value, mv_cfg.n_steps, mv_cfg.margin)

    result = RunResult(params, opt, state, class_ids, steps_per_epoch=spe, warmup_steps=mv_cfg.warmup_step,
                       train=train, test=test)
    out = None
    if write_artifacts:
        out = Path(out_dir) if out_dir is not None else cfg.resolve_output_dir()
        out.mkdir(parents=True, exist_ok=True)
        header = {
            "config": cfg.raw,
            "steps_per_epoch": spe,
            "total_steps": total,
            "warmup_steps": mv_cfg.warmup_step,
            "warmup_source": "steps" if cfg.warmup_steps is not None else f"epochs*{spe}",
            "n_train_classes": int(C),
        }
        (out / "run_header.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        if cfg.synthetic is not None:
            save_dataset(train, out / "train.csv")
            save_dataset(test, out / "test.csv")

    for step in range(total):
        rows = sample_batch(train, cfg.batch_size, cfg.classes_per_batch, sampler)
        emb, cache = encoder_forward(params, train.inputs[rows])
        y = y_all[rows]
        res = memvir_training_step(state, mv_cfg, emb, y, params.class_weights, loss_cfg)
        if loss_cfg.variant is LossVariant.CURRICULARFACE:
            loss_cfg = loss_cfg.with_t(res.loss.curricular_t)
        grads = encoder_backward(params, cache, res.loss.d_embeddings)
        grads[CLASS_WEIGHTS] = res.loss.d_weights
        lr = cfg.learning_rate
        if cfg.lr_decay:
            lr *= cfg.lr_decay["factor"] ** (step // cfg.lr_decay["every_steps"])
        optimizer_step(opt, params, grads, lr)
        result.losses.append(res.loss.value)
        if on_step is not None:
            on_step(StepInfo(step, res.loss.value, res.n_classes, res.n_rows, res.k, res.distinct_labels,
                             len(rows), int(C)))

        if evaluate and ((step + 1) % cfg.eval_every == 0 or step == total - 1):
            report = evaluate_model(params, class_ids, train, test, cfg.recall_ks)
            record = {
                "step": step,
                "epoch": step // spe,
                "mode": mv_cfg.mode.value,
                "loss": res.loss.value,
                "active_classes": res.n_classes,
                "virtual_steps": res.k,
                "recall_at": {str(k): v for k, v in report.recall_at.items()},
                "p_at_1": report.p_at_1,
                "r_precision": report.r_precision,
                "map_at_r": report.map_at_r,
                "mean_cos_to_weight": report.mean_cos_to_weight,
            }
            result.records.append(record)

    if write_artifacts:
        with open(out / "metrics.jsonl", "w") as fh:
            for record in result.records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        with open(out / "difficulty.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "loss"])
            for i, loss in enumerate(result.losses):
                writer.writerow([i, repr(loss)])
        meta = {"class_ids": class_ids.tolist(), "config": cfg.raw, "recall_ks": list(cfg.recall_ks)}
        save_checkpoint(out / "checkpoint.npz", params, opt, meta)
        state.save(out / "memvir_state.npz")
        emb_test = embed(params, test.inputs)
        save_dataset(Dataset(emb_test, test.labels), out / "embeddings_test.csv", prefix="e")
    return result


def eval_checkpoint(checkpoint, data_path, ks=None):
    """EvalReport for a saved model on a CSV dataset (self-excluded retrieval)."""
    params, _, meta = load_checkpoint(checkpoint)
    ds = load_dataset(data_path)
    if ds.input_dim != params.widths[0]:
        raise DimensionMismatch(f"data has {ds.input_dim} features, checkpoint expects {params.widths[0]}")
    ks = ks or meta.get("recall_ks", [1, 2, 4, 8])
    report = evaluate_embeddings(embed(params, ds.inputs), ds.labels, ks)
    report.mean_cos_to_weight = cos_to_weight_report(params, np.asarray(meta["class_ids"]), ds)
    return report
