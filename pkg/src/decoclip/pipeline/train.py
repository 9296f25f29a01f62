"""Pretraining loop: sample, augment, encode, soft targets, loss, AdamW step."""

from __future__ import annotations

import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from decoclip.encoders import DualEncoder, Vocabulary, load_checkpoint, save_checkpoint
from decoclip.loss import NonFiniteLossError, hard_infonce_loss, semantic_matching_loss
from decoclip.pairing import (DecoupledSampler, ImageRecord, PairedSampler, SentenceRecord,
                              build_soft_targets)
from decoclip.pipeline.augment import augment, preprocess_eval
from decoclip.pipeline.config import TrainConfig, dump_config

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainResult:
    model: DualEncoder
    metrics: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    step: int = 0


def steps_per_epoch(n_images: int, n_texts: int, batch_size: int) -> int:
    return math.ceil(max(n_images, n_texts) / batch_size)


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    return int(round(warmup_ratio * total_steps))


def learning_rate(step: int, base_lr: float, n_warmup: int) -> float:
    """Linear warmup over steps ``1..n_warmup-1``, then constant."""
    if step < n_warmup:
        return base_lr * step / n_warmup
    return base_lr


@contextmanager
def reference_mode(enabled: bool = True):
    """Single-threaded deterministic torch kernels for bitwise-reproducible runs."""
    if not enabled:
        yield
        return
    prev_threads = torch.get_num_threads()
    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.set_num_threads(prev_threads)
        torch.use_deterministic_algorithms(prev_det)


def _dtype(name: str) -> torch.dtype:
    return getattr(torch, name)


@contextmanager
def default_dtype(dtype: torch.dtype):
    prev = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(prev)


def build_model(config: TrainConfig, texts: Sequence[SentenceRecord]) -> DualEncoder:
    # initialize in the target dtype so the weights do not depend on torch's global default
    torch.manual_seed(config.seed)
    vocab = Vocabulary.build(r.text for r in texts)
    with default_dtype(_dtype(config.dtype)):
        return DualEncoder(vocab, config.encoder)


def make_optimizer(model: DualEncoder, config: TrainConfig) -> torch.optim.AdamW:
    decay = [p for n, p in model.named_parameters() if n != "temperature.log_tau"]
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": config.weight_decay},
         {"params": [model.temperature.log_tau], "weight_decay": 0.0}],
        lr=config.learning_rate, betas=config.betas, eps=config.adam_eps,
    )


def make_sampler(config: TrainConfig, images, texts):
    if config.sampling == "paired":
        return PairedSampler(images, texts, config.batch_size, seed=config.seed)
    mode = "stratified" if config.sampling == "stratified" else "uniform"
    return DecoupledSampler(images, texts, config.batch_size, seed=config.seed, mode=mode)


def batch_pixels(images: Sequence[ImageRecord], config: TrainConfig, step: int | None,
                 train: bool = True) -> np.ndarray:
    if train:
        rng = np.random.default_rng([config.seed, step, 1])
        return np.stack([augment(r.pixels, config.augmentation, rng) for r in images])
    return np.stack([preprocess_eval(r.pixels, config.augmentation) for r in images])


def _dump_batch(out_dir: Path | None, step: int, batch, bundle) -> Path | None:
    if out_dir is None:
        return None
    path = out_dir / f"nan_dump_step{step}.json"
    path.write_text(json.dumps({
        "step": step,
        "image_ids": [r.id for r in batch.images],
        "text_ids": [r.id for r in batch.texts],
        "image_labels": [r.label.to_list() for r in batch.images],
        "text_labels": [r.label.to_list() for r in batch.texts],
        "s": bundle.s.tolist(),
    }))
    return path


def train_step(model: DualEncoder, batch, config: TrainConfig, step: int):
    """Loss for one batch (no optimizer update)."""
    x = batch_pixels(batch.images, config, step)
    _, v = model.embed_images(x)
    _, t = model.embed_texts([r.text for r in batch.texts])
    tau = model.temperature()
    bundle = build_soft_targets(batch)
    if config.loss == "infonce":
        report = hard_infonce_loss(v, t, tau)
    else:
        report = semantic_matching_loss(v, t, bundle, tau)
    return report, bundle


def train(config: TrainConfig, images: Sequence[ImageRecord], texts: Sequence[SentenceRecord],
          out_dir: str | Path | None = None, resume_from: str | Path | None = None,
          metrics_path: str | Path | None = None, max_steps: int | None = None) -> TrainResult:
    """Pretrain a dual encoder on decoupled image/text pools.

    Writes ``epoch_NNN`` checkpoints and ``metrics.jsonl`` under ``out_dir``
    when given. ``resume_from`` continues from a saved checkpoint; the
    batch stream is a function of (seed, step), so a resumed run follows
    the uninterrupted one exactly.
    """
    if not images or not texts:
        raise ValueError("training needs non-empty image and text pools")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_config(config, out_dir / "config.yaml")
    if metrics_path is None and out_dir is not None:
        metrics_path = out_dir / "metrics.jsonl"
    max_steps = max_steps if max_steps is not None else config.max_steps

    spe = steps_per_epoch(len(images), len(texts), config.batch_size)
    total = config.epochs * spe
    n_warmup = warmup_steps(total, config.warmup_ratio)

    with reference_mode(config.deterministic):
        if resume_from is not None:
            model, manifest = load_checkpoint(resume_from)
            model.train()
            optimizer = make_optimizer(model, config)
            optimizer.load_state_dict(torch.load(Path(resume_from) / "optimizer.pt", weights_only=True))
            start = manifest.step
        else:
            model = build_model(config, texts)
            optimizer = make_optimizer(model, config)
            start = 0
        model.train()
        sampler = make_sampler(config, images, texts)
        metrics: list[dict] = []
        last_ckpt = None
        mode = "a" if resume_from is not None else "w"
        sink = open(metrics_path, mode) if metrics_path is not None else None
        try:
            step = start
            for step in range(start + 1, total + 1):
                if max_steps is not None and step > max_steps:
                    step -= 1
                    break
                lr = learning_rate(step, config.learning_rate, n_warmup)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                batch = sampler.sample(step)
                try:
                    report, bundle = train_step(model, batch, config, step)
                    if not torch.isfinite(report.total):
                        raise NonFiniteLossError("loss is not finite")
                except NonFiniteLossError as exc:
                    bundle = build_soft_targets(batch)
                    dump = _dump_batch(out_dir, step, batch, bundle)
                    raise TrainingDivergedError(f"non-finite loss at step {step}; batch dumped to {dump}") from exc
                optimizer.zero_grad(set_to_none=True)
                report.total.backward()
                optimizer.step()
                model.temperature.clamp_()
                rec = {"step": step, **report.as_floats(), "tau": model.temperature.value, "lr": lr}
                metrics.append(rec)
                if sink is not None:
                    sink.write(json.dumps(rec) + "\n")
                if step % spe == 0 and out_dir is not None:
                    last_ckpt = save_training_checkpoint(model, optimizer, out_dir / f"epoch_{step // spe:03d}",
                                                         step, step // spe, config)
                if step == 1 or step % 10 == 0:
                    log.info("step %d/%d loss %.4f tau %.4f lr %.2e", step, total,
                             rec["loss_total"], rec["tau"], lr)
        finally:
            if sink is not None:
                sink.close()
        model.eval()
    return TrainResult(model=model, metrics=metrics, checkpoint=last_ckpt, step=step)


def save_training_checkpoint(model, optimizer, directory: Path, step: int, epoch: int,
                             config: TrainConfig) -> Path:
    save_checkpoint(model, directory, step=step, epoch=epoch,
                    extra={"resize_to": config.augmentation.resize_to, "seed": config.seed,
                           "loss": config.loss})
    torch.save(optimizer.state_dict(), directory / "optimizer.pt")
    return directory
