"""Zero-shot classification by cosine match against class prompt embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from decoclip.encoders import DualEncoder, l2_normalize
from decoclip.evaluation.prompts import PromptConfigError, PromptSet, generate_prompts
from decoclip.pairing import ImageRecord
from decoclip.pipeline.augment import AugmentationSpec, preprocess_eval


@dataclass
class EvalReport:
    classes: list[str]
    confusion: np.ndarray
    run_accuracies: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        # confusion accumulates over runs of equal size, so this is the run mean
        return float(np.trace(self.confusion) / self.total) if self.total else 0.0

    @property
    def accuracy_std(self) -> float:
        return float(np.std(self.run_accuracies)) if self.run_accuracies else 0.0

    @property
    def per_class_accuracy(self) -> dict[str, float]:
        rows = self.confusion.sum(axis=1)
        return {c: float(self.confusion[i, i] / rows[i]) if rows[i] else float("nan")
                for i, c in enumerate(self.classes)}

    def records(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [("accuracy", f"{self.accuracy:.6f}"),
                                         ("accuracy_std", f"{self.accuracy_std:.6f}"),
                                         ("runs", len(self.run_accuracies) or 1),
                                         ("total", self.total)]
        for i, acc in enumerate(self.run_accuracies):
            out.append((f"run_{i}.accuracy", f"{acc:.6f}"))
        for c, acc in self.per_class_accuracy.items():
            out.append((f"class.{c}.accuracy", f"{acc:.6f}"))
        for i, c in enumerate(self.classes):
            out.append((f"confusion.{c}", ",".join(str(int(x)) for x in self.confusion[i])))
        for k, v in self.metadata.items():
            out.append((f"meta.{k}", v))
        return out


def eval_spec(model: DualEncoder, resize_to: int | None = None) -> AugmentationSpec:
    size = model.cfg.image_size
    return AugmentationSpec.identity(max(resize_to or size, size), size)


@torch.no_grad()
def embed_image_records(model: DualEncoder, records: Sequence[ImageRecord],
                        spec: AugmentationSpec | None = None, batch_size: int = 256) -> torch.Tensor:
    """Unit-norm image embeddings, one row per record."""
    model.eval()
    spec = spec or eval_spec(model)
    chunks = []
    for k in range(0, len(records), batch_size):
        px = np.stack([preprocess_eval(r.pixels, spec) for r in records[k:k + batch_size]])
        chunks.append(model.embed_images(px)[1])
    if not chunks:
        return torch.zeros((0, model.cfg.proj_dim), dtype=model.dtype)
    return torch.cat(chunks)


@torch.no_grad()
def embed_texts(model: DualEncoder, texts: Sequence[str], batch_size: int = 512) -> torch.Tensor:
    model.eval()
    chunks = [model.embed_texts(list(texts[k:k + batch_size]))[1] for k in range(0, len(texts), batch_size)]
    if not chunks:
        return torch.zeros((0, model.cfg.proj_dim), dtype=model.dtype)
    return torch.cat(chunks)


def class_embeddings(model: DualEncoder, prompt_set: PromptSet, classes: Sequence[str],
                     ensemble: bool, rng: np.random.Generator) -> torch.Tensor:
    """One unit vector per class: mean of all prompt embeddings (ensemble) or one sampled prompt."""
    prompt_set.require(classes)
    reps = []
    for c in classes:
        prompts = prompt_set.prompts[c]
        if ensemble:
            reps.append(l2_normalize(embed_texts(model, prompts).mean(0)))
        else:
            reps.append(embed_texts(model, [prompts[rng.integers(len(prompts))]])[0])
    return torch.stack(reps)


def predict(image_emb: torch.Tensor, class_emb: torch.Tensor) -> np.ndarray:
    """Argmax cosine class per image (rows of both inputs are unit-norm)."""
    return (image_emb @ class_emb.T).argmax(dim=1).cpu().numpy()


def zero_shot_classify(model: DualEncoder, images: Sequence[ImageRecord], labels: Sequence[int],
                       classes: Sequence[str], prompts: PromptSet | None = None,
                       ensemble: bool = False, runs: int = 5, prompt_seed: int = 0,
                       n_prompts: int = 10, spec: AugmentationSpec | None = None,
                       metadata: dict | None = None) -> EvalReport:
    """Zero-shot accuracy over ``runs`` prompt-sampling seeds.

    ``labels`` are class indices into ``classes``. Without a fixed
    ``prompts`` set, a fresh prompt set is generated per run from
    ``prompt_seed + run``.
    """
    classes = list(classes)
    if not classes:
        raise PromptConfigError("no classes given")
    if prompts is not None:
        prompts.require(classes)
    labels = np.asarray(labels, dtype=int)
    img = embed_image_records(model, images, spec)
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    accs = []
    for run in range(runs):
        seed = prompt_seed + run
        rng = np.random.default_rng(seed)
        pset = prompts if prompts is not None else generate_prompts(classes, n_prompts, seed)
        pred = predict(img, class_embeddings(model, pset, classes, ensemble, rng))
        np.add.at(confusion, (labels, pred), 1)
        accs.append(float(np.mean(pred == labels)) if len(labels) else 0.0)
    meta = {"ensemble": ensemble, "prompt_seed": prompt_seed, "n_prompts": n_prompts}
    meta.update(metadata or {})
    return EvalReport(classes, confusion, accs, meta)
