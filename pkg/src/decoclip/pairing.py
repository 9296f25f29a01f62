"""Decoupled image/text sampling and label-driven soft targets.

Images and sentences are drawn independently; their relationship inside a
batch comes only from the cosine similarity of their multi-hot finding
labels, turned into row- (image to text) and column- (text to image)
normalized soft targets by a plain softmax.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from decoclip.findings import FINDING_NAMES, FindingLabel, FindingType


class DegenerateLabelError(ValueError):
    """A label with no set bit reached a similarity computation."""


class InsufficientDataError(ValueError):
    pass


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray
    label: FindingLabel
    study_id: str | None = None

    def __post_init__(self):
        if self.label.unlabeled:
            raise DegenerateLabelError(f"image {self.id!r} has an all-zero label")


@dataclass
class SentenceRecord:
    id: str
    text: str
    label: FindingLabel
    study_id: str | None = None

    def __post_init__(self):
        if len(self.text.split()) < 3:
            raise ValueError(f"sentence {self.id!r} has fewer than 3 words")
        if self.label.unlabeled:
            raise DegenerateLabelError(f"sentence {self.id!r} has an all-zero label")


@dataclass
class Batch:
    images: list[ImageRecord]
    texts: list[SentenceRecord]
    image_index: np.ndarray = field(default=None, repr=False)
    text_index: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.images) != len(self.texts):
            raise ValueError("batch needs as many images as texts")
        if len(self.images) < 2:
            raise ValueError("batch size must be at least 2")

    def __len__(self):
        return len(self.images)


@dataclass
class SimilarityBundle:
    """Per-batch label similarity and both soft-target matrices.

    All matrices are indexed ``[image i, text j]``. ``y_v2t`` rows and
    ``y_t2v`` columns sum to one.
    """

    s: np.ndarray
    y_v2t: np.ndarray
    y_t2v: np.ndarray

    def transposed(self) -> "SimilarityBundle":
        """The bundle seen with the modalities swapped."""
        return SimilarityBundle(self.s.T.copy(), self.y_t2v.T.copy(), self.y_v2t.T.copy())


def _label_matrix(labels: Sequence[FindingLabel] | np.ndarray) -> np.ndarray:
    if isinstance(labels, np.ndarray):
        return np.asarray(labels, dtype=np.float64)
    return np.stack([lab.to_array() for lab in labels]) if len(labels) else np.zeros((0, len(FINDING_NAMES)))


def semantic_similarity(l_img: FindingLabel | np.ndarray, l_txt: FindingLabel | np.ndarray) -> float:
    a = l_img.to_array() if isinstance(l_img, FindingLabel) else np.asarray(l_img, dtype=np.float64)
    b = l_txt.to_array() if isinstance(l_txt, FindingLabel) else np.asarray(l_txt, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateLabelError("similarity is undefined for an all-zero label")
    return float(a @ b / (na * nb))


def similarity_matrix(img_labels, txt_labels) -> np.ndarray:
    """Pairwise label cosine similarity, shape (n_images, n_texts)."""
    a = _label_matrix(img_labels)
    b = _label_matrix(txt_labels)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateLabelError("similarity is undefined for an all-zero label")
    return (a / na) @ (b / nb).T


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def soft_targets_from_similarity(s: np.ndarray) -> SimilarityBundle:
    s = np.asarray(s, dtype=np.float64)
    return SimilarityBundle(s=s, y_v2t=softmax(s, axis=1), y_t2v=softmax(s, axis=0))


def build_soft_targets(batch: Batch | tuple) -> SimilarityBundle:
    """Soft targets for a batch, or for an ``(image_labels, text_labels)`` pair."""
    if isinstance(batch, Batch):
        img = [r.label for r in batch.images]
        txt = [r.label for r in batch.texts]
    else:
        img, txt = batch
    return soft_targets_from_similarity(similarity_matrix(img, txt))


def count_supervision_pairs(n: int, m: int, h: int) -> int:
    """Image-text pairs available from n paired samples, m images and h sentences."""
    if min(n, m, h) < 0:
        raise ValueError("counts must be non-negative")
    return (n + m) * (n + h)


class DecoupledSampler:
    """Draws images and texts independently, without replacement within a batch.

    ``mode="stratified"`` first picks a finding uniformly among those present
    in each pool, then a record carrying it (still without replacement).
    One instance per consumer; batches are a pure function of (seed, step).
    """

    def __init__(self, image_pool: Sequence, text_pool: Sequence, batch_size: int,
                 seed: int = 0, mode: str = "uniform"):
        if batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if len(image_pool) < batch_size or len(text_pool) < batch_size:
            raise InsufficientDataError(
                f"need {batch_size} records per pool, have {len(image_pool)} images "
                f"and {len(text_pool)} texts"
            )
        if mode not in ("uniform", "stratified"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        self.image_pool = image_pool
        self.text_pool = text_pool
        self.batch_size = batch_size
        self.seed = seed
        self.mode = mode
        if mode == "stratified":
            self._img_groups = _group_by_finding(image_pool)
            self._txt_groups = _group_by_finding(text_pool)

    def indices(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, step])
        if self.mode == "uniform":
            ii = rng.choice(len(self.image_pool), self.batch_size, replace=False)
            tt = rng.choice(len(self.text_pool), self.batch_size, replace=False)
        else:
            ii = _stratified_draw(rng, self._img_groups, self.batch_size)
            tt = _stratified_draw(rng, self._txt_groups, self.batch_size)
        return ii, tt

    def sample(self, step: int) -> Batch:
        ii, tt = self.indices(step)
        return Batch([self.image_pool[i] for i in ii], [self.text_pool[j] for j in tt], ii, tt)


class PairedSampler:
    """Draws original (image, text) pairs sharing a study id. Baseline only."""

    def __init__(self, image_pool: Sequence, text_pool: Sequence, batch_size: int, seed: int = 0):
        by_study: dict[str, list[int]] = {}
        for j, rec in enumerate(text_pool):
            if rec.study_id is not None:
                by_study.setdefault(rec.study_id, []).append(j)
        self.pairs = [(i, by_study[rec.study_id][0]) for i, rec in enumerate(image_pool)
                      if rec.study_id in by_study]
        if len(self.pairs) < batch_size:
            raise InsufficientDataError(f"need {batch_size} paired samples, have {len(self.pairs)}")
        self.image_pool = image_pool
        self.text_pool = text_pool
        self.batch_size = batch_size
        self.seed = seed

    def indices(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, step])
        pick = rng.choice(len(self.pairs), self.batch_size, replace=False)
        pairs = np.asarray(self.pairs)[pick]
        return pairs[:, 0], pairs[:, 1]

    def sample(self, step: int) -> Batch:
        ii, tt = self.indices(step)
        return Batch([self.image_pool[i] for i in ii], [self.text_pool[j] for j in tt], ii, tt)


def _group_by_finding(pool) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for idx, rec in enumerate(pool):
        for ft in rec.label.findings:
            groups.setdefault(int(ft), []).append(idx)
    return groups


def _stratified_draw(rng, groups: dict[int, list[int]], k: int) -> np.ndarray:
    keys = sorted(groups)
    taken: set[int] = set()
    out = []
    while len(out) < k:
        members = [i for i in groups[keys[rng.integers(len(keys))]] if i not in taken]
        if not members:
            continue
        pick = members[rng.integers(len(members))]
        taken.add(pick)
        out.append(pick)
    return np.asarray(out)


def decoupled_sample(image_pool: Sequence, text_pool: Sequence, n_batch: int,
                     rng_seed: int) -> Batch:
    """One independently drawn batch; identical for identical seeds."""
    return DecoupledSampler(image_pool, text_pool, n_batch, seed=rng_seed).sample(0)


def write_matrix(matrix: np.ndarray, out_path: str | Path, meta: dict) -> Path:
    """Write a row-major float32 matrix and a ``<out>.json`` sidecar with a checksum."""
    out_path = Path(out_path)
    data = np.ascontiguousarray(matrix, dtype="<f4")
    blob = data.tobytes(order="C")
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(blob)
        sidecar = dict(meta)
        sidecar.update(rows=int(data.shape[0]), cols=int(data.shape[1]), dtype="float32",
                       order="row-major", sha256=hashlib.sha256(blob).hexdigest())
        sidecar_path(out_path).write_text(json.dumps(sidecar, indent=1))
    except OSError as exc:
        raise OSError(f"cannot write matrix to {out_path}: {exc}") from exc
    return out_path


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_matrix(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    blob = path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
        raise ValueError(f"checksum mismatch for {path}")
    return np.frombuffer(blob, dtype="<f4").reshape(meta["rows"], meta["cols"]), meta


def build_pool_matrix(img_ids, img_labels, txt_ids, txt_labels, out_path) -> Path:
    s = similarity_matrix(img_labels, txt_labels)
    return write_matrix(s, out_path, {"row_ids": list(img_ids), "col_ids": list(txt_ids),
                                      "findings": list(FINDING_NAMES)})


__all__ = [
    "Batch", "DecoupledSampler", "DegenerateLabelError", "FindingType", "ImageRecord",
    "InsufficientDataError", "PairedSampler", "SentenceRecord", "SimilarityBundle",
    "build_pool_matrix", "build_soft_targets", "count_supervision_pairs", "decoupled_sample",
    "read_matrix", "semantic_similarity", "similarity_matrix", "soft_targets_from_similarity",
    "write_matrix",
]
