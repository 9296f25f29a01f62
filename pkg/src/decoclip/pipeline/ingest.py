"""Dataset adapters and the on-disk pool format.

Image pool directory: ``pixels.npy`` (N, H, W, C float32) and
``images.jsonl`` (id, label, study_id, one line per pixel row).
Text pool: a JSONL file of (id, text, label, study_id).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from decoclip.findings import FindingLabel, FindingType
from decoclip.labeler import (Lexicon, UnmappedClassError, class_to_label, label_sentence,
                              split_report)
from decoclip.pairing import ImageRecord, SentenceRecord

log = logging.getLogger(__name__)

ADAPTERS = ("paired-report", "image-label", "text-only", "synthetic")


class IngestionError(RuntimeError):
    pass


@dataclass
class IngestStats:
    images: int = 0
    texts: int = 0
    dropped_unlabeled: int = 0
    malformed: int = 0
    warnings: list[str] = field(default_factory=list)


class _Malformed:
    def __init__(self, stats: IngestStats, limit: int, source):
        self.stats, self.limit, self.source = stats, limit, source

    def __call__(self, where, reason):
        self.stats.malformed += 1
        msg = f"{self.source}:{where}: skipped malformed row ({reason})"
        log.warning(msg)
        self.stats.warnings.append(msg)
        if self.stats.malformed > self.limit:
            raise IngestionError(f"{self.source}: more than {self.limit} malformed rows, aborting")


def _read_jsonl(path: Path, bad: _Malformed):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict):
                    raise ValueError("not an object")
            except ValueError as exc:
                bad(lineno, exc)
                continue
            yield lineno, row


def write_image_pool(directory: str | Path, records: list[ImageRecord]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pixels = np.stack([np.asarray(r.pixels, dtype=np.float32) for r in records]) if records \
        else np.zeros((0, 1, 1, 1), np.float32)
    np.save(directory / "pixels.npy", pixels)
    with open(directory / "images.jsonl", "w") as fh:
        for row, r in enumerate(records):
            fh.write(json.dumps({"id": r.id, "row": row, "label": r.label.to_list(),
                                 "findings": r.label.names, "study_id": r.study_id}) + "\n")
    return directory


def write_text_pool(path: str | Path, records: list[SentenceRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "text": r.text, "label": r.label.to_list(),
                                 "findings": r.label.names, "study_id": r.study_id}) + "\n")
    return path


def _load_pixels(directory: Path) -> np.ndarray:
    path = directory / "pixels.npy"
    if not path.exists():
        raise IngestionError(f"missing {path}")
    pixels = np.load(path)
    if pixels.ndim == 3:
        pixels = pixels[..., None]
    return pixels


def read_image_pool(directory: str | Path, max_malformed: int = 10,
                    stats: IngestStats | None = None) -> list[ImageRecord]:
    directory = Path(directory)
    stats = stats if stats is not None else IngestStats()
    bad = _Malformed(stats, max_malformed, directory / "images.jsonl")
    pixels = _load_pixels(directory)
    out = []
    for lineno, row in _read_jsonl(directory / "images.jsonl", bad):
        try:
            label = FindingLabel.from_array(row["label"])
            idx = int(row.get("row", lineno - 1))
            px = pixels[idx]
        except (KeyError, ValueError, IndexError, TypeError) as exc:
            bad(lineno, exc)
            continue
        if label.unlabeled:
            stats.dropped_unlabeled += 1
            continue
        out.append(ImageRecord(str(row["id"]), px, label, row.get("study_id")))
    stats.images += len(out)
    return out


def read_text_pool(path: str | Path, lexicon: Lexicon | None = None, uncertain: str = "affirm",
                   max_malformed: int = 10, stats: IngestStats | None = None) -> list[SentenceRecord]:
    """Read sentences; rows without a ``label`` are labeled (reports are split first)."""
    path = Path(path)
    stats = stats if stats is not None else IngestStats()
    bad = _Malformed(stats, max_malformed, path)
    out = []
    for lineno, row in _read_jsonl(path, bad):
        text = row.get("text", row.get("sentence"))
        if not isinstance(text, str) or "id" not in row:
            bad(lineno, "needs 'id' and 'text'")
            continue
        rid = str(row["id"])
        study = row.get("study_id", row.get("report_id"))
        if "label" in row:
            try:
                label = FindingLabel.from_array(row["label"])
            except (ValueError, TypeError) as exc:
                bad(lineno, exc)
                continue
            candidates = [(rid, text, label)]
        else:
            study = study or rid
            candidates = []
            for k, sent in enumerate(split_report(text)):
                label, _ = label_sentence(sent, lexicon, uncertain)
                candidates.append((f"{rid}#{k}", sent, label))
        for cid, sent, label in candidates:
            if label.unlabeled or len(sent.split()) < 3:
                stats.dropped_unlabeled += 1
                continue
            out.append(SentenceRecord(cid, sent, label, study))
    stats.texts += len(out)
    return out


def aggregate_report_label(sentence_labels: list[FindingLabel]) -> FindingLabel:
    """Union of sentence findings; No Finding only when nothing else is present."""
    bits = np.zeros(len(FindingType), dtype=int)
    for lab in sentence_labels:
        bits |= np.asarray(lab.bits)
    if bits[1:].any():
        bits[FindingType.NO_FINDING] = 0
    return FindingLabel.from_array(bits)


def _ingest_paired(directory: Path, lexicon, uncertain, max_malformed, stats):
    bad = _Malformed(stats, max_malformed, directory / "reports.jsonl")
    pixels = _load_pixels(directory)
    images, texts = [], []
    for lineno, row in _read_jsonl(directory / "reports.jsonl", bad):
        if "id" not in row or not isinstance(row.get("text"), str):
            bad(lineno, "needs 'id' and 'text'")
            continue
        rid = str(row["id"])
        study = str(row.get("study_id", rid))
        labels = []
        for k, sent in enumerate(split_report(row["text"])):
            label, _ = label_sentence(sent, lexicon, uncertain)
            if label.unlabeled:
                stats.dropped_unlabeled += 1
                continue
            labels.append(label)
            texts.append(SentenceRecord(f"{rid}#{k}", sent, label, study))
        report_label = aggregate_report_label(labels)
        try:
            px = pixels[int(row.get("row", lineno - 1))]
        except (IndexError, ValueError) as exc:
            bad(lineno, exc)
            continue
        if report_label.unlabeled:
            stats.dropped_unlabeled += 1
            continue
        images.append(ImageRecord(rid, px, report_label, study))
    return images, texts


def _ingest_image_label(directory: Path, lexicon, max_malformed, stats):
    csv_path = directory / "labels.csv"
    bad = _Malformed(stats, max_malformed, csv_path)
    pixels = _load_pixels(directory)
    images = []
    with open(csv_path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                label = class_to_label(row["class_name"], lexicon)
                px = pixels[int(row["row"]) if row.get("row") else lineno - 2]
                rid = row["id"]
            except (KeyError, IndexError, ValueError, TypeError, UnmappedClassError) as exc:
                bad(lineno, exc)
                continue
            images.append(ImageRecord(rid, px, label, None))
    return images


def ingest_dataset(adapter: str, path: str | Path, lexicon: Lexicon | None = None,
                   uncertain: str = "affirm", max_malformed: int = 10):
    """Load ``(image_pool, text_pool, stats)`` through one of the named adapters.

    paired-report  directory with ``pixels.npy`` + ``reports.jsonl``; feeds both pools
    image-label    directory with ``pixels.npy`` + ``labels.csv`` (id, class_name[, row])
    text-only      JSONL file of reports or pre-labeled sentences
    synthetic      directory written by ``gen-synthetic``
    """
    if adapter not in ADAPTERS:
        raise ValueError(f"unknown adapter {adapter!r}; expected one of {ADAPTERS}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    stats = IngestStats()
    images: list[ImageRecord] = []
    texts: list[SentenceRecord] = []
    if adapter == "paired-report":
        images, texts = _ingest_paired(path, lexicon, uncertain, max_malformed, stats)
        stats.images, stats.texts = len(images), len(texts)
    elif adapter == "image-label":
        images = _ingest_image_label(path, lexicon, max_malformed, stats)
        stats.images = len(images)
    elif adapter == "text-only":
        texts = read_text_pool(path, lexicon, uncertain, max_malformed, stats)
    else:
        images = read_image_pool(path, max_malformed, stats)
        texts = read_text_pool(path / "texts.jsonl", lexicon, uncertain, max_malformed, stats)
    if not images and not texts:
        msg = f"{path}: no usable records"
        log.warning(msg)
        stats.warnings.append(msg)
    if stats.dropped_unlabeled:
        log.info("%s: dropped %d unlabeled records", path, stats.dropped_unlabeled)
    return images, texts, stats
