"""Embedding export: raw row-major float32 matrix plus a JSON sidecar."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from decoclip.encoders import DualEncoder
from decoclip.evaluation.zeroshot import embed_image_records, embed_texts
from decoclip.pairing import read_matrix, write_matrix


def export_embeddings(model: DualEncoder, records: Sequence, out_path: str | Path,
                      checkpoint_id: str = "", modality: str = "image") -> Path:
    if modality == "image":
        emb = embed_image_records(model, records)
    elif modality == "text":
        emb = embed_texts(model, [r.text for r in records])
    else:
        raise ValueError(f"unknown modality {modality!r}")
    meta = {
        "ids": [r.id for r in records],
        "labels": [r.label.to_list() for r in records],
        "dim": int(emb.shape[1]),
        "checkpoint_id": checkpoint_id,
        "modality": modality,
    }
    return write_matrix(emb.cpu().numpy(), out_path, meta)


def load_embeddings(path: str | Path):
    return read_matrix(path)
