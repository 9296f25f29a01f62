"""Linear probe on frozen image embeddings."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from decoclip.encoders import DualEncoder, state_hash
from decoclip.evaluation.zeroshot import EvalReport, embed_image_records
from decoclip.pairing import ImageRecord


class FrozenParameterDrift(RuntimeError):
    pass


def head_parameter_count(proj_dim: int, n_classes: int) -> int:
    return proj_dim * n_classes + n_classes


def linear_probe(model: DualEncoder, train_images: Sequence[ImageRecord], train_labels,
                 test_images: Sequence[ImageRecord], test_labels, classes: Sequence[str],
                 epochs: int = 300, lr: float = 0.05, weight_decay: float = 0.0,
                 seed: int = 0) -> tuple[EvalReport, nn.Linear]:
    """Train a fresh linear head on frozen embeddings; report test accuracy."""
    frozen = nn.ModuleList([model.vision, model.img_head])
    before = state_hash(frozen)
    for p in frozen.parameters():
        p.requires_grad_(False)
    try:
        x_train = embed_image_records(model, train_images)
        x_test = embed_image_records(model, test_images)
        y_train = torch.as_tensor(np.asarray(train_labels), dtype=torch.long)

        torch.manual_seed(seed)
        head = nn.Linear(x_train.shape[1], len(classes)).to(x_train.dtype)
        opt = torch.optim.Adam(head.parameters(), lr=lr, weight_decay=weight_decay)
        loss_fn = nn.CrossEntropyLoss()
        for _ in range(epochs):
            opt.zero_grad()
            loss = loss_fn(head(x_train), y_train)
            loss.backward()
            opt.step()
    finally:
        for p in frozen.parameters():
            p.requires_grad_(True)
    if state_hash(frozen) != before:
        raise FrozenParameterDrift("image encoder parameters changed during linear probing")

    with torch.no_grad():
        pred = head(x_test).argmax(1).numpy()
    y_test = np.asarray(test_labels, dtype=int)
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(confusion, (y_test, pred), 1)
    acc = float(np.mean(pred == y_test)) if len(y_test) else 0.0
    report = EvalReport(list(classes), confusion, [acc],
                        {"frozen_hash": before[:16], "head_params": head_parameter_count(x_train.shape[1], len(classes))})
    return report, head
