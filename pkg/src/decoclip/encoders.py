"""Vision/text encoders, projection heads and checkpoint I/O.

The reference encoders are deliberately small (a strided conv net and a
bag-of-embeddings text model) so training runs on a laptop CPU. Anything
with the same ``forward`` signatures can be swapped in.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from decoclip.loss import TAU_INIT, TAU_MAX, Temperature

NORM_EPS = 1e-12
PAD, UNK = "<pad>", "<unk>"
_WORD_RE = re.compile(r"[a-z0-9]+")


class EmptyInputError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass
class EncoderConfig:
    in_channels: int = 1
    image_size: int = 32
    conv_channels: tuple[int, ...] = (16, 32, 32)
    vision_dim: int = 64
    token_dim: int = 64
    text_dim: int = 64
    proj_dim: int = 32
    tau_init: float = TAU_INIT
    tau_max: float | None = TAU_MAX

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    """Token to id map; id 0 is padding and id 1 the unknown-token slot."""

    def __init__(self, tokens: Iterable[str]):
        self.itos = [PAD, UNK] + [t for t in tokens if t not in (PAD, UNK)]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1) -> "Vocabulary":
        counts = Counter(tok for text in texts for tok in tokenize(text))
        return cls(sorted(t for t, c in counts.items() if c >= min_count))

    def __len__(self):
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        toks = tokenize(text)
        if not toks:
            raise EmptyInputError(f"no tokens in text {text!r}")
        return [self.stoi.get(t, 1) for t in toks]

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode()).hexdigest()[:16]


class VisionEncoder(nn.Module):
    """Strided conv stack with global average pooling, output dim ``D``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        layers = []
        c_in = cfg.in_channels
        for k, c_out in enumerate(cfg.conv_channels):
            layers += [nn.Conv2d(c_in, c_out, 3, stride=1 if k == 0 else 2, padding=1), nn.GELU()]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(c_in, cfg.vision_dim)
        self.in_channels = cfg.in_channels
        self.image_size = cfg.image_size
        self.out_dim = cfg.vision_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1:] != (self.in_channels, self.image_size, self.image_size):
            raise ShapeError(
                f"expected (B, {self.in_channels}, {self.image_size}, {self.image_size}) "
                f"images, got {tuple(x.shape)}"
            )
        h = self.features(x - 0.5)
        return self.fc(h.mean(dim=(2, 3)))


class TextEncoder(nn.Module):
    """Token embeddings, mean-pooled over the sentence, then a dense layer."""

    def __init__(self, vocab: Vocabulary, cfg: EncoderConfig):
        super().__init__()
        self.vocab = vocab
        self.embed = nn.Embedding(len(vocab), cfg.token_dim, padding_idx=0)
        self.fc = nn.Linear(cfg.token_dim, cfg.text_dim)
        self.out_dim = cfg.text_dim

    def token_ids(self, texts: Sequence[str]) -> torch.Tensor:
        ids = [self.vocab.encode(t) for t in texts]
        width = max(len(x) for x in ids)
        return torch.tensor([x + [0] * (width - len(x)) for x in ids], dtype=torch.long)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        mask = (ids != 0).to(self.embed.weight.dtype).unsqueeze(-1)
        pooled = (self.embed(ids) * mask).sum(1) / mask.sum(1).clamp_min(1.0)
        return torch.tanh(self.fc(pooled))


class ProjectionHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim)
        self.in_dim, self.out_dim = in_dim, out_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"projection head expects dim {self.in_dim}, got {x.shape[-1]}")
        return self.linear(x)


def l2_normalize(p: torch.Tensor) -> torch.Tensor:
    return p / (p.norm(dim=-1, keepdim=True) + NORM_EPS)


def project_and_normalize(raw: torch.Tensor, head: ProjectionHead) -> tuple[torch.Tensor, torch.Tensor]:
    p = head(raw)
    return p, l2_normalize(p)


def images_to_tensor(pixels, dtype=None) -> torch.Tensor:
    """(B, H, W, C) or (H, W, C) arrays to a (B, C, H, W) tensor."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ShapeError(f"expected HxWxC images, got array of shape {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
    return t.to(dtype or torch.get_default_dtype())


class DualEncoder(nn.Module):
    """Both encoders, their projection heads and the shared temperature."""

    def __init__(self, vocab: Vocabulary, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or EncoderConfig()
        self.vision = VisionEncoder(cfg)
        self.text = TextEncoder(vocab, cfg)
        self.img_head = ProjectionHead(cfg.vision_dim, cfg.proj_dim)
        self.txt_head = ProjectionHead(cfg.text_dim, cfg.proj_dim)
        self.temperature = Temperature(cfg.tau_init, cfg.tau_max)

    @property
    def vocab(self) -> Vocabulary:
        return self.text.vocab

    @property
    def dtype(self) -> torch.dtype:
        return self.img_head.linear.weight.dtype

    def embed_images(self, x) -> tuple[torch.Tensor, torch.Tensor]:
        if not isinstance(x, torch.Tensor):
            x = images_to_tensor(x, self.dtype)
        return project_and_normalize(self.vision(x.to(self.dtype)), self.img_head)

    def embed_texts(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        return project_and_normalize(self.text(self.text.token_ids(texts)), self.txt_head)

    def encode_image(self, pixels) -> torch.Tensor:
        with torch.no_grad():
            return self.vision(images_to_tensor(pixels, self.dtype))[0]

    def encode_text(self, text: str) -> torch.Tensor:
        with torch.no_grad():
            return self.text(self.text.token_ids([text]))[0]


def encode_image(model: DualEncoder, pixels) -> torch.Tensor:
    return model.encode_image(pixels)


def encode_text(model: DualEncoder, text: str) -> torch.Tensor:
    return model.encode_text(text)


def state_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class CheckpointManifest:
    step: int
    epoch: int
    tau: float
    vocab_hash: str
    dtype: str
    encoder: dict
    checkpoint_id: str = ""
    extra: dict = field(default_factory=dict)


def save_checkpoint(model: DualEncoder, directory: str | Path, step: int = 0, epoch: int = 0,
                    extra: dict | None = None) -> CheckpointManifest:
    """Write ``params.npz``, ``vocab.json`` and ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(directory / "params.npz", **arrays)
    (directory / "vocab.json").write_text(json.dumps(model.vocab.itos))
    manifest = CheckpointManifest(
        step=step, epoch=epoch, tau=model.temperature.value, vocab_hash=model.vocab.hash,
        dtype=str(model.dtype).replace("torch.", ""), encoder=asdict(model.cfg),
        checkpoint_id=state_hash(model)[:16], extra=extra or {},
    )
    (directory / "manifest.json").write_text(json.dumps(asdict(manifest), indent=1))
    return manifest


def load_checkpoint(directory: str | Path) -> tuple[DualEncoder, CheckpointManifest]:
    directory = Path(directory)
    manifest = CheckpointManifest(**json.loads((directory / "manifest.json").read_text()))
    vocab = Vocabulary(json.loads((directory / "vocab.json").read_text())[2:])
    if vocab.hash != manifest.vocab_hash:
        raise ValueError(f"vocabulary hash mismatch in {directory}")
    model = DualEncoder(vocab, EncoderConfig(**manifest.encoder))
    model.to(getattr(torch, manifest.dtype))
    with np.load(directory / "params.npz") as blobs:
        state = {k: torch.from_numpy(blobs[k].copy()) for k in blobs.files}
    model.load_state_dict(state)
    model.eval()
    return model, manifest
