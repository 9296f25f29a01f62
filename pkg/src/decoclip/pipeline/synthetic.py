"""Planted-semantics corpus: images carry a stripe motif per finding and
sentences are filled templates whose label the rule labeler can recover.

Each finding owns a (pattern, frequency) motif. Patterns are horizontal or
vertical stripes, their sum (grid) or a diagonal cross-hatch, so every motif
survives horizontal flips and small rotations. No Finding is a bare
noisy background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from decoclip.findings import FINDING_NAMES, FindingLabel, FindingType
from decoclip.evaluation.prompts import FINDING_PHRASES
from decoclip.pairing import ImageRecord, SentenceRecord

PHRASES = FINDING_PHRASES


MOTIFS: dict[FindingType, tuple[str, float]] = {
    FindingType.ATELECTASIS: ("h", 3.5),
    FindingType.CARDIOMEGALY: ("v", 3.5),
    FindingType.EDEMA: ("grid", 6.0),
    FindingType.PLEURAL_EFFUSION: ("diag", 3.5),
    FindingType.CONSOLIDATION: ("h", 10.0),
    FindingType.ENLARGED_CARDIOMEDIASTINUM: ("v", 10.0),
    FindingType.LUNG_OPACITY: ("h", 2.0),
    FindingType.LUNG_LESION: ("v", 2.0),
    FindingType.PNEUMONIA: ("grid", 2.0),
    FindingType.PNEUMOTHORAX: ("diag", 10.0),
    FindingType.PLEURAL_OTHER: ("grid", 10.0),
    FindingType.FRACTURE: ("diag", 6.0),
    FindingType.SUPPORT_DEVICES: ("h", 6.0),
}

SEVERITIES = ("mild", "moderate", "severe", "small", "large", "subtle", "minimal")
LOCATIONS = ("right lower lobe", "left lower lobe", "right upper lobe", "left upper lobe",
             "right base", "left base", "both bases", "perihilar region", "left apex",
             "retrocardiac region")

AFFIRM_TEMPLATES = (
    "there is {sev} {p} in the {loc}",
    "{sev} {p} is seen in the {loc}",
    "the radiograph demonstrates {sev} {p}",
    "findings are consistent with {sev} {p}",
    "{sev} {p} is present in the {loc}",
    "interval development of {sev} {p} in the {loc}",
)
MULTI_TEMPLATES = (
    "there is {sev} {p} and {p2} in the {loc}",
    "{sev} {p} with associated {p2} is noted",
)
NEGATE_TEMPLATES = (
    "there is no {p} in the {loc}",
    "no evidence of {p} is seen",
    "no {p} is identified on this study",
)
NORMAL_SENTENCES = (
    "no acute cardiopulmonary process is seen",
    "the lungs are clear without focal abnormality",
    "no acute intrathoracic process is identified",
)


@dataclass
class SyntheticCorpusSpec:
    n_images: int = 500
    n_sentences: int = 500
    findings: tuple[str, ...] = ("Atelectasis", "Cardiomegaly", "Edema", "Pleural Effusion",
                                 "Consolidation")
    class_probs: tuple[float, ...] | None = None
    multi_label_rate: float = 0.0
    negation_rate: float = 0.0
    paired: bool = True
    image_size: int = 32
    channels: int = 1
    amplitude: float = 0.35
    noise_std: float = 0.08

    def __post_init__(self):
        self.findings = tuple(self.findings)
        if not self.findings:
            raise ValueError("at least one finding is required")
        if self.class_probs is not None:
            self.class_probs = tuple(float(p) for p in self.class_probs)
            if len(self.class_probs) != len(self.findings) or abs(sum(self.class_probs) - 1) > 1e-9:
                raise ValueError("class_probs must match findings and sum to 1")
        if not 0 <= self.multi_label_rate <= 1 or not 0 <= self.negation_rate <= 1:
            raise ValueError("rates must lie in [0, 1]")
        if self.multi_label_rate > 0 and len(self.findings) < 2:
            raise ValueError("multi-label records need at least two findings")

    @property
    def finding_types(self) -> list[FindingType]:
        return [FindingType.from_name(f) for f in self.findings]


@dataclass
class SyntheticCorpus:
    images: list[ImageRecord]
    texts: list[SentenceRecord]
    image_truth: list[FindingLabel]
    text_truth: list[FindingLabel]
    spec: SyntheticCorpusSpec = field(repr=False, default=None)


def _pattern(kind: str, freq: float, size: int, phase: float) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size] / size
    w = 2 * np.pi * freq
    if kind == "h":
        return np.sin(w * y + phase)
    if kind == "v":
        return np.sin(w * x + phase)
    if kind == "grid":
        return 0.5 * (np.sin(w * y + phase) + np.sin(w * x + phase))
    if kind == "diag":
        return 0.5 * (np.sin(w * (x + y) / np.sqrt(2) + phase) + np.sin(w * (x - y) / np.sqrt(2) + phase))
    raise ValueError(kind)


def render_image(label: FindingLabel, spec: SyntheticCorpusSpec, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    img = np.full((size, size), 0.5)
    active = [f for f in label.findings if f in MOTIFS]
    for ft in active:
        kind, freq = MOTIFS[ft]
        amp = spec.amplitude * rng.uniform(0.8, 1.2) / len(active)
        img += amp * _pattern(kind, freq, size, rng.uniform(0, 2 * np.pi))
    img += rng.normal(0.0, spec.noise_std, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.repeat(img[..., None], spec.channels, axis=2).astype(np.float32)


def _sample_findings(spec: SyntheticCorpusSpec, rng) -> list[FindingType]:
    types = spec.finding_types
    first = types[rng.choice(len(types), p=spec.class_probs)]
    chosen = [first]
    if rng.random() < spec.multi_label_rate:
        rest = [t for t in types if t != first and t != FindingType.NO_FINDING]
        if first != FindingType.NO_FINDING and rest:
            chosen.append(rest[rng.integers(len(rest))])
    return chosen


def render_sentence(findings: list[FindingType], rng, negate: bool = False) -> tuple[str, FindingLabel]:
    """Sentence for the given findings, and the label it plants."""
    def pick(seq):
        return seq[rng.integers(len(seq))]

    if findings == [FindingType.NO_FINDING]:
        return pick(NORMAL_SENTENCES), FindingLabel.from_findings(findings)
    if negate:
        return (pick(NEGATE_TEMPLATES).format(p=pick(PHRASES[findings[0]]), loc=pick(LOCATIONS)),
                FindingLabel.from_findings([FindingType.NO_FINDING]))
    if len(findings) > 1:
        tmpl = pick(MULTI_TEMPLATES)
        text = tmpl.format(sev=pick(SEVERITIES), p=pick(PHRASES[findings[0]]),
                           p2=pick(PHRASES[findings[1]]), loc=pick(LOCATIONS))
    else:
        text = pick(AFFIRM_TEMPLATES).format(sev=pick(SEVERITIES), p=pick(PHRASES[findings[0]]),
                                             loc=pick(LOCATIONS))
    return text, FindingLabel.from_findings(findings)


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, seed: int = 0) -> SyntheticCorpus:
    """Generate image and text pools with known labels.

    With ``spec.paired`` the first ``min(n_images, n_sentences)`` images and
    sentences share a study id and a planted label, like a paired report
    dataset; the remainder are image-only or text-only records.
    """
    rng = np.random.default_rng(seed)
    n_pairs = min(spec.n_images, spec.n_sentences) if spec.paired else 0
    images, texts, img_truth, txt_truth = [], [], [], []
    for i in range(spec.n_images):
        findings = _sample_findings(spec, rng)
        label = FindingLabel.from_findings(findings)
        study = f"s{i:05d}" if i < n_pairs else None
        images.append(ImageRecord(f"img{i:05d}", render_image(label, spec, rng), label, study))
        img_truth.append(label)
        if i < n_pairs:
            text, tlabel = render_sentence(findings, rng, rng.random() < spec.negation_rate)
            texts.append(SentenceRecord(f"txt{i:05d}", text, tlabel, study))
            txt_truth.append(tlabel)
    for j in range(n_pairs, spec.n_sentences):
        findings = _sample_findings(spec, rng)
        text, tlabel = render_sentence(findings, rng, rng.random() < spec.negation_rate)
        texts.append(SentenceRecord(f"txt{j:05d}", text, tlabel, None))
        txt_truth.append(tlabel)
    return SyntheticCorpus(images, texts, img_truth, txt_truth, spec)


def class_index(label: FindingLabel, classes: list[str]) -> int:
    """Index of a single-finding label within ``classes``."""
    names = label.names
    if len(names) != 1 or names[0] not in classes:
        raise ValueError(f"label {names} is not exactly one of {classes}")
    return classes.index(names[0])


__all__ = ["FINDING_NAMES", "MOTIFS", "PHRASES", "SyntheticCorpus", "SyntheticCorpusSpec",
           "class_index", "generate_synthetic_corpus", "render_image", "render_sentence"]
