"""Class prompt generation for zero-shot inference.

Prompts are slot-filled templates (severity x location x phrasing); each
prompt seed draws a different subset, which is the run-to-run randomness
reported as a standard deviation.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from decoclip.findings import FindingType

FINDING_PHRASES: dict[FindingType, tuple[str, ...]] = {
    FindingType.NO_FINDING: ("no acute cardiopulmonary process", "lungs are clear"),
    FindingType.ENLARGED_CARDIOMEDIASTINUM: ("widened mediastinum", "mediastinal widening"),
    FindingType.CARDIOMEGALY: ("cardiomegaly", "cardiac enlargement"),
    FindingType.LUNG_OPACITY: ("opacity", "airspace disease", "opacification"),
    FindingType.LUNG_LESION: ("nodule", "pulmonary mass"),
    FindingType.EDEMA: ("edema", "pulmonary edema", "interstitial edema"),
    FindingType.CONSOLIDATION: ("consolidation", "airspace consolidation"),
    FindingType.PNEUMONIA: ("pneumonia", "bronchopneumonia"),
    FindingType.ATELECTASIS: ("atelectasis", "subsegmental atelectasis"),
    FindingType.PNEUMOTHORAX: ("pneumothorax", "apical pneumothorax"),
    FindingType.PLEURAL_EFFUSION: ("pleural effusion", "effusion", "pleural fluid"),
    FindingType.PLEURAL_OTHER: ("pleural thickening", "pleural scarring"),
    FindingType.FRACTURE: ("rib fracture", "fracture"),
    FindingType.SUPPORT_DEVICES: ("endotracheal tube", "chest tube", "pacemaker"),
}

SEVERITIES = ("", "mild", "moderate", "severe", "small", "large")
LOCATIONS = ("", "right lower lobe", "left lower lobe", "right base", "left base", "both bases",
             "right upper lobe")
TEMPLATES = (
    "{sev} {p}",
    "{sev} {p} in the {loc}",
    "there is {sev} {p}",
    "findings of {sev} {p} in the {loc}",
    "{p} is seen in the {loc}",
)


class PromptConfigError(ValueError):
    pass


@dataclass
class PromptSet:
    prompts: dict[str, list[str]]

    def __post_init__(self):
        for cls, items in self.prompts.items():
            if not items or any(not isinstance(p, str) or not p.strip() for p in items):
                raise PromptConfigError(f"class {cls!r} needs at least one non-empty prompt")

    @property
    def classes(self) -> list[str]:
        return list(self.prompts)

    def require(self, classes) -> None:
        missing = [c for c in classes if c not in self.prompts]
        if missing:
            raise PromptConfigError(f"no prompts for classes: {', '.join(missing)}")

    @classmethod
    def load(cls, path: str | Path) -> "PromptSet":
        data = json.loads(Path(path).read_text())
        return cls({k: list(v) for k, v in data["prompts"].items()})


def _fill(template: str, sev: str, phrase: str, loc: str) -> str:
    if "{loc}" in template and not loc:
        template = template.replace(" in the {loc}", "")
    return " ".join(template.format(sev=sev, p=phrase, loc=loc).split())


def all_prompts(finding: FindingType) -> list[str]:
    if finding == FindingType.NO_FINDING:
        return list(FINDING_PHRASES[finding])
    out = []
    for tmpl, sev, phrase, loc in itertools.product(TEMPLATES, SEVERITIES, FINDING_PHRASES[finding], LOCATIONS):
        text = _fill(tmpl, sev, phrase, loc)
        if text not in out:
            out.append(text)
    return out


def generate_prompts(classes, n_prompts: int = 10, seed: int = 0) -> PromptSet:
    """``n_prompts`` distinct generated prompts per class (fewer if the pool is smaller)."""
    rng = np.random.default_rng(seed)
    prompts = {}
    for name in classes:
        try:
            finding = FindingType.from_name(name)
        except KeyError:
            raise PromptConfigError(f"cannot generate prompts for unknown class {name!r}") from None
        pool = all_prompts(finding)
        pick = rng.choice(len(pool), size=min(n_prompts, len(pool)), replace=False)
        prompts[name] = [pool[i] for i in pick]
    return PromptSet(prompts)
