"""The fixed 14-type finding vocabulary and the multi-hot label built on it."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np


class FindingType(IntEnum):
    """Finding types in label-vector order (index 0 = No Finding)."""

    NO_FINDING = 0
    ENLARGED_CARDIOMEDIASTINUM = 1
    CARDIOMEGALY = 2
    LUNG_OPACITY = 3
    LUNG_LESION = 4
    EDEMA = 5
    CONSOLIDATION = 6
    PNEUMONIA = 7
    ATELECTASIS = 8
    PNEUMOTHORAX = 9
    PLEURAL_EFFUSION = 10
    PLEURAL_OTHER = 11
    FRACTURE = 12
    SUPPORT_DEVICES = 13

    @property
    def display_name(self) -> str:
        return FINDING_NAMES[self.value]

    @classmethod
    def from_name(cls, name: str) -> "FindingType":
        key = " ".join(name.strip().lower().replace("_", " ").split())
        for ft in cls:
            if FINDING_NAMES[ft.value].lower() == key:
                return ft
        raise KeyError(f"not a finding type: {name!r}")


FINDING_NAMES = (
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
)
NUM_FINDINGS = len(FINDING_NAMES)


@dataclass(frozen=True)
class FindingLabel:
    """Binary multi-hot vector over the 14 finding types.

    The No Finding bit is exclusive: it may only be set on its own.
    """

    bits: tuple[int, ...] = (0,) * NUM_FINDINGS

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) != NUM_FINDINGS:
            raise ValueError(f"label must have {NUM_FINDINGS} bits, got {len(bits)}")
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"label bits must be 0/1: {bits}")
        if bits[FindingType.NO_FINDING] and sum(bits) > 1:
            raise ValueError("No Finding cannot be combined with another finding")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_findings(cls, findings: Iterable[FindingType | int | str]) -> "FindingLabel":
        bits = [0] * NUM_FINDINGS
        for f in findings:
            if isinstance(f, str):
                f = FindingType.from_name(f)
            bits[int(f)] = 1
        return cls(tuple(bits))

    @classmethod
    def from_array(cls, arr: Sequence[int] | np.ndarray) -> "FindingLabel":
        return cls(tuple(int(x) for x in arr))

    @property
    def unlabeled(self) -> bool:
        return not any(self.bits)

    @property
    def findings(self) -> list[FindingType]:
        return [FindingType(i) for i, b in enumerate(self.bits) if b]

    @property
    def names(self) -> list[str]:
        return [FINDING_NAMES[i] for i, b in enumerate(self.bits) if b]

    def to_array(self, dtype=np.float64) -> np.ndarray:
        return np.asarray(self.bits, dtype=dtype)

    def to_list(self) -> list[int]:
        return list(self.bits)

    def __repr__(self) -> str:
        return f"FindingLabel({self.names or 'unlabeled'})"
