"""Decoupled image-text contrastive pretraining with label-driven soft targets."""

from decoclip.findings import FINDING_NAMES, FindingLabel, FindingType

__version__ = "0.1.0"
__all__ = ["FINDING_NAMES", "FindingLabel", "FindingType", "__version__"]
