import numpy as np
import pytest
import torch

from decoclip.findings import FindingLabel, FindingType
from decoclip.pairing import ImageRecord, SentenceRecord
from decoclip.pipeline.synthetic import SyntheticCorpusSpec, generate_synthetic_corpus

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, name = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.when == "call":
        _CRITERIA[number] = (name, "PASS" if report.passed else "FAIL", detail)
    elif report.when == "setup" and report.failed:
        _CRITERIA[number] = (name, "ERROR", "setup failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        name, status, detail = _CRITERIA[number]
        line = f"criterion {number:>2}  {status:<5} {name}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)


@pytest.fixture(autouse=True)
def _float64_default():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def label(*names: str) -> FindingLabel:
    return FindingLabel.from_findings([FindingType.from_name(n) for n in names])


@pytest.fixture
def small_corpus():
    spec = SyntheticCorpusSpec(n_images=60, n_sentences=60, image_size=32)
    return generate_synthetic_corpus(spec, seed=3)


def make_image(i: int, lab: FindingLabel, size: int = 32) -> ImageRecord:
    rng = np.random.default_rng(i)
    return ImageRecord(f"img{i:03d}", rng.random((size, size, 1)).astype(np.float32), lab)


def make_text(i: int, text: str, lab: FindingLabel) -> SentenceRecord:
    return SentenceRecord(f"txt{i:03d}", text, lab)
