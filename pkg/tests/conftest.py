import re

import pytest

from osagdo import data
from osagdo.encoders import EncoderSpec

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def fixture_manifest(tmp_path_factory):
    return data.make_fixture(7, tmp_path_factory.mktemp("fixture"))


@pytest.fixture(scope="session")
def small_enc():
    """Reduced toy encoder for fast training-loop tests."""
    return EncoderSpec(input_size=112, patch_size=14, C=48, C_t=16, d_tok=12)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    k = int(m.group(1))
    if report.failed or (report.when == "call" and k not in _ACCEPTANCE):
        _ACCEPTANCE[k] = (m.group(2).replace("_", " "), "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        name, status = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k} ({name}): {status}")
