import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

os.environ.setdefault("PIPELINE_PRECISION", "64")

# single-core sandboxes make per-example timing noisy
settings.register_profile("default_no_deadline", deadline=None)
settings.load_profile("default_no_deadline")
sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def read_golden_prep():
    """(input, expected) pairs; a literal backslash-t in an input is a TAB."""
    pairs = []
    for line in (FIXTURES / "prep_golden.tsv").read_text(encoding="utf-8").splitlines():
        raw, _, expected = line.partition("\t")
        pairs.append((raw.replace("\\t", "\t"), expected))
    return pairs


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE_RESULTS: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: yields a dict the test fills with a detail
    string; the outcome comes from the test result."""
    entry = {"detail": ""}
    yield entry
    rep = getattr(request.node, "rep_call", None)
    if rep is None or rep.skipped:
        status = "SKIP"
    else:
        status = "PASS" if rep.passed else "FAIL"
    ACCEPTANCE_RESULTS.append((request.node.name, status, entry["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status:<5} {name}  {detail}")
