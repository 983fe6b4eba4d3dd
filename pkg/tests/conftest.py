import json
from pathlib import Path

import pytest

from sdoh_forge.corpus import CategoryConfig, Label

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    detail = getattr(item, "acceptance_detail", "")
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "FAIL"
        _acceptance[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        status, title, detail = _acceptance[number]
        line = f"criterion {number}: {status} - {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """Attach a measured-value note to the acceptance summary line."""
    def _record(text):
        request.node.acceptance_detail = text
    return _record


@pytest.fixture(scope="session")
def tobacco_cfg():
    return CategoryConfig(
        name="tobacco",
        merge_map={"Present": "POSITIVE", "Past": "POSITIVE", "Never": "NEGATIVE",
                   "No Mention": "NEGATIVE", "Unsure": "DROP"},
        role_text="You are a careful clinical annotator.",
        task_text="Decide whether the note documents the category.",
        specific_text="Category: smoking history (current or former tobacco use).",
        mock_rules=[("never smoker|denies tobacco|non-smoker", Label.NEGATIVE),
                    ("smok|tobacco|ppd", Label.POSITIVE)],
    )


def write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path
