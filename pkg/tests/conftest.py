import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_verdicts: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")
    config.addinivalue_line("markers", "slow: desk-scale training runs (tens of minutes on one core)")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    if call.excinfo is None:
        verdict, detail = "PASS", ""
    elif call.excinfo.typename == "Skipped":
        verdict, detail = "SKIP", str(call.excinfo.value)
    else:
        message = str(call.excinfo.value).strip()
        verdict, detail = "FAIL", message.splitlines()[0] if message else call.excinfo.typename
    note = getattr(item, "criterion_note", "")
    _verdicts[number] = (verdict, title, "; ".join(x for x in (note, detail) if x))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        verdict, title, detail = _verdicts[number]
        line = f"criterion {number:2d}  {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
