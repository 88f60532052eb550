"""Collects acceptance-criterion verdicts and prints one line per criterion."""

import pytest

_VERDICTS: dict[str, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    def record(cid: str, passed: bool | None, detail: str) -> bool:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _VERDICTS[cid] = (status, detail)
        print(f"{cid} {status}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_VERDICTS, key=lambda c: int(c[1:])):
        status, detail = _VERDICTS[cid]
        terminalreporter.write_line(f"{cid:>4} {status}  {detail}")
