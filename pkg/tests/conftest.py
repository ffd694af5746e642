import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        previous = CRITERIA.get(number)
        if previous is not None:
            passed = passed and previous[0]
            detail = f"{previous[1]}; {detail}"
        CRITERIA[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, max(max(CRITERIA), 11) + 1):
        passed, detail = CRITERIA.get(number, (False, "no result recorded (test errored or was deselected)"))
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {detail}")
