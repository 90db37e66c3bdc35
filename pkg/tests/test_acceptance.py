"""End-to-end acceptance criteria; each test prints one PASS/FAIL line.

Run alone with ``pytest -s tests/test_acceptance.py`` or ``dlc selftest``.
"""
import pytest

from dlc import acceptance

SLOW = {3, 6, 9}


@pytest.mark.parametrize(
    "number",
    [pytest.param(k, marks=pytest.mark.slow) if k in SLOW else k for k in sorted(acceptance.CRITERIA)],
    ids=lambda k: f"criterion_{k}",
)
def test_criterion(number, capsys):
    res = acceptance.run(number)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.detail
