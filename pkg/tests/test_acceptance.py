"""End-to-end acceptance gate: every criterion at its stated tolerance.

The full run (twice, for the determinism check) takes a couple of minutes.
One pass/fail line per criterion is printed in the terminal summary.
"""

from __future__ import annotations

import pytest

from fiberlab.verification import ALL_CRITERIA, VerifyConfig, run_verify, summary_lines


@pytest.fixture(scope="module")
def verdicts(request):
    report = run_verify(VerifyConfig(seed=0, repeat=True))
    request.config.acceptance_lines = summary_lines(report)
    return {int(c): (ok, detail) for c, ok, detail in report.verdicts}


def test_every_criterion_reported(verdicts):
    assert sorted(verdicts) == list(ALL_CRITERIA)


@pytest.mark.parametrize("criterion", ALL_CRITERIA)
def test_criterion(verdicts, criterion):
    ok, detail = verdicts[criterion]
    assert ok, f"criterion {criterion} failed: {detail}"
