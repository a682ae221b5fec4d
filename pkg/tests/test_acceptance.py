"""Acceptance gate: one test per criterion, each at its stated tolerance."""

from __future__ import annotations

import shutil
import subprocess
import sys

import pytest

from hamfold import acceptance


@pytest.fixture(scope="module")
def ctx():
    return acceptance.Context(42)


@pytest.mark.parametrize("cid", [c for c in acceptance.CRITERIA if c != "10"])
def test_criterion(cid, ctx):
    r = acceptance.run_one(cid, ctx)
    print(r.line())
    assert r.passed, r.line() + (f" [{r.error}]" if r.error else "")


def test_criterion_10_selftest_reports_byte_identical(tmp_path):
    exe = shutil.which("hamfold")
    cmd = [exe] if exe else [sys.executable, "-m", "hamfold.cli"]
    reports = []
    for d in ("run1", "run2"):
        out = tmp_path / d
        subprocess.run([*cmd, "selftest", "--seed", "42", "--out", str(out)], capture_output=True, check=False)
        reports.append((out / "report.json").read_bytes())
    assert reports[0] == reports[1]
    print("PASS 10 selftest --seed 42 reports byte-identical")
