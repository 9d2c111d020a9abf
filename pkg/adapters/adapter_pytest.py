#!/usr/bin/env python3
"""Run pytest and print a normalized JSON report on stdout.

Usage: adapter_pytest [target]

The report shape consumed by the conversation organizer:

    {"summary": {"passed": P, "failed": F, "total": T, "collected": C},
     "failures": [{"test": "<nodeid>", "message": "<text>"}, ...]}

Zero-valued passed/failed keys are omitted unless nothing ran at all.
Exit codes: 0 all passed, 1 failures, 3 collection or adapter failure.
Stdout is always exactly one JSON document; pytest's own terminal output
goes to stderr. Stdlib-only apart from pytest itself, which the sandbox
image provides.
"""

import json
import shutil
import sys
from pathlib import Path

# A fresh edit can share the mtime second and byte size of the file a
# previous run cached, so stale bytecode would look valid. Never write
# caches and drop any that exist before collecting.
sys.dont_write_bytecode = True


def _purge_bytecode(root):
    for cache_dir in Path(root).rglob("__pycache__"):
        shutil.rmtree(cache_dir, ignore_errors=True)


def _summary(passed, failed, total, collected):
    if collected == 0 and total == 0:
        return {"passed": 0, "failed": 0, "total": 0, "collected": 0}
    summary = {}
    if passed:
        summary["passed"] = passed
    if failed:
        summary["failed"] = failed
    summary["total"] = total
    summary["collected"] = collected
    return summary


class _Recorder:
    """pytest plugin: counts outcomes and keeps failure messages."""

    def __init__(self):
        self.collected = 0
        self.passed = 0
        self.failed = 0
        self.skipped = 0
        self.failures = []
        self.collection_errors = []

    def pytest_collection_finish(self, session):
        self.collected = len(session.items)

    def pytest_collectreport(self, report):
        if report.failed:
            self.collection_errors.append(self._message_of(report))

    def pytest_runtest_logreport(self, report):
        if report.when == "call":
            if report.passed:
                self.passed += 1
            elif report.failed:
                self.failed += 1
                self.failures.append({"test": report.nodeid,
                                      "message": self._message_of(report)})
            elif report.skipped:
                self.skipped += 1
        elif report.failed:  # setup/teardown error counts as a failure
            self.failed += 1
            self.failures.append({"test": report.nodeid,
                                  "message": self._message_of(report)})

    @staticmethod
    def _message_of(report):
        longrepr = getattr(report, "longrepr", None)
        crash = getattr(longrepr, "reprcrash", None)
        message = getattr(crash, "message", None)
        if message is None:
            message = str(longrepr) if longrepr is not None else "failure"
        return message[:2000]


def main(argv):
    try:
        import pytest
    except ImportError:
        print(json.dumps({"error": "pytest is not installed in this image"}))
        return 3

    target = argv[1] if len(argv) > 1 else None
    _purge_bytecode(".")
    recorder = _Recorder()
    args = ["-q", "-p", "no:cacheprovider"]
    if target:
        args.append(target)

    # pytest writes its terminal report to stdout; divert it to stderr so
    # stdout stays a single JSON document.
    real_stdout = sys.stdout
    sys.stdout = sys.stderr
    try:
        code = pytest.main(args, plugins=[recorder])
    except Exception as exc:
        sys.stdout = real_stdout
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}))
        return 3
    finally:
        sys.stdout = real_stdout

    if recorder.collection_errors:
        print(json.dumps(
            {"error": "collection failed: " + recorder.collection_errors[0]}))
        return 3
    if code not in (0, 1, 5):  # 5 = no tests collected
        print(json.dumps({"error": f"pytest exited with status {int(code)}"}))
        return 3

    total = recorder.passed + recorder.failed + recorder.skipped
    report = {"summary": _summary(recorder.passed, recorder.failed, total,
                                  recorder.collected)}
    if recorder.failures:
        report["failures"] = recorder.failures
    print(json.dumps(report))
    return 0 if recorder.failed == 0 else 1


def cli():
    sys.exit(main(sys.argv))


if __name__ == "__main__":
    cli()
