"""Built-in test/syntax runner for workspaces running without a container.

Emits the same JSON report shape as the adapter scripts baked into the
default sandbox image, so the Output Organizer cannot tell them apart:

    {"summary": {...}, "failures": [{"test": id, "message": text}, ...]}

Usage (wired through the project profile):

    python3 -m autodev.stub_runner test [target]
    python3 -m autodev.stub_runner syntax <file>

Exit codes: 0 all passed / syntax ok, 1 failures / syntax error, 3 the
runner itself failed (bad target, import error). Stdout is always a single
JSON document.
"""

from __future__ import annotations

import argparse
import importlib.util
import json
import shutil
import sys
import traceback
import uuid
from pathlib import Path

# An edit can land within the same mtime second (and byte size) as the file
# a previous run cached, which makes stale .pyc files look valid. Never
# trust or write bytecode caches for workspace code.
sys.dont_write_bytecode = True


def _purge_bytecode(root: Path) -> None:
    for cache_dir in root.rglob("__pycache__"):
        shutil.rmtree(cache_dir, ignore_errors=True)


def _summary(passed: int, failed: int, total: int, collected: int) -> dict:
    """Zero-valued passed/failed keys are omitted, except in the all-zero
    no-tests report."""
    if collected == 0 and total == 0:
        return {"passed": 0, "failed": 0, "total": 0, "collected": 0}
    summary: dict = {}
    if passed:
        summary["passed"] = passed
    if failed:
        summary["failed"] = failed
    summary["total"] = total
    summary["collected"] = collected
    return summary


def _load_module(path: Path):
    """Import a test file, registering its directory as a package when it is
    one so relative imports inside the file resolve."""
    parent = path.parent
    init = parent / "__init__.py"
    if init.exists():
        pkg_name = f"_stubpkg_{parent.name}_{uuid.uuid4().hex[:8]}"
        pkg_spec = importlib.util.spec_from_file_location(
            pkg_name, init, submodule_search_locations=[str(parent)])
        pkg = importlib.util.module_from_spec(pkg_spec)
        sys.modules[pkg_name] = pkg
        pkg_spec.loader.exec_module(pkg)
        mod_name = f"{pkg_name}.{path.stem}"
    else:
        mod_name = f"_stubmod_{path.stem}_{uuid.uuid4().hex[:8]}"
        sys.path.insert(0, str(parent))
    spec = importlib.util.spec_from_file_location(mod_name, path)
    module = importlib.util.module_from_spec(spec)
    sys.modules[mod_name] = module
    # Compile from source rather than exec_module so a cached .pyc can
    # never shadow an edit made moments ago.
    code = compile(path.read_text(encoding="utf-8"), str(path), "exec")
    exec(code, module.__dict__)
    return module


def _failure_message(exc: BaseException, test_file: Path) -> str:
    """One-line failure description, pointing at the statement that raised."""
    name = type(exc).__name__
    text = str(exc)
    source_line = None
    for frame in reversed(traceback.extract_tb(exc.__traceback__)):
        if Path(frame.filename) == test_file and frame.line:
            source_line = frame.line.strip()
            break
    if text:
        return f"{name}: {text}"
    if source_line:
        return f"{name}: {source_line}"
    return name


def run_tests(target: str | None, root: Path) -> tuple[dict, int]:
    """Discover and run test_* functions; returns (report, exit_code)."""
    _purge_bytecode(root)
    if target:
        candidate = root / target.lstrip("/")
        if not candidate.exists():
            return {"error": f"no such test target: {target}"}, 3
        files = [candidate] if candidate.is_file() else sorted(candidate.rglob("test_*.py"))
    else:
        files = sorted(root.rglob("test_*.py"))
        files = [f for f in files if ".autodev" not in f.parts and ".git" not in f.parts]

    passed = failed = collected = 0
    failures: list[dict] = []
    for path in files:
        try:
            module = _load_module(path)
        except BaseException as exc:
            return {"error": f"collection failed for {path.name}: "
                             f"{type(exc).__name__}: {exc}"}, 3
        tests = [(name, fn) for name, fn in sorted(vars(module).items())
                 if name.startswith("test_") and callable(fn)]
        collected += len(tests)
        for name, fn in tests:
            test_id = f"{path.name}::{name}"
            try:
                fn()
                passed += 1
            except BaseException as exc:
                failed += 1
                failures.append({"test": test_id,
                                 "message": _failure_message(exc, path)})

    report = {"summary": _summary(passed, failed, passed + failed, collected)}
    if failures:
        report["failures"] = failures
    return report, (0 if failed == 0 else 1)


def check_syntax(file: str, root: Path) -> tuple[dict, int]:
    path = root / file.lstrip("/")
    if not path.is_file():
        return {"error": f"no such file: {file}"}, 3
    try:
        source = path.read_text(encoding="utf-8", errors="replace")
        compile(source, str(path), "exec")
    except SyntaxError as exc:
        return {"ok": False, "error": {"line": exc.lineno or 0,
                                       "message": exc.msg or "syntax error"}}, 1
    return {"ok": True}, 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="autodev-stub-runner", add_help=True)
    sub = parser.add_subparsers(dest="verb", required=True)
    p_test = sub.add_parser("test")
    p_test.add_argument("target", nargs="?", default=None)
    p_syntax = sub.add_parser("syntax")
    p_syntax.add_argument("file")
    args = parser.parse_args(argv)

    root = Path.cwd()
    try:
        if args.verb == "test":
            report, code = run_tests(args.target, root)
        else:
            report, code = check_syntax(args.file, root)
    except Exception as exc:  # never emit non-JSON output
        report, code = {"error": f"{type(exc).__name__}: {exc}"}, 3
    print(json.dumps(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
