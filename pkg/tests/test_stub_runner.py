"""The built-in test/syntax runner must emit the adapter JSON shape."""

import json
import subprocess
import sys

import pytest

PY = sys.executable or "python3"


def run_stub(workspace, *args):
    proc = subprocess.run([PY, "-m", "autodev.stub_runner", *args],
                          cwd=workspace, capture_output=True, text=True,
                          timeout=60)
    return proc


def test_failing_fixture_summary(failing_workspace):
    proc = run_stub(failing_workspace, "test")
    report = json.loads(proc.stdout)
    assert report["summary"] == {"failed": 1, "total": 1, "collected": 1}
    assert proc.returncode == 1
    message = report["failures"][0]["message"]
    assert "AssertionError" in message


def test_passing_fixture_summary(passing_workspace):
    proc = run_stub(passing_workspace, "test")
    report = json.loads(proc.stdout)
    assert report["summary"] == {"passed": 1, "total": 1, "collected": 1}
    assert proc.returncode == 0
    assert "failures" not in report


def test_no_tests_all_zero_summary(tmp_path):
    ws = tmp_path / "empty"
    ws.mkdir()
    proc = run_stub(ws, "test")
    report = json.loads(proc.stdout)
    assert report["summary"] == {"passed": 0, "failed": 0, "total": 0,
                                 "collected": 0}
    assert proc.returncode == 0


def test_target_selects_single_file(failing_workspace):
    proc = run_stub(failing_workspace, "test",
                    "HumanEval_91/test_HumanEval_91.py")
    report = json.loads(proc.stdout)
    assert report["summary"]["collected"] == 1


def test_missing_target_exits_3(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    proc = run_stub(ws, "test", "ghost.py")
    assert proc.returncode == 3
    assert "error" in json.loads(proc.stdout)


def test_collection_error_exits_3(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / "test_broken.py").write_text("import does_not_exist_anywhere\n")
    proc = run_stub(ws, "test")
    assert proc.returncode == 3
    assert "error" in json.loads(proc.stdout)


def test_stale_bytecode_never_shadows_an_edit(tmp_path):
    """Editing a file between runs (same size, same mtime second) must not
    resurrect the previous run's results."""
    ws = tmp_path / "ws"
    ws.mkdir()
    target = ws / "test_flip.py"
    target.write_text("def test_flip():\n    assert 1 == 2\n")
    first = json.loads(run_stub(ws, "test").stdout)
    assert first["summary"]["failed"] == 1
    target.write_text("def test_flip():\n    assert 2 == 2\n")  # same length
    second = json.loads(run_stub(ws, "test").stdout)
    assert second["summary"] == {"passed": 1, "total": 1, "collected": 1}


def test_syntax_ok(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / "fine.py").write_text("x = 1\n")
    proc = run_stub(ws, "syntax", "fine.py")
    assert json.loads(proc.stdout) == {"ok": True}
    assert proc.returncode == 0


def test_syntax_error_reports_line(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    (ws / "bad.py").write_text("x = 1\ndef f(:\n    pass\n")
    proc = run_stub(ws, "syntax", "bad.py")
    report = json.loads(proc.stdout)
    assert report["ok"] is False
    assert report["error"]["line"] == 2
    assert proc.returncode == 1


def test_syntax_missing_file_exits_3(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    proc = run_stub(ws, "syntax", "ghost.py")
    assert proc.returncode == 3
    assert "error" in json.loads(proc.stdout)


@pytest.mark.parametrize("args", [("test",), ("syntax", "ghost.py")])
def test_stdout_is_always_single_json_document(tmp_path, args):
    ws = tmp_path / "ws"
    ws.mkdir()
    proc = run_stub(ws, *args)
    json.loads(proc.stdout)  # raises if not a single valid document
