#!/usr/bin/env python3
"""Check one Python file for syntax errors without executing it.

Usage: adapter_syntax <file>

Prints exactly one JSON document on stdout:

    {"ok": true}
    {"ok": false, "error": {"line": N, "message": "..."}}

Exit codes: 0 valid, 1 syntax error, 3 missing file or adapter failure.
Stdlib only.
"""

import json
import sys
from pathlib import Path


def main(argv):
    if len(argv) != 2:
        print(json.dumps({"error": "usage: adapter_syntax <file>"}))
        return 3
    path = Path(argv[1])
    if not path.is_file():
        print(json.dumps({"error": f"no such file: {argv[1]}"}))
        return 3
    try:
        source = path.read_text(encoding="utf-8", errors="replace")
        compile(source, str(path), "exec")
    except SyntaxError as exc:
        print(json.dumps({"ok": False,
                          "error": {"line": exc.lineno or 0,
                                    "message": exc.msg or "syntax error"}}))
        return 1
    except Exception as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}))
        return 3
    print(json.dumps({"ok": True}))
    return 0


def cli():
    sys.exit(main(sys.argv))


if __name__ == "__main__":
    cli()
