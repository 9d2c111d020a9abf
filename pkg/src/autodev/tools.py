"""The tools library: file editing, retrieval, build/test execution, git.

Edits and searches are implemented natively (not by shelling out) so they
stay portable and confined; build/run/test/syntax/git delegate to the
sandbox session. Which argv each verb maps to comes from the workspace's
project profile (`.autodev/profile.yaml`), keeping the core
language-agnostic.
"""

from __future__ import annotations

import fnmatch
import hashlib
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import commands
from .commands import PermissionDenied, ValidatedCommand
from .sandbox import ExecutionResult, Session

WRITE_NEW = "write_new"
WRITE_RANGE = "write_range"
INSERT = "insert"
DELETE = "delete"

PROFILE_PATH = ".autodev/profile.yaml"

# Directories never searched or indexed
SKIP_DIRS = {".git", ".autodev", "__pycache__", ".pytest_cache", "node_modules"}

EMBED_DIM = 256
_EMBED_SEED = b"autodev-embed-v1"
_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class EditCommand:
    """One file edit. Ranges are 1-based inclusive; after_line 0 prepends."""

    kind: str  # WRITE_NEW | WRITE_RANGE | INSERT | DELETE
    path: str  # normalized workspace-relative
    start: int = 0
    end: int = 0
    after_line: int = 0
    content: Optional[str] = None

    @classmethod
    def from_validated(cls, vc: ValidatedCommand) -> "EditCommand":
        cmd = vc.command
        path = vc.paths[0]
        if cmd.name == "write-new":
            return cls(kind=WRITE_NEW, path=path, content=cmd.content)
        if cmd.name == "write":
            start, end = vc.ranges[1]
            return cls(kind=WRITE_RANGE, path=path, start=start, end=end,
                       content=cmd.content)
        if cmd.name == "insert":
            return cls(kind=INSERT, path=path, after_line=vc.ranges[1][0],
                       content=cmd.content)
        if cmd.name == "delete":
            start, end = vc.ranges[1]
            return cls(kind=DELETE, path=path, start=start, end=end)
        raise ValueError(f"not an edit command: {cmd.name}")


@dataclass(frozen=True)
class Snippet:
    path: str
    start_line: int
    end_line: int
    text: str
    score: float


@dataclass
class ToolOutcome:
    """What a tool produced: success flag, display text, optional raw result."""

    ok: bool
    display: str
    raw: Optional[ExecutionResult] = None


def display_path(rel: str) -> str:
    """Workspace paths are displayed with a leading slash."""
    return "/" + rel.lstrip("/")


def _normalize_text(data: bytes) -> tuple[str, bool]:
    """Decode and normalize line endings to \\n; reports whether CRLF was seen."""
    text = data.decode("utf-8", errors="replace")
    had_crlf = "\r" in text
    if had_crlf:
        text = text.replace("\r\n", "\n").replace("\r", "\n")
    return text, had_crlf


def _split_lines(text: str) -> tuple[list[str], bool]:
    trailing_newline = text.endswith("\n")
    lines = text.split("\n")
    if trailing_newline:
        lines.pop()
    return lines, trailing_newline


def apply_edit(edit: EditCommand, session: Session) -> ToolOutcome:
    """Apply one edit atomically (write-temp-then-rename via the session)."""
    shown = display_path(edit.path)
    notice = ""

    if edit.kind == WRITE_NEW:
        content = edit.content if edit.content is not None else ""
        try:
            session.sync_file(edit.path, content.encode("utf-8"))
        except OSError as exc:
            return ToolOutcome(False, f"io failure writing {shown}: {exc}")
        return ToolOutcome(True, f"Content successfully written to {shown}")

    try:
        data = session.read_file(edit.path)
    except FileNotFoundError:
        return ToolOutcome(False, f"file missing: {shown}")
    except IsADirectoryError:
        return ToolOutcome(False, f"not a file: {shown}")
    except OSError as exc:
        return ToolOutcome(False, f"io failure reading {shown}: {exc}")

    text, had_crlf = _normalize_text(data)
    if had_crlf:
        notice = " (CRLF line endings normalized to LF)"
    lines, trailing_newline = _split_lines(text)
    count = len(lines)

    if edit.kind == WRITE_RANGE or edit.kind == DELETE:
        start, end = edit.start, edit.end
        if start < 1 or start > end:
            return ToolOutcome(False, f"range out of bounds: {start}-{end}")
        if end > count:
            return ToolOutcome(
                False, f"range out of bounds: {start}-{end} (file has {count} lines)")
        if edit.kind == DELETE:
            new_lines = lines[:start - 1] + lines[end:]
            message = f"Lines {start}-{end} deleted from {shown}."
        else:
            new_lines = lines[:start - 1] + (edit.content or "").split("\n") + lines[end:]
            message = "File updates successfully."
    elif edit.kind == INSERT:
        after = edit.after_line
        if after < 0 or after > count:
            return ToolOutcome(
                False, f"range out of bounds: line {after} (file has {count} lines)")
        new_lines = lines[:after] + (edit.content or "").split("\n") + lines[after:]
        message = f"Content inserted after line {after} in {shown}."
    else:
        return ToolOutcome(False, f"unknown edit kind {edit.kind!r}")

    new_text = "\n".join(new_lines) + ("\n" if trailing_newline else "")
    try:
        session.sync_file(edit.path, new_text.encode("utf-8"))
    except OSError as exc:
        return ToolOutcome(False, f"io failure writing {shown}: {exc}")
    return ToolOutcome(True, message + notice)


def _is_binary(path: Path) -> bool:
    try:
        with open(path, "rb") as fp:
            return b"\x00" in fp.read(1024)
    except OSError:
        return True


def _iter_files(root: Path, rel_base: str = ".") -> list[str]:
    """Sorted workspace-relative paths of regular files, skipping tool dirs."""
    base = root if rel_base in (".", "") else root / rel_base
    found: list[str] = []
    for dirpath, dirnames, filenames in os.walk(base):
        dirnames[:] = sorted(d for d in dirnames if d not in SKIP_DIRS)
        for name in filenames:
            full = Path(dirpath) / name
            found.append(str(full.relative_to(root)))
    return sorted(found)


def search_workspace(kind: str, args: list[str], session: Session) -> ToolOutcome:
    """Native grep/find/ls/cat over the session workspace."""
    root = session.root
    if kind == "grep":
        pattern = args[0]
        base = args[1] if len(args) > 1 else "."
        target = root / base
        if not target.exists():
            return ToolOutcome(False, f"no such path: {display_path(base)}")
        try:
            rx = re.compile(pattern)
        except re.error:
            rx = re.compile(re.escape(pattern))
        if target.is_file():
            files = [base]
        else:
            files = _iter_files(root, base)
        hits: list[str] = []
        for rel in files:
            full = root / rel
            if _is_binary(full):
                continue
            text, _ = _normalize_text(full.read_bytes())
            for lineno, line in enumerate(text.split("\n"), start=1):
                if rx.search(line):
                    hits.append(f"{display_path(rel)}:{lineno}:{line}")
        if not hits:
            return ToolOutcome(True, "0 matches")
        return ToolOutcome(True, "\n".join(hits))

    if kind == "find":
        pattern = args[0]
        base = args[1] if len(args) > 1 else "."
        if not (root / base).exists():
            return ToolOutcome(False, f"no such path: {display_path(base)}")
        matches = [display_path(rel) for rel in _iter_files(root, base)
                   if fnmatch.fnmatch(Path(rel).name, pattern)]
        if not matches:
            return ToolOutcome(True, "0 matches")
        return ToolOutcome(True, "\n".join(matches))

    if kind == "ls":
        base = args[0] if args else "."
        target = root / base
        if not target.is_dir():
            return ToolOutcome(False, f"no such directory: {display_path(base)}")
        entries = []
        for entry in sorted(target.iterdir(), key=lambda p: p.name):
            entries.append(entry.name + "/" if entry.is_dir() else entry.name)
        return ToolOutcome(True, "\n".join(entries) if entries else "(empty directory)")

    if kind == "cat":
        rel = args[0]
        target = root / rel
        if not target.is_file():
            return ToolOutcome(False, f"no such file: {display_path(rel)}")
        text, _ = _normalize_text(target.read_bytes())
        return ToolOutcome(True, text)

    raise ValueError(f"unknown search kind {kind!r}")


def embed(text: str) -> np.ndarray:
    """Deterministic hashed bag-of-tokens embedding, L2-normalized.

    Lowercase alphanumeric tokens are hashed into 256 buckets with a fixed
    seed; the empty text maps to the zero vector. No network, identical on
    every platform, so retrieval stays hermetic and testable.
    """
    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                                 key=_EMBED_SEED).digest()
        vec[int.from_bytes(digest, "big") % EMBED_DIM] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


@dataclass(frozen=True)
class Chunk:
    path: str
    start_line: int
    end_line: int
    text: str
    vector: np.ndarray


@dataclass(frozen=True)
class Index:
    chunks: tuple[Chunk, ...]
    chunk_lines: int = 20
    overlap: int = 5


def index_workspace(root: Path, chunk_lines: int = 20, overlap: int = 5) -> Index:
    """Chunk every text file into sliding line windows and embed each chunk."""
    if chunk_lines <= overlap or overlap < 0:
        raise ValueError("need chunk_lines > overlap >= 0")
    step = chunk_lines - overlap
    chunks: list[Chunk] = []
    for rel in _iter_files(Path(root)):
        full = Path(root) / rel
        if _is_binary(full):
            continue
        text, _ = _normalize_text(full.read_bytes())
        lines, _ = _split_lines(text)
        if not lines:
            continue
        start = 0
        while True:
            window = lines[start:start + chunk_lines]
            chunks.append(Chunk(
                path=rel,
                start_line=start + 1,
                end_line=start + len(window),
                text="\n".join(window),
                vector=embed("\n".join(window)),
            ))
            if start + chunk_lines >= len(lines):
                break
            start += step
    return Index(chunks=tuple(chunks), chunk_lines=chunk_lines, overlap=overlap)


def retrieve_similar(index: Index, query: str, k: int = 5) -> list[Snippet]:
    """Top-k chunks by cosine similarity; ties break by (path, start_line)."""
    if not index.chunks:
        return []
    qv = embed(query)
    scored = []
    for chunk in index.chunks:
        score = float(np.dot(qv, chunk.vector))
        score = min(1.0, max(0.0, score))
        scored.append((score, chunk))
    scored.sort(key=lambda item: (-item[0], item[1].path, item[1].start_line))
    return [Snippet(path=c.path, start_line=c.start_line, end_line=c.end_line,
                    text=c.text, score=s)
            for s, c in scored[:k]]


def render_snippets(snippets: list[Snippet]) -> str:
    if not snippets:
        return "index empty"
    blocks = []
    for s in snippets:
        blocks.append(f"{display_path(s.path)}:{s.start_line}-{s.end_line} "
                      f"(score {s.score:.3f})\n{s.text}")
    return "\n\n".join(blocks)


@dataclass(frozen=True)
class Profile:
    """Maps the abstract build/run/test/syntax verbs to argv templates.

    `{file}` substitutes the file argument; a bare `{target}` element is
    replaced by the optional target or dropped when none is given.
    """

    commands: dict

    def argv(self, verb: str, file: Optional[str] = None,
             target: Optional[str] = None) -> Optional[list[str]]:
        template = self.commands.get(verb)
        if template is None:
            return None
        argv: list[str] = []
        for element in template:
            if element == "{file}":
                argv.append(file if file is not None else "")
            elif element == "{target}":
                if target is not None:
                    argv.append(target)
            else:
                argv.append(str(element))
        return argv


# The shipped default targets pytest workspaces via the adapter scripts
# baked into the default container image.
DEFAULT_PROFILE = Profile(commands={
    "build": ["python3", "-m", "compileall", "-q", "."],
    "run": ["python3", "{file}"],
    "test": ["/opt/autodev/adapter_pytest", "{target}"],
    "syntax": ["/opt/autodev/adapter_syntax", "{file}"],
})


def load_profile(root: Path) -> Profile:
    """Profile from `.autodev/profile.yaml`, defaults filling missing verbs."""
    path = Path(root) / PROFILE_PATH
    merged = dict(DEFAULT_PROFILE.commands)
    if path.exists():
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        for verb, template in (data.get("commands") or {}).items():
            if not isinstance(template, list):
                raise ValueError(f"profile command {verb!r} must be an argv list")
            merged[str(verb)] = [str(el) for el in template]
    return Profile(commands=merged)


@dataclass
class ToolContext:
    """Per-run tool state: the session, profile, policy, and a lazy index."""

    session: Session
    profile: Profile
    git_policy: object = None
    timeout: Optional[float] = None
    cancel_event: object = None
    _index: Optional[Index] = field(default=None, repr=False)

    def get_index(self) -> Index:
        if self._index is None:
            self._index = index_workspace(self.session.root)
        return self._index

    def invalidate_index(self) -> None:
        self._index = None


def _exec_verb(ctx: ToolContext, verb: str, file: Optional[str] = None,
               target: Optional[str] = None) -> ToolOutcome:
    argv = ctx.profile.argv(verb, file=file, target=target)
    if argv is None:
        return ToolOutcome(False, f"profile missing: no argv mapped for verb {verb!r}")
    result = ctx.session.exec(argv, timeout=ctx.timeout, cancel_event=ctx.cancel_event)
    ok = result.exit_code == 0
    return ToolOutcome(ok, f"{verb} {'succeeded' if ok else 'failed'}", raw=result)


def execute_build(ctx: ToolContext) -> ToolOutcome:
    return _exec_verb(ctx, "build")


def execute_run(ctx: ToolContext, file: str) -> ToolOutcome:
    return _exec_verb(ctx, "run", file=file)


def execute_tests(ctx: ToolContext, target: Optional[str] = None) -> ToolOutcome:
    return _exec_verb(ctx, "test", target=target)


def check_syntax(ctx: ToolContext, file: str) -> ToolOutcome:
    return _exec_verb(ctx, "syntax", file=file)


_GIT_IDENT = ["-c", "user.name=autodev", "-c", "user.email=autodev@localhost"]


def execute_git(ctx: ToolContext, sub: str, message: Optional[str] = None) -> ToolOutcome:
    """Run a git operation inside the sandbox, honoring the git policy."""
    policy = ctx.git_policy
    if sub == "commit" and policy is not None and not policy.allow_local_commit:
        raise PermissionDenied("git-commit", "local commits are disabled by policy")
    if sub == "push" and policy is not None and not policy.allow_push:
        raise PermissionDenied("git-push", "pushing is disabled by policy")

    def run(argv: list[str]) -> ExecutionResult:
        return ctx.session.exec(argv, timeout=ctx.timeout,
                                cancel_event=ctx.cancel_event)

    if sub == "status":
        result = run(["git", "status", "--porcelain"])
        if result.exit_code != 0:
            return ToolOutcome(False, f"git status failed: {result.stderr.strip()}",
                               raw=result)
        listing = result.stdout.strip()
        return ToolOutcome(True, listing if listing else "clean", raw=result)
    if sub == "diff":
        result = run(["git", "diff"])
        if result.exit_code != 0:
            return ToolOutcome(False, f"git diff failed: {result.stderr.strip()}",
                               raw=result)
        diff = result.stdout.strip()
        return ToolOutcome(True, diff if diff else "no changes", raw=result)
    if sub == "commit":
        staged = run(["git", "add", "-A"])
        if staged.exit_code != 0:
            return ToolOutcome(False, f"git add failed: {staged.stderr.strip()}",
                               raw=staged)
        result = run(["git"] + _GIT_IDENT + ["commit", "-m", message or "autodev commit"])
        if result.exit_code != 0:
            detail = (result.stdout + result.stderr).strip()
            return ToolOutcome(False, f"git commit failed: {detail}", raw=result)
        return ToolOutcome(True, result.stdout.strip() or "committed", raw=result)
    if sub == "push":
        result = run(["git", "push"])
        if result.exit_code != 0:
            return ToolOutcome(False, f"git push failed: {result.stderr.strip()}",
                               raw=result)
        return ToolOutcome(True, "pushed", raw=result)
    raise ValueError(f"unknown git subcommand {sub!r}")


def dispatch(vc: ValidatedCommand, ctx: ToolContext) -> ToolOutcome:
    """Execute one validated, non-communication command."""
    cmd = vc.command
    name = cmd.name

    if vc.spec.category == commands.EDIT:
        outcome = apply_edit(EditCommand.from_validated(vc), ctx.session)
        if outcome.ok:
            ctx.invalidate_index()
        return outcome

    if name in ("grep", "find"):
        args = [cmd.args[0]] + ([vc.paths[1]] if 1 in vc.paths else [])
        return search_workspace(name, args, ctx.session)
    if name == "ls":
        return search_workspace("ls", [vc.paths[0]] if 0 in vc.paths else [], ctx.session)
    if name == "cat":
        return search_workspace("cat", [vc.paths[0]], ctx.session)
    if name == "retrieve":
        query_parts = [" ".join(cmd.args)] if cmd.args else []
        if cmd.content:
            query_parts.append(cmd.content)
        query = "\n".join(query_parts)
        index = ctx.get_index()
        if not index.chunks:
            return ToolOutcome(True, "index empty")
        return ToolOutcome(True, render_snippets(retrieve_similar(index, query)))

    if name == "build":
        return execute_build(ctx)
    if name == "run":
        return execute_run(ctx, vc.paths[0])
    if name == "test":
        return execute_tests(ctx, vc.paths.get(0))
    if name == "syntax":
        return check_syntax(ctx, vc.paths[0])

    if name.startswith("git-"):
        sub = name[len("git-"):]
        message = " ".join(cmd.args) if cmd.args else None
        return execute_git(ctx, sub, message=message)

    raise ValueError(f"no tool handler for command {name!r}")


def workspace_hash(root: Path, exclude: Optional[set[str]] = None) -> str:
    """sha256 over sorted (relpath, bytes) pairs; used for no-op run checks."""
    digest = hashlib.sha256()
    for rel in _iter_files(Path(root)):
        if exclude and rel in exclude:
            continue
        digest.update(rel.encode("utf-8"))
        digest.update(b"\x00")
        digest.update((Path(root) / rel).read_bytes())
        digest.update(b"\x01")
    return digest.hexdigest()
