"""Command grammar: the registry of agent commands, parsing, and validation.

An agent message is either a command (first non-blank line starts with a
registered command name), free text treated as an implicit `talk`, or a
parse failure. Parsing never raises; validation raises and the caller turns
the error into an environment message.
"""

from __future__ import annotations

import posixpath
import re
from dataclasses import dataclass, field
from typing import Optional, Union

# Tool categories
EDIT = "edit"
RETRIEVAL = "retrieval"
BUILD_EXEC = "build_exec"
TEST_VALIDATE = "test_validate"
GIT = "git"
COMMUNICATION = "communication"

# Argument kinds
PATH = "path"
LINE_RANGE = "line_range"
LINE = "line"
PATTERN = "pattern"
FREE_TEXT = "free_text"

# Parse failure reasons
UNKNOWN_COMMAND = "unknown_command"
ARITY_MISMATCH = "arity_mismatch"
BAD_LINE_RANGE = "bad_line_range"
MIXED_CONTENT = "mixed_content"

# Content block policy per command
CONTENT_REQUIRED = "required"
CONTENT_OPTIONAL = "optional"
CONTENT_FORBIDDEN = "forbidden"

_NAME_RE = re.compile(r"^[a-z][a-z0-9]*(?:-[a-z0-9]+)*$")
_RANGE_RE = re.compile(r"^(\d+)-(\d+)$")


@dataclass(frozen=True)
class ToolSpec:
    """Schema for one command: arity, argument kinds, and content policy."""

    name: str
    category: str
    min_args: int
    max_args: Optional[int]  # None = unbounded
    arg_kinds: tuple[str, ...]
    content: str = CONTENT_FORBIDDEN
    touches_sandbox: bool = True
    usage: str = ""
    summary: str = ""

    @property
    def requires_content(self) -> bool:
        return self.content == CONTENT_REQUIRED


@dataclass(frozen=True)
class Command:
    """A parsed agent instruction: name, positional args, optional content block."""

    name: str
    args: tuple[str, ...]
    content: Optional[str]
    raw: str


@dataclass(frozen=True)
class ImplicitTalk:
    """Free text that is not a command; treated as a `talk` message."""

    text: str


@dataclass(frozen=True)
class ParseFailure:
    """A message that looked like a command but could not be parsed."""

    reason: str
    message: str
    raw: str
    expected: Optional[str] = None
    actual: Optional[str] = None


ParseOutcome = Union[Command, ImplicitTalk, ParseFailure]

ToolRegistry = dict[str, ToolSpec]


def _spec(name, category, min_args, max_args, kinds, content, sandbox, usage, summary):
    return ToolSpec(
        name=name,
        category=category,
        min_args=min_args,
        max_args=max_args,
        arg_kinds=kinds,
        content=content,
        touches_sandbox=sandbox,
        usage=usage,
        summary=summary,
    )


DEFAULT_REGISTRY: ToolRegistry = {
    s.name: s
    for s in [
        _spec("write-new", EDIT, 1, 1, (PATH,), CONTENT_REQUIRED, True,
              "write-new <path> <content>", "create or overwrite a file with new content"),
        _spec("write", EDIT, 2, 2, (PATH, LINE_RANGE), CONTENT_REQUIRED, True,
              "write <path> <start>-<end> <content>", "replace a range of lines with new content"),
        _spec("insert", EDIT, 2, 2, (PATH, LINE), CONTENT_REQUIRED, True,
              "insert <path> <line> <content>", "insert content after the given line (0 prepends)"),
        _spec("delete", EDIT, 2, 2, (PATH, LINE_RANGE), CONTENT_FORBIDDEN, True,
              "delete <path> <start>-<end>", "delete a range of lines"),
        _spec("grep", RETRIEVAL, 1, 2, (PATTERN, PATH), CONTENT_FORBIDDEN, True,
              "grep <pattern> [path]", "search file contents for a pattern"),
        _spec("find", RETRIEVAL, 1, 2, (PATTERN, PATH), CONTENT_FORBIDDEN, True,
              "find <name-pattern> [path]", "list files whose name matches a glob pattern"),
        _spec("ls", RETRIEVAL, 0, 1, (PATH,), CONTENT_FORBIDDEN, True,
              "ls [path]", "list a directory"),
        _spec("cat", RETRIEVAL, 1, 1, (PATH,), CONTENT_FORBIDDEN, True,
              "cat <path>", "print the contents of a file"),
        _spec("retrieve", RETRIEVAL, 0, None, (FREE_TEXT,), CONTENT_OPTIONAL, True,
              "retrieve <content>", "find code snippets similar to the given content"),
        _spec("build", BUILD_EXEC, 0, 0, (), CONTENT_FORBIDDEN, True,
              "build", "build the project"),
        _spec("run", BUILD_EXEC, 1, 1, (PATH,), CONTENT_FORBIDDEN, True,
              "run <file>", "execute a file"),
        _spec("test", TEST_VALIDATE, 0, 1, (PATH,), CONTENT_FORBIDDEN, True,
              "test [test_file]", "run the test suite (optionally a single file)"),
        _spec("syntax", TEST_VALIDATE, 1, 1, (PATH,), CONTENT_FORBIDDEN, True,
              "syntax <file>", "check a file for syntax errors"),
        _spec("git-status", GIT, 0, 0, (), CONTENT_FORBIDDEN, True,
              "git-status", "show the working tree status"),
        _spec("git-diff", GIT, 0, 0, (), CONTENT_FORBIDDEN, True,
              "git-diff", "show uncommitted changes"),
        _spec("git-commit", GIT, 1, None, (FREE_TEXT,), CONTENT_FORBIDDEN, True,
              "git-commit <message>", "stage all changes and commit locally"),
        _spec("git-push", GIT, 0, 0, (), CONTENT_FORBIDDEN, True,
              "git-push", "push local commits to the origin remote"),
        _spec("talk", COMMUNICATION, 0, None, (FREE_TEXT,), CONTENT_OPTIONAL, False,
              "talk <message>", "send a natural-language message"),
        _spec("ask", COMMUNICATION, 0, None, (FREE_TEXT,), CONTENT_OPTIONAL, False,
              "ask <question>", "ask the user for feedback"),
        _spec("stop", COMMUNICATION, 0, 0, (), CONTENT_FORBIDDEN, False,
              "stop", "signal that the objective is complete (or cannot proceed)"),
    ]
}

# Communication commands that are always permitted regardless of policy.
ALWAYS_PERMITTED = frozenset({"talk", "stop"})


def _kind_at(spec: ToolSpec, index: int) -> str:
    """Kind for the arg at `index`; the last declared kind repeats for variadic specs."""
    if index < len(spec.arg_kinds):
        return spec.arg_kinds[index]
    return spec.arg_kinds[-1] if spec.arg_kinds else FREE_TEXT


def _arity_text(spec: ToolSpec) -> str:
    if spec.max_args is None:
        return f">= {spec.min_args} args"
    if spec.min_args == spec.max_args:
        return f"{spec.min_args} args"
    return f"{spec.min_args}-{spec.max_args} args"


def parse_line_range(token: str) -> tuple[int, int]:
    """Parse `<start>-<end>` (decimal, 1-based inclusive). Raises ValueError."""
    m = _RANGE_RE.match(token)
    if not m:
        raise ValueError(f"malformed line range {token!r} (expected <start>-<end>)")
    start, end = int(m.group(1)), int(m.group(2))
    if start > end:
        raise ValueError(f"bad line range {token!r}: start > end")
    return start, end


def parse_agent_message(text: str, registry: Optional[ToolRegistry] = None) -> ParseOutcome:
    """Parse one agent message into a Command, ImplicitTalk, or ParseFailure.

    Grammar: the first non-blank line is split on whitespace. If its first
    token is a registered command name, the remaining tokens are arguments
    and all subsequent lines form the content block (trailing blank lines
    dropped; a single pair of double quotes around one-line content is
    stripped). A first token that merely looks like a command name but is
    not registered fails with UNKNOWN_COMMAND; anything else is free text.
    """
    registry = DEFAULT_REGISTRY if registry is None else registry
    lines = text.split("\n")
    i = 0
    while i < len(lines) and not lines[i].strip():
        i += 1
    if i == len(lines):
        return ImplicitTalk(text=text)

    head = lines[i].split()
    name = head[0]
    spec = registry.get(name)
    if spec is None:
        if _NAME_RE.match(name):
            return ParseFailure(
                reason=UNKNOWN_COMMAND,
                message=f"unknown command {name!r}",
                raw=text,
            )
        return ImplicitTalk(text=text)

    args = tuple(head[1:])
    content_lines = lines[i + 1:]
    while content_lines and not content_lines[-1].strip():
        content_lines.pop()
    content: Optional[str] = None
    if content_lines:
        if len(content_lines) == 1:
            line = content_lines[0]
            if len(line) >= 2 and line.startswith('"') and line.endswith('"'):
                line = line[1:-1]
            content = line
        else:
            content = "\n".join(content_lines)

    if len(args) < spec.min_args or (spec.max_args is not None and len(args) > spec.max_args):
        return ParseFailure(
            reason=ARITY_MISMATCH,
            message=f"{name} expects {_arity_text(spec)}, got {len(args)}",
            raw=text,
            expected=_arity_text(spec),
            actual=str(len(args)),
        )
    if content is not None and spec.content == CONTENT_FORBIDDEN:
        return ParseFailure(
            reason=MIXED_CONTENT,
            message=f"{name} does not take a content block",
            raw=text,
        )
    if content is None and spec.requires_content:
        return ParseFailure(
            reason=ARITY_MISMATCH,
            message=f"{name} requires a content block on the following lines",
            raw=text,
            expected="content block",
            actual="none",
        )

    for idx, arg in enumerate(args):
        kind = _kind_at(spec, idx)
        if kind == LINE_RANGE:
            try:
                parse_line_range(arg)
            except ValueError as exc:
                return ParseFailure(reason=BAD_LINE_RANGE, message=str(exc), raw=text)
        elif kind == LINE:
            if not arg.isdigit():
                return ParseFailure(
                    reason=BAD_LINE_RANGE,
                    message=f"malformed line number {arg!r}",
                    raw=text,
                )

    return Command(name=name, args=args, content=content, raw=text)


def render_canonical(cmd: Command) -> str:
    """Print a command so that parsing it again yields an equal Command."""
    head = " ".join((cmd.name,) + cmd.args)
    if cmd.content is None:
        return head
    content = cmd.content
    if "\n" not in content:
        # Re-quote contents the parser would otherwise mangle: the empty
        # string, quote-wrapped lines, and lines of pure whitespace.
        quoted = len(content) >= 2 and content.startswith('"') and content.endswith('"')
        if content == "" or quoted or not content.strip():
            content = f'"{content}"'
    return head + "\n" + content


class CommandRejected(Exception):
    """Base class for validation failures; rendered as an environment message."""


class PermissionDenied(CommandRejected):
    def __init__(self, name: str, detail: str = ""):
        self.name = name
        super().__init__(f"permission denied: {name}" + (f" ({detail})" if detail else ""))


PATH_ESCAPE = "path_escape"
BAD_RANGE = "bad_range"


class SemanticError(CommandRejected):
    def __init__(self, kind: str, detail: str):
        self.kind = kind
        super().__init__(f"{kind}: {detail}")


@dataclass(frozen=True)
class ValidatedCommand:
    """A command that passed permission, arity, and semantic checks."""

    command: Command
    spec: ToolSpec
    # Normalized workspace-relative paths and parsed (start, end) ranges,
    # keyed by argument position.
    paths: dict[int, str] = field(default_factory=dict)
    ranges: dict[int, tuple[int, int]] = field(default_factory=dict)


def normalize_workspace_path(arg: str) -> str:
    """Normalize a path argument to a workspace-relative path.

    Leading slashes are workspace-relative (transcripts display paths that
    way). Normalization is purely lexical, so symlinks cannot widen it.
    Raises SemanticError(PATH_ESCAPE) if the path climbs out of the root.
    """
    if "\x00" in arg:
        raise SemanticError(PATH_ESCAPE, f"bad path {arg!r}")
    rel = arg.replace("\\", "/").lstrip("/")
    norm = posixpath.normpath(rel) if rel else "."
    if norm == ".." or norm.startswith("../"):
        raise SemanticError(PATH_ESCAPE, f"path {arg!r} resolves outside the workspace")
    return norm


def validate_command(
    cmd: Command,
    registry: Optional[ToolRegistry] = None,
    permitted: Optional[set[str]] = None,
    workspace_root=None,  # unused for lexical checks; kept for call-site clarity
    git_policy=None,
) -> ValidatedCommand:
    """Check a parsed command, in order: permissions, arity/kinds, semantics.

    `git_policy` (config.GitPolicy) gates git-commit/git-push on top of the
    per-agent permission set. Raises PermissionDenied or SemanticError.
    """
    registry = DEFAULT_REGISTRY if registry is None else registry
    spec = registry.get(cmd.name)
    if spec is None:
        raise PermissionDenied(cmd.name, "not a registered command")

    allowed = set(permitted) if permitted is not None else set(registry)
    allowed |= ALWAYS_PERMITTED
    if cmd.name not in allowed:
        raise PermissionDenied(cmd.name)
    if git_policy is not None:
        if cmd.name == "git-commit" and not git_policy.allow_local_commit:
            raise PermissionDenied(cmd.name, "local commits are disabled by policy")
        if cmd.name == "git-push" and not git_policy.allow_push:
            raise PermissionDenied(cmd.name, "pushing is disabled by policy")

    # Arity/kind re-check; parse_agent_message already guarantees these.
    if len(cmd.args) < spec.min_args or (spec.max_args is not None and len(cmd.args) > spec.max_args):
        raise SemanticError(BAD_RANGE, f"{cmd.name} expects {_arity_text(spec)}")
    if spec.requires_content and cmd.content is None:
        raise SemanticError(BAD_RANGE, f"{cmd.name} requires a content block")

    paths: dict[int, str] = {}
    ranges: dict[int, tuple[int, int]] = {}
    for idx, arg in enumerate(cmd.args):
        kind = _kind_at(spec, idx)
        if kind == PATH:
            paths[idx] = normalize_workspace_path(arg)
        elif kind == LINE_RANGE:
            try:
                start, end = parse_line_range(arg)
            except ValueError as exc:
                raise SemanticError(BAD_RANGE, str(exc)) from exc
            if start < 1:
                raise SemanticError(BAD_RANGE, f"line range {arg!r} must be 1-based")
            ranges[idx] = (start, end)
        elif kind == LINE:
            if not arg.isdigit():
                raise SemanticError(BAD_RANGE, f"malformed line number {arg!r}")
            ranges[idx] = (int(arg), int(arg))

    return ValidatedCommand(command=cmd, spec=spec, paths=paths, ranges=ranges)


def render_command_help(registry: Optional[ToolRegistry] = None,
                        permitted: Optional[set[str]] = None) -> str:
    """One help line per permitted command, alphabetical; talk/stop always shown."""
    registry = DEFAULT_REGISTRY if registry is None else registry
    names = set(permitted) if permitted is not None else set(registry)
    names = (names | ALWAYS_PERMITTED) & set(registry)
    lines = []
    for name in sorted(names):
        spec = registry[name]
        lines.append(f"{spec.usage} - {spec.summary}")
    return "\n".join(lines)
