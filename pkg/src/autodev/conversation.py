"""Conversation state: messages, output organizing, and conclusion checks.

A Conversation is append-only and owned by exactly one run. The Output
Organizer turns raw execution results into bounded environment messages so
transcripts stay readable and deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from . import commands

ROLE_USER = "user"
ROLE_AGENT = "agent"
ROLE_ENV = "environment"

KIND_OBJECTIVE = "objective"
KIND_COMMAND = "command"
KIND_TALK = "talk"
KIND_ENV_RESULT = "env_result"
KIND_ENV_ERROR = "env_error"
KIND_CONCLUSION = "conclusion"

# Incorrect-command classifications recorded in message meta
ERROR_PARSE_FAILURE = "parse_failure"
ERROR_PERMISSION_DENIED = "permission_denied"
ERROR_SEMANTIC = "semantic_error"

# Bounds applied by the Output Organizer
STREAM_CHAR_LIMIT = 2_000
FAILURE_CHAR_LIMIT = 500
MAX_FAILURES_SHOWN = 3
MESSAGE_CHAR_LIMIT = 8_192


def token_estimate(text: str) -> int:
    """Deterministic token estimate: ceil(utf-8 bytes / 4).

    The real tokenizer is model-specific; this stand-in is monotone in text
    length and pluggable behind this one function.
    """
    if not text:
        return 0
    return (len(text.encode("utf-8")) + 3) // 4


class SequenceError(Exception):
    """Append with a seq that is not last seq + 1."""


@dataclass
class Message:
    role: str
    kind: str
    content: str
    seq: int = -1
    agent: Optional[str] = None
    token_count: int = -1
    ts: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.token_count < 0:
            self.token_count = token_estimate(self.content)
        if self.ts is None:
            self.ts = datetime.now(timezone.utc).isoformat()

    def to_json(self) -> str:
        doc = {
            "seq": self.seq,
            "role": self.role,
            "kind": self.kind,
            "content": self.content,
            "tokens": self.token_count,
            "ts": self.ts,
        }
        if self.agent is not None:
            doc["agent"] = self.agent
        if self.meta:
            doc["meta"] = self.meta
        return json.dumps(doc, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Message":
        doc = json.loads(line)
        return cls(
            role=doc["role"],
            kind=doc["kind"],
            content=doc["content"],
            seq=doc["seq"],
            agent=doc.get("agent"),
            token_count=doc["tokens"],
            ts=doc.get("ts"),
            meta=doc.get("meta", {}),
        )


class Conversation:
    """Ordered, append-only message log with running totals."""

    def __init__(self, objective: str):
        self.objective = objective
        self.messages: list[Message] = []
        self.total_tokens = 0
        self.iteration_count = 0
        self.consecutive_parse_failures = 0
        self.append(Message(role=ROLE_USER, kind=KIND_OBJECTIVE, content=objective,
                            seq=0))

    @property
    def next_seq(self) -> int:
        return len(self.messages)

    def append(self, msg: Message) -> "Conversation":
        if msg.seq != self.next_seq:
            raise SequenceError(f"expected seq {self.next_seq}, got {msg.seq}")
        self.messages.append(msg)
        self.total_tokens += msg.token_count
        if msg.role == ROLE_AGENT:
            self.iteration_count += 1
        return self

    def add(self, role: str, kind: str, content: str, *, agent: Optional[str] = None,
            meta: Optional[dict] = None) -> Message:
        """Build a message with the next seq and append it."""
        msg = Message(role=role, kind=kind, content=content, seq=self.next_seq,
                      agent=agent, meta=meta or {})
        self.append(msg)
        return msg

    def note_parse_failure(self) -> None:
        self.consecutive_parse_failures += 1

    def note_parse_success(self) -> None:
        self.consecutive_parse_failures = 0


@dataclass(frozen=True)
class Verdict:
    status: str  # "continue" | "done" | "aborted"
    reason: Optional[str] = None

    @property
    def concluded(self) -> bool:
        return self.status != "continue"


CONTINUE = Verdict("continue")
DONE = Verdict("done", "stop_command")

ABORT_MAX_ITERATIONS = "max_iterations"
ABORT_MAX_TOKENS = "max_tokens"
ABORT_PARSE_FAILURES = "parse_failure_cap"
ABORT_ENVIRONMENT = "environment_failure"
ABORT_USER_INTERRUPT = "user_interrupt"


def aborted(reason: str) -> Verdict:
    return Verdict("aborted", reason)


@dataclass(frozen=True)
class LoopEvent:
    """What just happened, as far as conclusion checks care."""

    stop_validated: bool = False
    session_dead: bool = False


def should_conclude(conv: Conversation, limits, event: LoopEvent) -> Verdict:
    """Decide whether the run is over, checking in priority order:
    validated stop, iteration cap, token cap, parse-failure cap, dead
    sandbox. Pure function of its inputs.
    """
    if event.stop_validated:
        return DONE
    if conv.iteration_count >= limits.max_iterations:
        return aborted(ABORT_MAX_ITERATIONS)
    if conv.total_tokens >= limits.max_total_tokens:
        return aborted(ABORT_MAX_TOKENS)
    if conv.consecutive_parse_failures >= limits.max_consecutive_parse_failures:
        return aborted(ABORT_PARSE_FAILURES)
    if event.session_dead:
        return aborted(ABORT_ENVIRONMENT)
    return CONTINUE


def _clip(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    dropped = len(text[limit:].encode("utf-8"))
    return text[:limit] + f"\n[truncated {dropped} bytes]"


def organize_output(result, tool_category: str) -> Message:
    """Turn an ExecutionResult into a bounded environment message.

    test_validate results carrying the adapter's JSON report are reduced to
    the summary object plus at most three failure messages. Everything else
    gets an exit-status line and clipped stdout/stderr. The caller stamps
    the seq before appending.
    """
    kind = KIND_ENV_RESULT if result.exit_code == 0 else KIND_ENV_ERROR

    if tool_category == commands.TEST_VALIDATE:
        try:
            report = json.loads(result.stdout)
        except (json.JSONDecodeError, TypeError):
            report = None
        if isinstance(report, dict) and "summary" in report:
            lines = [f"'summary': {report['summary']!r}"]
            for failure in (report.get("failures") or [])[:MAX_FAILURES_SHOWN]:
                message = str(failure.get("message", ""))[:FAILURE_CHAR_LIMIT]
                lines.append(f"'message': {message!r}")
            content = "\n".join(lines)
            return Message(role=ROLE_ENV, kind=kind, content=content[:MESSAGE_CHAR_LIMIT])

    status = f"exit code: {result.exit_code}"
    if result.timed_out:
        status += " (timed out)"
    parts = [status]
    parts.append("stdout:")
    parts.append(_clip(result.stdout, STREAM_CHAR_LIMIT) if result.stdout else "(empty)")
    parts.append("stderr:")
    parts.append(_clip(result.stderr, STREAM_CHAR_LIMIT) if result.stderr else "(empty)")
    content = "\n".join(parts)
    return Message(role=ROLE_ENV, kind=kind, content=content[:MESSAGE_CHAR_LIMIT])


def organize_display(display: str, ok: bool) -> Message:
    """Bounded environment message for tools that did not run an argv."""
    kind = KIND_ENV_RESULT if ok else KIND_ENV_ERROR
    content = _clip(display, STREAM_CHAR_LIMIT)
    return Message(role=ROLE_ENV, kind=kind, content=content[:MESSAGE_CHAR_LIMIT])


def write_transcript(messages, fp) -> None:
    for msg in messages:
        fp.write(msg.to_json() + "\n")


def read_transcript(path) -> list[Message]:
    out = []
    with open(path, "r", encoding="utf-8") as fp:
        for line in fp:
            if line.strip():
                out.append(Message.from_json(line))
    return out
