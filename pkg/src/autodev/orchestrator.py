"""The run loop: schedule an agent, parse its reply, validate, execute,
organize the output, and repeat until a verdict is reached.

Rejected turns never touch the sandbox: a reply that fails parsing or
validation only produces an environment error message. The loop never
raises on agent misbehavior; backend and sandbox failures become an
Aborted(environment_failure) verdict.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import agents, commands, sandbox, scheduling, tools
from .agents import (
    DEFAULT_REPLY_RESERVE,
    BudgetError,
    RemoteError,
    ScriptExhausted,
    TurnRequest,
)
from .commands import (
    Command,
    CommandRejected,
    ImplicitTalk,
    ParseFailure,
    PermissionDenied,
    SemanticError,
)
from .config import RulesConfig, effective_permissions
from .conversation import (
    ABORT_ENVIRONMENT,
    ABORT_MAX_TOKENS,
    ABORT_USER_INTERRUPT,
    ERROR_PARSE_FAILURE,
    ERROR_PERMISSION_DENIED,
    ERROR_SEMANTIC,
    KIND_COMMAND,
    KIND_CONCLUSION,
    KIND_TALK,
    ROLE_AGENT,
    ROLE_ENV,
    ROLE_USER,
    Conversation,
    LoopEvent,
    Message,
    Verdict,
    aborted,
    organize_display,
    organize_output,
    should_conclude,
)
from .metrics import RunReport
from .sandbox import SandboxError, Session, SessionDead

logger = logging.getLogger(__name__)

DEFAULT_ASK_TIMEOUT = 600.0  # seconds before an unanswered ask aborts the run

EXPORT_SUFFIX = ".autodev-out"


@dataclass
class RunOutcome:
    verdict: Verdict
    conversation: Conversation
    report: RunReport
    workspace_final_state: str  # content hash of the final workspace


def _ask_with_timeout(ask_fn: Callable[[str], str], question: str, timeout: float,
                      cancel_event: Optional[threading.Event]) -> Optional[str]:
    """Run ask_fn in a side thread; None means timeout or cancelation."""
    box: dict = {}

    def worker():
        try:
            box["reply"] = ask_fn(question)
        except Exception as exc:
            box["error"] = exc

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    waited = 0.0
    while waited < timeout:
        thread.join(timeout=0.1)
        if not thread.is_alive():
            break
        if cancel_event is not None and cancel_event.is_set():
            return None
        waited += 0.1
    if "reply" in box:
        return str(box["reply"])
    return None


class _Run:
    """State for one run_objective invocation."""

    def __init__(self, objective, config: RulesConfig, workspace: Path,
                 session: Optional[Session], cancel_event, ask_fn, on_message,
                 transcript_path, ask_timeout: float):
        self.objective = objective
        self.config = config
        self.workspace = Path(workspace)
        self.session = session
        self.cancel_event = cancel_event
        self.ask_fn = ask_fn
        self.on_message = on_message
        self.transcript_path = transcript_path
        self.ask_timeout = ask_timeout
        self.conv = Conversation(objective)
        self.report = RunReport()
        self._fp = None

    def emit(self, msg: Message) -> None:
        if self._fp is not None:
            self._fp.write(msg.to_json() + "\n")
            self._fp.flush()
        if self.on_message is not None:
            self.on_message(msg)

    def add(self, role, kind, content, *, agent=None, meta=None) -> Message:
        msg = self.conv.add(role, kind, content, agent=agent, meta=meta)
        self.emit(msg)
        return msg

    def env_error(self, text: str) -> None:
        msg = organize_display(text, ok=False)
        msg.seq = self.conv.next_seq
        self.conv.append(msg)
        self.emit(msg)

    def canceled(self) -> bool:
        return self.cancel_event is not None and self.cancel_event.is_set()


def run_objective(objective: str, config: RulesConfig, workspace,
                  *, session: Optional[Session] = None,
                  cancel_event: Optional[threading.Event] = None,
                  ask_fn: Optional[Callable[[str], str]] = None,
                  on_message: Optional[Callable[[Message], None]] = None,
                  transcript_path=None,
                  ask_timeout: float = DEFAULT_ASK_TIMEOUT) -> RunOutcome:
    """Drive the full loop over `workspace` until a verdict is reached.

    `session` is normally created from config.sandbox; passing one in is a
    hook for tests that inspect the exec log afterwards. The transcript is
    streamed to `transcript_path` line by line, so an interrupted run still
    leaves a usable file behind.
    """
    run = _Run(objective, config, workspace, session, cancel_event, ask_fn,
               on_message, transcript_path, ask_timeout)
    if transcript_path is not None:
        run._fp = open(transcript_path, "w", encoding="utf-8")
    try:
        run.emit(run.conv.messages[0])
        verdict = _loop(run)
        return _finish(run, verdict)
    finally:
        if run._fp is not None:
            run._fp.close()


def _start_session(run: _Run) -> Optional[Session]:
    if run.session is not None:
        return run.session
    try:
        run.session = sandbox.start_session(run.config.sandbox, run.workspace)
    except SandboxError as exc:
        run.env_error(f"could not start the execution environment: {exc}")
        return None
    return run.session


def _loop(run: _Run) -> Verdict:
    config = run.config
    registry = commands.DEFAULT_REGISTRY
    session = _start_session(run)
    if session is None:
        return aborted(ABORT_ENVIRONMENT)
    ctx = tools.ToolContext(
        session=session,
        profile=tools.load_profile(session.root),
        git_policy=config.git,
        timeout=config.limits.per_command_timeout,
        cancel_event=run.cancel_event,
    )
    state = scheduling.initial_state(config.agents, config.scheduler)
    marker = getattr(config.scheduler, "handoff_marker", None)

    while True:
        if run.canceled():
            return aborted(ABORT_USER_INTERRUPT)

        agent_name = scheduling.next_agent(state, config.scheduler)
        spec = config.agent(agent_name)
        permitted = effective_permissions(config, agent_name)
        help_text = commands.render_command_help(registry, permitted)
        budget = max(config.limits.max_total_tokens - DEFAULT_REPLY_RESERVE, 256)
        request = TurnRequest(agent_name=agent_name, persona=spec.persona,
                              objective=run.objective, command_help=help_text,
                              messages=run.conv.messages, token_budget=budget)
        try:
            prompt = agents.build_prompt(request)
            reply = agents.respond(spec.backend, prompt, cancel_event=run.cancel_event)
        except BudgetError as exc:
            run.env_error(f"prompt budget exhausted: {exc}")
            return aborted(ABORT_MAX_TOKENS)
        except (RemoteError, ScriptExhausted) as exc:
            run.env_error(f"agent backend failed: {exc}")
            return aborted(ABORT_ENVIRONMENT)
        if run.canceled():
            return aborted(ABORT_USER_INTERRUPT)

        if marker is not None and reply.strip() == marker:
            run.add(ROLE_AGENT, KIND_TALK, reply, agent=agent_name,
                    meta={"command": "talk", "handoff": True})
            run.report.counts["talk"] = run.report.counts.get("talk", 0) + 1
            run.conv.note_parse_success()
            state = scheduling.record_turn(state, config.scheduler,
                                           scheduling.HANDOFF_EMITTED)
            verdict = should_conclude(run.conv, config.limits, LoopEvent())
            if verdict.concluded:
                return verdict
            continue

        event = _turn(run, ctx, registry, permitted, agent_name, reply)
        # A parse failure still uses up scheduler budget: a misbehaving
        # agent must not hold the floor forever.
        state = scheduling.record_turn(state, config.scheduler,
                                       scheduling.OP_EXECUTED)
        verdict = should_conclude(run.conv, config.limits, event)
        if verdict.concluded:
            return verdict


def _turn(run: _Run, ctx: tools.ToolContext, registry, permitted,
          agent_name: str, reply: str) -> LoopEvent:
    """Handle one agent reply end to end; returns the conclusion event."""
    outcome = commands.parse_agent_message(reply, registry)

    if isinstance(outcome, ImplicitTalk):
        run.add(ROLE_AGENT, KIND_TALK, reply, agent=agent_name,
                meta={"command": "talk", "implicit": True})
        run.conv.note_parse_success()
        run.report.counts["talk"] = run.report.counts.get("talk", 0) + 1
        return LoopEvent()

    if isinstance(outcome, ParseFailure):
        run.add(ROLE_AGENT, KIND_COMMAND, reply, agent=agent_name,
                meta={"error": ERROR_PARSE_FAILURE, "reason": outcome.reason})
        run.conv.note_parse_failure()
        run.report.incorrect_count += 1
        run.env_error(f"parse failure ({outcome.reason}): {outcome.message}\n"
                      f"Available commands:\n"
                      f"{commands.render_command_help(registry, permitted)}")
        return LoopEvent()

    cmd: Command = outcome
    run.conv.note_parse_success()
    try:
        vc = commands.validate_command(cmd, registry, permitted,
                                       ctx.session.root, git_policy=ctx.git_policy)
    except PermissionDenied as exc:
        run.add(ROLE_AGENT, KIND_COMMAND, reply, agent=agent_name,
                meta={"command": cmd.name, "error": ERROR_PERMISSION_DENIED})
        run.report.incorrect_count += 1
        run.env_error(f"{exc}; no action was taken")
        return LoopEvent()
    except SemanticError as exc:
        run.add(ROLE_AGENT, KIND_COMMAND, reply, agent=agent_name,
                meta={"command": cmd.name, "error": ERROR_SEMANTIC})
        run.report.counts[cmd.name] = run.report.counts.get(cmd.name, 0) + 1
        run.env_error(f"{exc}; no action was taken")
        return LoopEvent()

    kind = KIND_TALK if cmd.name == "talk" else KIND_COMMAND
    run.add(ROLE_AGENT, kind, reply, agent=agent_name, meta={"command": cmd.name})
    run.report.counts[cmd.name] = run.report.counts.get(cmd.name, 0) + 1

    if cmd.name == "talk":
        return LoopEvent()
    if cmd.name == "stop":
        return LoopEvent(stop_validated=True)
    if cmd.name == "ask":
        return _handle_ask(run, cmd)

    try:
        result = tools.dispatch(vc, ctx)
    except SessionDead:
        run.env_error("the execution environment is no longer available")
        return LoopEvent(session_dead=True)
    except CommandRejected as exc:
        run.env_error(f"{exc}; no action was taken")
        return LoopEvent()

    if result.raw is not None and vc.spec.category in (commands.BUILD_EXEC,
                                                       commands.TEST_VALIDATE):
        msg = organize_output(result.raw, vc.spec.category)
        msg.meta["duration_s"] = round(result.raw.duration, 3)
    else:
        msg = organize_display(result.display, result.ok)
        if result.raw is not None:
            msg.meta["duration_s"] = round(result.raw.duration, 3)
    msg.seq = run.conv.next_seq
    run.conv.append(msg)
    run.emit(msg)
    return LoopEvent()


def _handle_ask(run: _Run, cmd: Command) -> LoopEvent:
    question_parts = [" ".join(cmd.args)] if cmd.args else []
    if cmd.content:
        question_parts.append(cmd.content)
    question = "\n".join(question_parts) or "(no question given)"
    if run.ask_fn is None:
        run.env_error("user input is not available in this run; continue without it")
        return LoopEvent()
    reply = _ask_with_timeout(run.ask_fn, question, run.ask_timeout, run.cancel_event)
    if reply is None:
        # An unanswered ask aborts the run as a user interrupt.
        if run.cancel_event is None:
            run.cancel_event = threading.Event()
        run.cancel_event.set()
        run.env_error("no user reply arrived in time; aborting")
        return LoopEvent()
    run.add(ROLE_USER, KIND_TALK, reply)
    return LoopEvent()


def _finish(run: _Run, verdict: Verdict) -> RunOutcome:
    session = run.session
    final_hash = ""
    if session is not None:
        try:
            final_hash = tools.workspace_hash(session.root)
            if run.config.sandbox.workspace_mount_mode == "copy":
                if verdict.status == "done":
                    session.export_workspace(run.workspace)
                else:
                    # failed runs are the ones users most need to inspect
                    session.export_workspace(
                        run.workspace.parent / (run.workspace.name + EXPORT_SUFFIX))
        finally:
            session.teardown()

    conclusion = Message(
        role=ROLE_ENV, kind=KIND_CONCLUSION,
        content=f"run concluded: {verdict.status}"
                + (f" ({verdict.reason})" if verdict.reason else ""),
        seq=run.conv.next_seq,
        meta={"verdict": {"status": verdict.status, "reason": verdict.reason}},
    )
    run.conv.append(conclusion)
    run.emit(conclusion)

    run.report.verdict = verdict
    run.report.total_tokens = run.conv.total_tokens
    run.report.iterations = run.conv.iteration_count
    return RunOutcome(verdict=verdict, conversation=run.conv, report=run.report,
                      workspace_final_state=final_hash)


class RunHandle:
    """A run executing on a worker thread, with cooperative interruption."""

    def __init__(self, target: Callable[[], RunOutcome],
                 cancel_event: threading.Event):
        self._cancel = cancel_event
        self._outcome: Optional[RunOutcome] = None
        self._error: Optional[BaseException] = None

        def wrapped():
            try:
                self._outcome = target()
            except BaseException as exc:  # surfaced in wait()
                self._error = exc

        self._thread = threading.Thread(target=wrapped, daemon=True)
        self._thread.start()

    def interrupt(self) -> None:
        """Cancel the run; a no-op once it has concluded."""
        self._cancel.set()

    def done(self) -> bool:
        return not self._thread.is_alive()

    def wait(self, timeout: Optional[float] = None) -> Optional[RunOutcome]:
        self._thread.join(timeout)
        if self._thread.is_alive():
            return None
        if self._error is not None:
            raise self._error
        return self._outcome


def start_run(objective: str, config: RulesConfig, workspace, **kwargs) -> RunHandle:
    """run_objective on a worker thread; returns a handle with interrupt()."""
    cancel_event = kwargs.pop("cancel_event", None) or threading.Event()
    return RunHandle(
        lambda: run_objective(objective, config, workspace,
                              cancel_event=cancel_event, **kwargs),
        cancel_event,
    )


def interrupt(handle: RunHandle) -> None:
    handle.interrupt()
