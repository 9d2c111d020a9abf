"""Command-line entry point: run objectives, validate configs, replay
scripts, and compute stats over transcripts.

Exit codes: 0 the run concluded with a validated stop (or the subcommand
succeeded), 2 the run was aborted by a limit or interrupt, 1 bad input or
internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import signal
import sys
import threading
from pathlib import Path

import yaml

from . import commands
from . import config as config_mod
from . import metrics, orchestrator, scheduling
from .agents import ScriptedBackend
from .config import AgentSpec, ConfigError, RulesConfig
from .conversation import ROLE_AGENT, Message
from .sandbox import SandboxConfig

EXIT_DONE = 0
EXIT_ERROR = 1
EXIT_ABORTED = 2


def _stream_writer(to_stderr: bool):
    out = sys.stderr if to_stderr else sys.stdout

    def write(msg: Message) -> None:
        if msg.role == ROLE_AGENT:
            prefix = f"[agent:{msg.agent}]" if msg.agent else "[agent]"
        elif msg.role == "user":
            prefix = "[user]"
        else:
            prefix = "[env]"
        print(f"{prefix} {msg.content}", file=out)
        out.flush()

    return write


def _load_objective(args, cfg) -> str:
    if args.objective:
        return args.objective
    if getattr(args, "objective_file", None):
        return Path(args.objective_file).read_text(encoding="utf-8").strip()
    if cfg is not None and cfg.objective:
        return cfg.objective
    raise ConfigError("no objective given (use --objective, --objective-file, "
                      "or an objective in the config)")


def cmd_run(args) -> int:
    try:
        cfg = config_mod.load_config(args.config)
        objective = _load_objective(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    if args.max_iterations is not None:
        cfg = dataclasses.replace(
            cfg, limits=dataclasses.replace(cfg.limits,
                                            max_iterations=args.max_iterations))
    if args.no_sandbox:
        print("warning: --no-sandbox runs commands UNSANDBOXED on this host",
              file=sys.stderr)
        cfg = dataclasses.replace(
            cfg, sandbox=dataclasses.replace(cfg.sandbox, runtime="local"))

    workspace = Path(args.workspace)
    if not workspace.is_dir():
        print(f"error: workspace {workspace} does not exist", file=sys.stderr)
        return EXIT_ERROR

    cancel_event = threading.Event()
    previous = signal.signal(signal.SIGINT, lambda *_: cancel_event.set())
    ask_fn = None
    if args.interactive:
        def ask_fn(question: str) -> str:
            print(f"[ask] {question}", file=sys.stderr)
            return input("> ")

    try:
        outcome = orchestrator.run_objective(
            objective, cfg, workspace,
            cancel_event=cancel_event,
            ask_fn=ask_fn,
            on_message=_stream_writer(to_stderr=args.transcript is not None),
            transcript_path=args.transcript,
        )
    finally:
        signal.signal(signal.SIGINT, previous)

    if args.report:
        doc = outcome.report.to_dict()
        doc["workspace_hash"] = outcome.workspace_final_state
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n",
                                     encoding="utf-8")
    return EXIT_DONE if outcome.verdict.status == "done" else EXIT_ABORTED


def cmd_validate_config(args) -> int:
    try:
        config_mod.load_config(args.config)
    except ConfigError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print("ok")
    return EXIT_DONE


def cmd_stats(args) -> int:
    reports = []
    try:
        for path in args.transcripts:
            reports.append(metrics.tally(path))
        agg = metrics.aggregate(reports)
    except (metrics.FormatError, metrics.EmptyInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.out:
        doc = metrics.write_report_files(reports, Path(args.out))
        print(json.dumps(doc, indent=2))
        print(f"wrote report.json, commands.csv, commands.png to {args.out}",
              file=sys.stderr)
    else:
        print(metrics.format_table(agg))
    return EXIT_DONE


def _replay_config(script_path: Path, no_sandbox: bool) -> RulesConfig:
    data = yaml.safe_load(script_path.read_text(encoding="utf-8"))
    if isinstance(data, dict):
        responses = data.get("responses")
    else:
        responses = data
    if not isinstance(responses, list) or not responses:
        raise ConfigError(f"replay script {script_path} must hold a non-empty "
                          "list of responses")
    backend = ScriptedBackend(responses=[str(r) for r in responses])
    runtime = "local" if no_sandbox else "docker"
    return RulesConfig(
        agents=(AgentSpec(name="replay", persona="Replayed developer agent.",
                          allowed_commands=frozenset(commands.DEFAULT_REGISTRY),
                          backend=backend),),
        global_allowed_commands=frozenset(commands.DEFAULT_REGISTRY),
        scheduler=scheduling.RoundRobin(),
        sandbox=SandboxConfig(runtime=runtime),
    )


def cmd_replay(args) -> int:
    try:
        cfg = _replay_config(Path(args.script), args.no_sandbox)
        objective = args.objective or "Replay the scripted conversation."
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.no_sandbox:
        print("warning: --no-sandbox runs commands UNSANDBOXED on this host",
              file=sys.stderr)
    outcome = orchestrator.run_objective(
        objective, cfg, Path(args.workspace),
        on_message=_stream_writer(to_stderr=args.transcript is not None),
        transcript_path=args.transcript,
    )
    return EXIT_DONE if outcome.verdict.status == "done" else EXIT_ABORTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autodev",
        description="Run autonomous coding agents against a workspace.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="pursue an objective")
    p_run.add_argument("--config", required=True, help="rules/actions YAML file")
    p_run.add_argument("--objective", help="objective text")
    p_run.add_argument("--objective-file", help="file holding the objective")
    p_run.add_argument("--workspace", required=True, help="workspace directory")
    p_run.add_argument("--transcript", help="write the transcript JSONL here")
    p_run.add_argument("--report", help="write the run report JSON here")
    p_run.add_argument("--max-iterations", type=int, default=None,
                       help="override the configured iteration limit")
    p_run.add_argument("--no-sandbox", action="store_true",
                       help="use the local executor instead of a container (insecure)")
    p_run.add_argument("--interactive", action="store_true",
                       help="answer agent `ask` commands on the terminal")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate-config", help="check a config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate_config)

    p_stats = sub.add_parser("stats", help="tally one or more transcripts")
    p_stats.add_argument("transcripts", nargs="+")
    p_stats.add_argument("--out", help="directory for report.json, commands.csv, "
                                       "and the commands.png figure")
    p_stats.set_defaults(func=cmd_stats)

    p_replay = sub.add_parser("replay", help="replay a scripted agent")
    p_replay.add_argument("script", help="YAML file with the agent responses")
    p_replay.add_argument("workspace")
    p_replay.add_argument("--objective", help="objective text for the transcript")
    p_replay.add_argument("--transcript", help="write the transcript JSONL here")
    p_replay.add_argument("--no-sandbox", action="store_true",
                          help="use the local executor (insecure)")
    p_replay.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_ABORTED
    except Exception as exc:  # internal error contract: exit 1
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
