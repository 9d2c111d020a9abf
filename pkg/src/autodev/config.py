"""Load and validate the YAML rules/actions/objective configuration.

The config defines the agents (personas, permitted commands, backends),
global command policy, run limits, scheduler choice, sandbox settings, and
optionally the objective. Unknown keys are errors, not warnings: a typo in
a security-relevant policy must not pass silently. A loaded RulesConfig is
immutable and safe to share across threads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from . import commands, scheduling
from .agents import RemoteBackend, ScriptedBackend
from .sandbox import SandboxConfig

DEFAULT_MAX_ITERATIONS = 50
DEFAULT_MAX_TOTAL_TOKENS = 128_000
DEFAULT_PARSE_FAILURE_CAP = 3
DEFAULT_COMMAND_TIMEOUT = 120.0


class ConfigError(Exception):
    """Base class for configuration problems."""


class ConfigSyntaxError(ConfigError):
    """The source is not well-formed YAML."""


class SchemaError(ConfigError):
    """Unknown field, wrong type, or violated invariant."""


class UnknownReferenceError(ConfigError):
    """A referenced command or backend does not exist."""


class UnknownAgentError(ConfigError):
    """An agent name that is not defined in the config."""


@dataclass(frozen=True)
class Limits:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    max_total_tokens: int = DEFAULT_MAX_TOTAL_TOKENS
    max_consecutive_parse_failures: int = DEFAULT_PARSE_FAILURE_CAP
    per_command_timeout: float = DEFAULT_COMMAND_TIMEOUT


@dataclass(frozen=True)
class GitPolicy:
    allow_local_commit: bool = True
    allow_push: bool = False


@dataclass(frozen=True)
class AgentSpec:
    name: str
    persona: str = ""
    allowed_commands: frozenset[str] = frozenset()
    priority: int = 0
    backend: object = None  # RemoteBackend | ScriptedBackend


@dataclass(frozen=True)
class RulesConfig:
    agents: tuple[AgentSpec, ...]
    global_allowed_commands: frozenset[str]
    limits: Limits = Limits()
    scheduler: object = scheduling.RoundRobin()
    sandbox: SandboxConfig = SandboxConfig()
    git: GitPolicy = GitPolicy()
    objective: Optional[str] = None

    def agent(self, name: str) -> AgentSpec:
        for a in self.agents:
            if a.name == name:
                return a
        raise UnknownAgentError(f"unknown agent {name!r}")


def _require_mapping(value: Any, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise SchemaError(f"{where} must be a mapping, got {type(value).__name__}")
    return value


def _check_keys(data: dict, allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise SchemaError(f"unknown {where} key(s): {', '.join(sorted(unknown))}")


def _as_int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where} must be an integer, got {value!r}")
    return value


def _as_positive_int(value: Any, where: str) -> int:
    n = _as_int(value, where)
    if n <= 0:
        raise SchemaError(f"{where} must be strictly positive, got {n}")
    return n


def _as_number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where} must be a number, got {value!r}")
    return float(value)


def _as_bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise SchemaError(f"{where} must be a boolean, got {value!r}")
    return value


def _as_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{where} must be a string, got {value!r}")
    return value


def _command_set(value: Any, where: str, registry: commands.ToolRegistry) -> frozenset[str]:
    if not isinstance(value, (list, tuple)):
        raise SchemaError(f"{where} must be a list of command names")
    names = []
    for item in value:
        name = _as_str(item, where)
        if name not in registry:
            raise UnknownReferenceError(f"{where} references unknown command {name!r}")
        names.append(name)
    return frozenset(names)


def _build_limits(data: dict) -> Limits:
    _check_keys(data, {"max_iterations", "max_total_tokens",
                       "max_consecutive_parse_failures", "per_command_timeout"}, "limits")
    lim = Limits()
    kwargs = {}
    if "max_iterations" in data:
        kwargs["max_iterations"] = _as_positive_int(data["max_iterations"], "limits.max_iterations")
    if "max_total_tokens" in data:
        kwargs["max_total_tokens"] = _as_positive_int(data["max_total_tokens"], "limits.max_total_tokens")
    if "max_consecutive_parse_failures" in data:
        kwargs["max_consecutive_parse_failures"] = _as_positive_int(
            data["max_consecutive_parse_failures"], "limits.max_consecutive_parse_failures")
    if "per_command_timeout" in data:
        timeout = _as_number(data["per_command_timeout"], "limits.per_command_timeout")
        if timeout <= 0:
            raise SchemaError("limits.per_command_timeout must be strictly positive")
        kwargs["per_command_timeout"] = timeout
    if kwargs:
        from dataclasses import replace
        lim = replace(lim, **kwargs)
    return lim


def _build_scheduler(data: dict):
    _check_keys(data, {"kind", "ops_per_turn", "handoff_marker"}, "scheduler")
    kind = _as_str(data.get("kind", "round_robin"), "scheduler.kind")
    if kind in ("round_robin", "priority"):
        ops = _as_positive_int(data.get("ops_per_turn", 1), "scheduler.ops_per_turn")
        if "handoff_marker" in data:
            raise SchemaError(f"scheduler.handoff_marker is only valid for kind token_based")
        if kind == "round_robin":
            return scheduling.RoundRobin(ops_per_turn=ops)
        return scheduling.PriorityBased(ops_per_turn=ops)
    if kind == "token_based":
        if "ops_per_turn" in data:
            raise SchemaError("scheduler.ops_per_turn is not valid for kind token_based")
        marker = _as_str(data.get("handoff_marker", scheduling.DEFAULT_HANDOFF_MARKER),
                         "scheduler.handoff_marker")
        if not marker:
            raise SchemaError("scheduler.handoff_marker must be non-empty")
        return scheduling.TokenBased(handoff_marker=marker)
    raise SchemaError(f"unknown scheduler kind {kind!r} "
                      "(expected round_robin, token_based, or priority)")


def _build_sandbox(data: dict) -> SandboxConfig:
    _check_keys(data, {"runtime", "image", "network_enabled", "cpu_limit", "mem_limit",
                       "default_timeout", "workspace_mount_mode"}, "sandbox")
    cfg = SandboxConfig()
    kwargs: dict[str, Any] = {}
    if "runtime" in data:
        runtime = _as_str(data["runtime"], "sandbox.runtime")
        if runtime not in ("docker", "local"):
            raise SchemaError(f"sandbox.runtime must be 'docker' or 'local', got {runtime!r}")
        kwargs["runtime"] = runtime
    if "image" in data:
        kwargs["image"] = _as_str(data["image"], "sandbox.image")
    if "network_enabled" in data:
        kwargs["network_enabled"] = _as_bool(data["network_enabled"], "sandbox.network_enabled")
    if "cpu_limit" in data and data["cpu_limit"] is not None:
        kwargs["cpu_limit"] = _as_number(data["cpu_limit"], "sandbox.cpu_limit")
    if "mem_limit" in data and data["mem_limit"] is not None:
        kwargs["mem_limit"] = _as_str(data["mem_limit"], "sandbox.mem_limit")
    if "default_timeout" in data:
        timeout = _as_number(data["default_timeout"], "sandbox.default_timeout")
        if timeout <= 0:
            raise SchemaError("sandbox.default_timeout must be strictly positive")
        kwargs["default_timeout"] = timeout
    if "workspace_mount_mode" in data:
        mode = _as_str(data["workspace_mount_mode"], "sandbox.workspace_mount_mode")
        if mode not in ("copy", "bind"):
            raise SchemaError(f"sandbox.workspace_mount_mode must be 'copy' or 'bind', got {mode!r}")
        kwargs["workspace_mount_mode"] = mode
    if kwargs:
        from dataclasses import replace
        cfg = replace(cfg, **kwargs)
    return cfg


def _build_git(data: dict) -> GitPolicy:
    _check_keys(data, {"allow_local_commit", "allow_push"}, "git")
    allow_local = _as_bool(data.get("allow_local_commit", True), "git.allow_local_commit")
    allow_push = _as_bool(data.get("allow_push", False), "git.allow_push")
    if allow_push and not allow_local:
        raise SchemaError("git.allow_push requires git.allow_local_commit")
    return GitPolicy(allow_local_commit=allow_local, allow_push=allow_push)


def _build_backend(value: Any, where: str, backends: dict, base_dir: Optional[Path]):
    if value is None:
        raise SchemaError(f"{where} is required (remote endpoint, scripted responses, "
                          "a backends id, or a script path)")
    if isinstance(value, str):
        if value in backends:
            return backends[value]
        candidate = (base_dir / value) if base_dir is not None else Path(value)
        if value.endswith((".yaml", ".yml", ".json")) and candidate.exists():
            responses = yaml.safe_load(candidate.read_text(encoding="utf-8"))
            if isinstance(responses, dict):
                responses = responses.get("responses")
            if not isinstance(responses, list) or not responses:
                raise SchemaError(f"{where}: script file {value!r} must hold a non-empty list")
            return ScriptedBackend(responses=[str(r) for r in responses])
        raise UnknownReferenceError(f"{where} references unknown backend {value!r}")
    data = _require_mapping(value, where)
    kind = _as_str(data.get("kind", ""), f"{where}.kind")
    if kind == "scripted":
        _check_keys(data, {"kind", "responses"}, where)
        responses = data.get("responses")
        if not isinstance(responses, list) or not responses:
            raise SchemaError(f"{where}.responses must be a non-empty list")
        return ScriptedBackend(responses=[str(r) for r in responses])
    if kind == "remote":
        _check_keys(data, {"kind", "endpoint", "model", "temperature",
                           "max_retries", "api_key_env"}, where)
        endpoint = _as_str(data.get("endpoint", ""), f"{where}.endpoint")
        if not endpoint:
            raise SchemaError(f"{where}.endpoint is required for remote backends")
        return RemoteBackend(
            endpoint=endpoint,
            model_id=_as_str(data.get("model", "gpt-4"), f"{where}.model"),
            temperature=_as_number(data.get("temperature", 0.0), f"{where}.temperature"),
            max_retries=_as_int(data.get("max_retries", 3), f"{where}.max_retries"),
            api_key_env=_as_str(data.get("api_key_env", "AUTODEV_API_KEY"),
                                f"{where}.api_key_env"),
        )
    raise SchemaError(f"{where}.kind must be 'remote' or 'scripted', got {kind!r}")


def load_config(source, registry: Optional[commands.ToolRegistry] = None) -> RulesConfig:
    """Load a RulesConfig from YAML text or a file path.

    Unspecified limits get the documented defaults (50 iterations, 128000
    tokens, 3 consecutive parse failures, 120 s per command). YAML is a JSON
    superset, so a JSON document loads through the same path.
    """
    registry = commands.DEFAULT_REGISTRY if registry is None else registry
    base_dir: Optional[Path] = None
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and (source.endswith((".yaml", ".yml", ".json"))
                                         or os.path.exists(source))):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        base_dir = path.parent
        text = path.read_text(encoding="utf-8")

    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigSyntaxError(f"malformed YAML: {exc}") from exc
    data = _require_mapping(data, "config")

    _check_keys(data, {"agents", "allowed_commands", "limits", "scheduler",
                       "sandbox", "git", "objective", "backends"}, "top-level")

    backends: dict[str, object] = {}
    for bid, bdata in _require_mapping(data.get("backends"), "backends").items():
        backends[_as_str(bid, "backends id")] = _build_backend(
            bdata, f"backends.{bid}", {}, base_dir)

    if "allowed_commands" in data:
        global_allowed = _command_set(data["allowed_commands"], "allowed_commands", registry)
    else:
        global_allowed = frozenset(registry)

    agents_data = data.get("agents")
    if not isinstance(agents_data, list) or not agents_data:
        raise SchemaError("config must define at least one agent")
    agents: list[AgentSpec] = []
    seen: set[str] = set()
    for i, item in enumerate(agents_data):
        adata = _require_mapping(item, f"agents[{i}]")
        _check_keys(adata, {"name", "persona", "allowed_commands", "priority", "backend"},
                    f"agents[{i}]")
        name = _as_str(adata.get("name", ""), f"agents[{i}].name")
        if not name:
            raise SchemaError(f"agents[{i}].name is required")
        if name in seen:
            raise SchemaError(f"duplicate agent name {name!r}")
        seen.add(name)
        if "allowed_commands" in adata:
            allowed = _command_set(adata["allowed_commands"],
                                   f"agents[{i}].allowed_commands", registry)
            extra = allowed - global_allowed
            if extra:
                raise SchemaError(
                    f"agent {name!r} allows command(s) outside the global set: "
                    f"{', '.join(sorted(extra))}")
        else:
            allowed = global_allowed
        priority = _as_int(adata.get("priority", 0), f"agents[{i}].priority")
        if priority < 0:
            raise SchemaError(f"agents[{i}].priority must be >= 0")
        backend = _build_backend(adata.get("backend"), f"agents[{i}].backend",
                                 backends, base_dir)
        agents.append(AgentSpec(name=name,
                                persona=_as_str(adata.get("persona", ""), f"agents[{i}].persona"),
                                allowed_commands=allowed,
                                priority=priority,
                                backend=backend))

    objective = data.get("objective")
    if objective is not None:
        objective = _as_str(objective, "objective")

    return RulesConfig(
        agents=tuple(agents),
        global_allowed_commands=global_allowed,
        limits=_build_limits(_require_mapping(data.get("limits"), "limits")),
        scheduler=_build_scheduler(_require_mapping(data.get("scheduler"), "scheduler")),
        sandbox=_build_sandbox(_require_mapping(data.get("sandbox"), "sandbox")),
        git=_build_git(_require_mapping(data.get("git"), "git")),
        objective=objective,
    )


def effective_permissions(config: RulesConfig, agent: str) -> set[str]:
    """Commands the agent may issue: its set ∩ the global set, plus talk/stop.

    talk and stop are always permitted; without stop no agent could ever
    signal completion.
    """
    spec = config.agent(agent)  # raises UnknownAgentError
    return (set(spec.allowed_commands) & set(config.global_allowed_commands)) | set(
        commands.ALWAYS_PERMITTED)


def serialize(config: RulesConfig) -> str:
    """Canonical YAML for a loaded config; load(serialize(c)) round-trips."""

    def backend_dict(backend) -> dict:
        if isinstance(backend, ScriptedBackend):
            return {"kind": "scripted", "responses": list(backend.responses)}
        return {
            "kind": "remote",
            "endpoint": backend.endpoint,
            "model": backend.model_id,
            "temperature": backend.temperature,
            "max_retries": backend.max_retries,
            "api_key_env": backend.api_key_env,
        }

    sched = config.scheduler
    if isinstance(sched, scheduling.TokenBased):
        sched_dict = {"kind": "token_based", "handoff_marker": sched.handoff_marker}
    elif isinstance(sched, scheduling.PriorityBased):
        sched_dict = {"kind": "priority", "ops_per_turn": sched.ops_per_turn}
    else:
        sched_dict = {"kind": "round_robin", "ops_per_turn": sched.ops_per_turn}

    doc = {
        "agents": [
            {
                "name": a.name,
                "persona": a.persona,
                "allowed_commands": sorted(a.allowed_commands),
                "priority": a.priority,
                "backend": backend_dict(a.backend),
            }
            for a in config.agents
        ],
        "allowed_commands": sorted(config.global_allowed_commands),
        "limits": {
            "max_iterations": config.limits.max_iterations,
            "max_total_tokens": config.limits.max_total_tokens,
            "max_consecutive_parse_failures": config.limits.max_consecutive_parse_failures,
            "per_command_timeout": config.limits.per_command_timeout,
        },
        "scheduler": sched_dict,
        "sandbox": {
            "runtime": config.sandbox.runtime,
            "image": config.sandbox.image,
            "network_enabled": config.sandbox.network_enabled,
            "cpu_limit": config.sandbox.cpu_limit,
            "mem_limit": config.sandbox.mem_limit,
            "default_timeout": config.sandbox.default_timeout,
            "workspace_mount_mode": config.sandbox.workspace_mount_mode,
        },
        "git": {
            "allow_local_commit": config.git.allow_local_commit,
            "allow_push": config.git.allow_push,
        },
    }
    if config.objective is not None:
        doc["objective"] = config.objective
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)
