"""Config loading, defaults, invariants, and permission computation."""

import pytest

from autodev import scheduling
from autodev.agents import RemoteBackend, ScriptedBackend
from autodev.config import (
    ConfigSyntaxError,
    SchemaError,
    UnknownAgentError,
    UnknownReferenceError,
    effective_permissions,
    load_config,
    serialize,
)
from conftest import FIXTURES

MINIMAL = FIXTURES / "minimal.yaml"


def test_minimal_fixture_gets_documented_defaults():
    cfg = load_config(MINIMAL)
    assert [a.name for a in cfg.agents] == ["dev"]
    assert cfg.limits.max_iterations == 50
    assert cfg.limits.max_total_tokens == 128_000
    assert cfg.limits.max_consecutive_parse_failures == 3
    assert cfg.limits.per_command_timeout == 120.0
    assert isinstance(cfg.scheduler, scheduling.RoundRobin)
    assert cfg.sandbox.runtime == "docker"
    assert cfg.sandbox.workspace_mount_mode == "copy"
    assert cfg.sandbox.network_enabled is False
    assert cfg.git.allow_local_commit is True
    assert cfg.git.allow_push is False
    assert isinstance(cfg.agents[0].backend, ScriptedBackend)


def test_load_accepts_yaml_text_and_json_text():
    yaml_cfg = load_config("agents:\n  - name: a\n    backend:\n      kind: scripted\n"
                           "      responses: [stop]\n")
    json_cfg = load_config(
        '{"agents": [{"name": "a", "backend": '
        '{"kind": "scripted", "responses": ["stop"]}}]}\n')
    assert serialize(yaml_cfg) == serialize(json_cfg)


def test_malformed_yaml_is_a_syntax_error():
    with pytest.raises(ConfigSyntaxError):
        load_config("agents: [unclosed\n  - oops\n")


def test_unknown_top_level_key_fails_fast():
    with pytest.raises(SchemaError) as err:
        load_config("agents:\n  - name: a\n    backend: {kind: scripted, responses: [s]}\n"
                    "permissions: {}\n")
    assert "permissions" in str(err.value)


def test_unknown_command_reference_names_the_command():
    with pytest.raises(UnknownReferenceError) as err:
        load_config("agents:\n  - name: a\n    allowed_commands: [fly]\n"
                    "    backend: {kind: scripted, responses: [s]}\n")
    assert "fly" in str(err.value)


def test_duplicate_agent_names_rejected():
    with pytest.raises(SchemaError) as err:
        load_config(
            "agents:\n"
            "  - {name: dev, backend: {kind: scripted, responses: [s]}}\n"
            "  - {name: dev, backend: {kind: scripted, responses: [s]}}\n")
    assert "dev" in str(err.value)


def test_agent_commands_must_be_subset_of_global():
    with pytest.raises(SchemaError):
        load_config("allowed_commands: [test]\n"
                    "agents:\n  - name: a\n    allowed_commands: [test, write]\n"
                    "    backend: {kind: scripted, responses: [s]}\n")


def test_at_least_one_agent_required():
    with pytest.raises(SchemaError):
        load_config("agents: []\n")


def test_limits_must_be_strictly_positive():
    for field, value in [("max_iterations", 0), ("max_total_tokens", -5),
                         ("max_consecutive_parse_failures", 0),
                         ("per_command_timeout", 0)]:
        with pytest.raises(SchemaError):
            load_config("agents:\n  - {name: a, backend: {kind: scripted, responses: [s]}}\n"
                        f"limits: {{{field}: {value}}}\n")


def test_push_without_local_commit_violates_policy_invariant():
    with pytest.raises(SchemaError):
        load_config("agents:\n  - {name: a, backend: {kind: scripted, responses: [s]}}\n"
                    "git: {allow_local_commit: false, allow_push: true}\n")


def test_scheduler_kinds_parse():
    base = "agents:\n  - {name: a, backend: {kind: scripted, responses: [s]}}\n"
    rr = load_config(base + "scheduler: {kind: round_robin, ops_per_turn: 3}\n")
    assert rr.scheduler == scheduling.RoundRobin(ops_per_turn=3)
    tb = load_config(base + "scheduler: {kind: token_based, handoff_marker: YIELD}\n")
    assert tb.scheduler == scheduling.TokenBased(handoff_marker="YIELD")
    pb = load_config(base + "scheduler: {kind: priority}\n")
    assert pb.scheduler == scheduling.PriorityBased(ops_per_turn=1)
    with pytest.raises(SchemaError):
        load_config(base + "scheduler: {kind: token_based, ops_per_turn: 2}\n")
    with pytest.raises(SchemaError):
        load_config(base + "scheduler: {kind: lottery}\n")


def test_remote_backend_parses():
    cfg = load_config(
        "agents:\n"
        "  - name: a\n"
        "    backend:\n"
        "      kind: remote\n"
        "      endpoint: http://127.0.0.1:9/v1/chat/completions\n"
        "      model: test-model\n"
        "      temperature: 0.5\n")
    backend = cfg.agents[0].backend
    assert isinstance(backend, RemoteBackend)
    assert backend.model_id == "test-model"
    assert backend.temperature == 0.5
    assert backend.max_retries == 3


def test_backend_id_reference(tmp_path):
    cfg = load_config(
        "backends:\n"
        "  scripty: {kind: scripted, responses: [stop]}\n"
        "agents:\n"
        "  - {name: a, backend: scripty}\n")
    assert isinstance(cfg.agents[0].backend, ScriptedBackend)
    with pytest.raises(UnknownReferenceError):
        load_config("agents:\n  - {name: a, backend: nonexistent}\n")


def test_backend_script_path_reference(tmp_path):
    script = tmp_path / "responses.yaml"
    script.write_text("responses: [talk hi, stop]\n")
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text("agents:\n  - {name: a, backend: responses.yaml}\n")
    cfg = load_config(cfg_path)
    assert cfg.agents[0].backend.responses == ["talk hi", "stop"]


def test_serialize_load_idempotent():
    for source in (MINIMAL.read_text(),
                   "agents:\n"
                   "  - name: dev\n"
                   "    persona: Developer\n"
                   "    allowed_commands: [write, test]\n"
                   "    priority: 2\n"
                   "    backend: {kind: scripted, responses: [stop]}\n"
                   "allowed_commands: [write, test, grep]\n"
                   "limits: {max_iterations: 9}\n"
                   "scheduler: {kind: priority, ops_per_turn: 2}\n"
                   "sandbox: {runtime: local, workspace_mount_mode: bind}\n"
                   "git: {allow_local_commit: true, allow_push: true}\n"
                   "objective: do the thing\n"):
        once = serialize(load_config(source))
        twice = serialize(load_config(once))
        assert once == twice


def test_effective_permissions_intersection_plus_communication():
    cfg = load_config(
        "allowed_commands: [write, test, grep]\n"
        "agents:\n"
        "  - name: dev\n"
        "    allowed_commands: [write, test]\n"
        "    backend: {kind: scripted, responses: [s]}\n")
    assert effective_permissions(cfg, "dev") == {"write", "test", "talk", "stop"}
    # brute-force oracle: set arithmetic straight from the config fields
    spec = cfg.agents[0]
    oracle = (set(spec.allowed_commands) & set(cfg.global_allowed_commands)) \
        | {"talk", "stop"}
    assert effective_permissions(cfg, "dev") == oracle


def test_effective_permissions_empty_agent_set():
    cfg = load_config(
        "allowed_commands: [write]\n"
        "agents:\n"
        "  - name: dev\n"
        "    allowed_commands: []\n"
        "    backend: {kind: scripted, responses: [s]}\n")
    assert effective_permissions(cfg, "dev") == {"talk", "stop"}


def test_effective_permissions_unknown_agent():
    cfg = load_config(MINIMAL)
    with pytest.raises(UnknownAgentError):
        effective_permissions(cfg, "ghost")


def test_effective_permissions_subset_property():
    cfg = load_config(
        "allowed_commands: [write, test, grep, stop]\n"
        "agents:\n"
        "  - {name: a, allowed_commands: [write], backend: {kind: scripted, responses: [s]}}\n"
        "  - {name: b, allowed_commands: [grep, test], backend: {kind: scripted, responses: [s]}}\n")
    universe = set(cfg.global_allowed_commands) | {"talk", "stop"}
    for agent in cfg.agents:
        assert effective_permissions(cfg, agent.name) <= universe
