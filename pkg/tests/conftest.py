import shutil
from pathlib import Path

import pytest
import yaml

from autodev import commands, scheduling
from autodev.agents import ScriptedBackend
from autodev.config import AgentSpec, GitPolicy, Limits, RulesConfig
from autodev.sandbox import LocalSession, SandboxConfig

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def is_bored_workspace(tmp_path):
    """Fresh copy of the is_bored fixture (no test file yet)."""
    dst = tmp_path / "ws"
    shutil.copytree(FIXTURES / "is_bored", dst)
    return dst


@pytest.fixture
def failing_workspace(tmp_path):
    dst = tmp_path / "ws_failing"
    shutil.copytree(FIXTURES / "is_bored_failing", dst)
    return dst


@pytest.fixture
def passing_workspace(tmp_path):
    dst = tmp_path / "ws_passing"
    shutil.copytree(FIXTURES / "is_bored_passing", dst)
    return dst


def replay_responses():
    doc = yaml.safe_load((FIXTURES / "scripts" / "is_bored_replay.yaml").read_text())
    return list(doc["responses"])


def scripted_config(responses, *, agents_extra=(), limits=None, scheduler=None,
                    git=None, mount_mode="copy", allowed=None):
    """Single scripted agent over the local executor; the testing default."""
    allowed = frozenset(allowed) if allowed is not None \
        else frozenset(commands.DEFAULT_REGISTRY)
    agent = AgentSpec(name="dev", persona="Developer.",
                      allowed_commands=allowed,
                      backend=ScriptedBackend(responses=list(responses)))
    return RulesConfig(
        agents=(agent,) + tuple(agents_extra),
        global_allowed_commands=frozenset(commands.DEFAULT_REGISTRY),
        limits=limits or Limits(),
        scheduler=scheduler or scheduling.RoundRobin(),
        sandbox=SandboxConfig(runtime="local", workspace_mount_mode=mount_mode),
        git=git or GitPolicy(),
    )


def local_session(workspace, mount_mode="copy"):
    return LocalSession(SandboxConfig(runtime="local",
                                      workspace_mount_mode=mount_mode), workspace)
