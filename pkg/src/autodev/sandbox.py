"""Sandboxed execution of tool argvs.

The production backend is a long-lived Docker container driven through the
docker CLI; a local subprocess executor implements the same Session
contract for environments without a container runtime. The local executor
provides no isolation and is labeled insecure wherever it is selected.

In copy mode the session works on a snapshot of the workspace, so a
misbehaving run cannot damage the original tree until it is explicitly
exported back.
"""

from __future__ import annotations

import logging
import os
import posixpath
import shutil
import signal
import subprocess
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

STREAM_CAP_BYTES = 1024 * 1024  # per-stream capture cap


@dataclass(frozen=True)
class SandboxConfig:
    runtime: str = "docker"  # "docker" | "local" (local = no isolation)
    image: str = "autodev-sandbox:latest"
    network_enabled: bool = False
    cpu_limit: Optional[float] = None
    mem_limit: Optional[str] = None
    default_timeout: float = 120.0
    workspace_mount_mode: str = "copy"  # "copy" | "bind"


@dataclass
class ExecutionResult:
    exit_code: int
    stdout: str
    stderr: str
    duration: float
    timed_out: bool = False
    truncated_stdout: bool = False
    truncated_stderr: bool = False
    canceled: bool = False


class SandboxError(Exception):
    pass


class RuntimeUnavailable(SandboxError):
    """No container runtime reachable."""


class ImageMissing(SandboxError):
    """The configured container image cannot be used."""


class SessionDead(SandboxError):
    """The session's container/process backend is gone."""


class PathEscape(SandboxError):
    """A file path pointed outside the session workspace."""


IN_CONTAINER_ROOT = "/workspace"


def _confine(path: str) -> str:
    """Normalize a session file path, rejecting anything outside /workspace.

    Accepts workspace-relative paths or absolute paths under the fixed
    in-container root. Purely lexical, so symlinks cannot widen it.
    """
    rel = str(path).replace("\\", "/")
    if rel.startswith("/"):
        if rel == IN_CONTAINER_ROOT or rel.startswith(IN_CONTAINER_ROOT + "/"):
            rel = rel[len(IN_CONTAINER_ROOT):].lstrip("/")
        else:
            raise PathEscape(f"path {path!r} is outside {IN_CONTAINER_ROOT}")
    norm = posixpath.normpath(rel) if rel else "."
    if norm in (".", "..") or norm.startswith("../"):
        raise PathEscape(f"path {path!r} is outside the workspace")
    return norm


class _Reader(threading.Thread):
    """Drains one pipe, keeping at most STREAM_CAP_BYTES."""

    def __init__(self, pipe):
        super().__init__(daemon=True)
        self.pipe = pipe
        self.data = b""
        self.total = 0
        self.start()

    def run(self):
        try:
            while True:
                chunk = self.pipe.read(65536)
                if not chunk:
                    break
                self.total += len(chunk)
                if len(self.data) < STREAM_CAP_BYTES:
                    self.data += chunk[: STREAM_CAP_BYTES - len(self.data)]
        except Exception:
            pass
        finally:
            try:
                self.pipe.close()
            except Exception:
                pass


def _run_supervised(argv: list[str], cwd: Optional[str], timeout: float,
                    cancel_event: Optional[threading.Event],
                    env: Optional[dict] = None) -> ExecutionResult:
    """Run argv without shell interpretation; kill the whole process tree on
    timeout or cancelation. Streams are capped at 1 MiB each."""
    start = time.monotonic()
    proc = subprocess.Popen(
        argv,
        cwd=cwd,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        stdin=subprocess.DEVNULL,
        start_new_session=True,
        env=env,
    )
    out = _Reader(proc.stdout)
    err = _Reader(proc.stderr)
    timed_out = canceled = False
    while True:
        rc = proc.poll()
        if rc is not None:
            break
        now = time.monotonic()
        if cancel_event is not None and cancel_event.is_set():
            canceled = True
        if now - start >= timeout:
            timed_out = True
        if timed_out or canceled:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            proc.wait()
            break
        time.sleep(0.02)
    out.join(timeout=5)
    err.join(timeout=5)
    duration = time.monotonic() - start
    return ExecutionResult(
        exit_code=proc.returncode if proc.returncode is not None else -1,
        stdout=out.data.decode("utf-8", errors="replace"),
        stderr=err.data.decode("utf-8", errors="replace"),
        duration=duration,
        timed_out=timed_out,
        truncated_stdout=out.total > len(out.data),
        truncated_stderr=err.total > len(err.data),
        canceled=canceled,
    )


class Session:
    """One sandbox session per run. exec calls are serialized by the loop.

    `root` is the host-side canonical workspace: in copy mode a private
    snapshot, in bind mode the original tree. `exec_log` records every argv
    actually executed, which the safety tests assert against.
    """

    def __init__(self, cfg: SandboxConfig, workspace: Path):
        self.cfg = cfg
        self.origin = Path(workspace)
        self.exec_log: list[list[str]] = []
        self._alive = False
        self._staging: Optional[Path] = None
        if cfg.workspace_mount_mode == "copy":
            self._staging = Path(tempfile.mkdtemp(prefix="autodev-ws-"))
            self.root = self._staging / "workspace"
            shutil.copytree(self.origin, self.root, symlinks=True)
        else:
            self.root = self.origin

    # -- file plumbing (copy-mode workspaces need explicit transfer) --

    def _resolve(self, path: str) -> Path:
        return self.root / _confine(path)

    def sync_file(self, path: str, content: bytes) -> None:
        if not self._alive:
            raise SessionDead("session is not running")
        target = self._resolve(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.parent / f".{target.name}.{uuid.uuid4().hex}.tmp"
        tmp.write_bytes(content)
        tmp.replace(target)

    def read_file(self, path: str) -> bytes:
        if not self._alive:
            raise SessionDead("session is not running")
        return self._resolve(path).read_bytes()

    def alive(self) -> bool:
        return self._alive

    def exec(self, argv: list[str], timeout: Optional[float] = None,
             cancel_event: Optional[threading.Event] = None) -> ExecutionResult:
        raise NotImplementedError

    def export_workspace(self, destination: Path) -> None:
        """Copy the session workspace over `destination` (copy mode only)."""
        if self._staging is None:
            return  # bind mode edits in place
        destination = Path(destination)
        destination.mkdir(parents=True, exist_ok=True)
        shutil.copytree(self.root, destination, dirs_exist_ok=True, symlinks=True)

    def teardown(self) -> None:
        """Idempotent, best-effort cleanup."""
        self._alive = False
        if self._staging is not None and self._staging.exists():
            shutil.rmtree(self._staging, ignore_errors=True)


class LocalSession(Session):
    """Subprocess executor, NO isolation. For CI and trusted fixtures only."""

    def __init__(self, cfg: SandboxConfig, workspace: Path):
        super().__init__(cfg, workspace)
        self._alive = True

    def exec(self, argv, timeout=None, cancel_event=None) -> ExecutionResult:
        if not self._alive:
            raise SessionDead("session is not running")
        self.exec_log.append(list(argv))
        return _run_supervised(
            list(argv),
            cwd=str(self.root),
            timeout=timeout if timeout is not None else self.cfg.default_timeout,
            cancel_event=cancel_event,
        )


class DockerSession(Session):
    """Long-lived container with the session workspace mounted at /workspace."""

    def __init__(self, cfg: SandboxConfig, workspace: Path, docker: str = "docker"):
        super().__init__(cfg, workspace)
        self.docker = docker
        self.name = f"autodev-{uuid.uuid4().hex[:12]}"
        run_argv = [docker, "run", "-d", "--name", self.name,
                    "-v", f"{self.root.resolve()}:/workspace",
                    "-w", "/workspace"]
        if not cfg.network_enabled:
            run_argv += ["--network", "none"]
        if cfg.cpu_limit:
            run_argv += ["--cpus", str(cfg.cpu_limit)]
        if cfg.mem_limit:
            run_argv += ["-m", str(cfg.mem_limit)]
        run_argv += [cfg.image, "sleep", "infinity"]
        try:
            proc = subprocess.run(run_argv, capture_output=True, text=True, timeout=120)
        except FileNotFoundError as exc:
            self.teardown()
            raise RuntimeUnavailable(f"docker CLI not found: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            self.teardown()
            raise RuntimeUnavailable("docker run timed out") from exc
        if proc.returncode != 0:
            stderr = proc.stderr.strip()
            self.teardown()
            if "No such image" in stderr or "pull access denied" in stderr \
                    or "manifest" in stderr or "not found" in stderr.lower():
                raise ImageMissing(f"image {cfg.image!r} unusable: {stderr}")
            raise RuntimeUnavailable(f"docker run failed: {stderr}")
        self._alive = True

    def exec(self, argv, timeout=None, cancel_event=None) -> ExecutionResult:
        if not self._alive:
            raise SessionDead("session is not running")
        self.exec_log.append(list(argv))
        limit = timeout if timeout is not None else self.cfg.default_timeout
        # In-container `timeout` kills the process tree even if the client
        # side is interrupted; the supervisor adds slack for docker overhead.
        wrapped = [self.docker, "exec", self.name,
                   "timeout", "-k", "2", str(int(limit) + 1)] + list(argv)
        result = _run_supervised(wrapped, cwd=None, timeout=limit + 10,
                                 cancel_event=cancel_event)
        if result.exit_code == 124:  # coreutils timeout status
            result.timed_out = True
        return result

    def alive(self) -> bool:
        if not self._alive:
            return False
        proc = subprocess.run(
            [self.docker, "inspect", "-f", "{{.State.Running}}", self.name],
            capture_output=True, text=True)
        return proc.returncode == 0 and proc.stdout.strip() == "true"

    def teardown(self) -> None:
        if self._alive or getattr(self, "name", None):
            try:
                subprocess.run([self.docker, "rm", "-f", self.name],
                               capture_output=True, text=True, timeout=60)
            except Exception as exc:  # best-effort; the run is over either way
                logger.warning("container cleanup failed: %s", exc)
        super().teardown()


def docker_available(docker: str = "docker") -> bool:
    try:
        proc = subprocess.run([docker, "info"], capture_output=True, timeout=10)
        return proc.returncode == 0
    except Exception:
        return False


def start_session(cfg: SandboxConfig, workspace: Path) -> Session:
    """Start a session per the config; raises RuntimeUnavailable/ImageMissing."""
    workspace = Path(workspace)
    if not workspace.is_dir():
        raise SandboxError(f"workspace {workspace} does not exist")
    if cfg.runtime == "local":
        logger.warning("local executor selected: commands run UNSANDBOXED on this host")
        return LocalSession(cfg, workspace)
    if not docker_available():
        raise RuntimeUnavailable(
            "no container runtime reachable (use runtime: local to run unsandboxed)")
    return DockerSession(cfg, workspace)
