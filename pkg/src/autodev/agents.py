"""Agent backends: a remote chat-model endpoint and a deterministic script.

Scripted backends replay a fixed list of responses, which makes whole runs
bit-reproducible; the remote backend speaks the de-facto chat-completions
JSON so any compatible server works.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import requests

from .conversation import KIND_OBJECTIVE, ROLE_AGENT, ROLE_USER, Message, token_estimate

logger = logging.getLogger(__name__)

DEFAULT_REPLY_RESERVE = 1_024  # tokens held back for the agent's reply


class ScriptExhausted(Exception):
    """A scripted backend ran out of responses."""


class RemoteError(Exception):
    """The remote endpoint failed after all retries."""


class BudgetError(Exception):
    """Objective plus command help alone exceed the prompt budget."""


@dataclass
class ScriptedBackend:
    """Replays canned responses verbatim, one per turn."""

    responses: list[str]
    cursor: int = 0

    def next_response(self) -> str:
        if self.cursor >= len(self.responses):
            raise ScriptExhausted(f"script exhausted after {self.cursor} responses")
        text = self.responses[self.cursor]
        self.cursor += 1
        return text


@dataclass
class RemoteBackend:
    """Chat-completions endpoint. The API key comes from the environment,
    never from the config file."""

    endpoint: str
    model_id: str = "gpt-4"
    temperature: float = 0.0
    max_retries: int = 3
    api_key_env: str = "AUTODEV_API_KEY"
    retry_base_delay: float = 0.5
    request_timeout: float = 120.0


@dataclass(frozen=True)
class TurnRequest:
    """Everything one agent turn needs: persona, objective, permitted-command
    help, and the most recent conversation window that fits the budget."""

    agent_name: str
    persona: str
    objective: str
    command_help: str
    messages: Sequence[Message] = ()
    token_budget: int = 128_000


def _message_label(msg: Message) -> str:
    if msg.role == ROLE_AGENT:
        return f"agent:{msg.agent}" if msg.agent else "agent"
    if msg.role == ROLE_USER:
        return "user"
    return "env"


def build_prompt(req: TurnRequest) -> str:
    """Assemble the turn prompt deterministically.

    Layout: persona, objective, command help, then the conversation oldest
    to newest. If the window exceeds the budget, the oldest non-objective
    messages are dropped first; the objective and help blocks are never
    dropped. Raises BudgetError when they alone do not fit.
    """
    header = (
        f"[persona]\nYou are {req.agent_name}. {req.persona}".rstrip()
        + f"\n\n[objective]\n{req.objective}"
        + f"\n\n[commands]\nRespond with exactly one command per message."
        + f" Available commands:\n{req.command_help}"
        + "\n\n[conversation]\n"
    )
    budget = req.token_budget
    used = token_estimate(header)
    if used > budget:
        raise BudgetError(
            f"objective and command help need {used} tokens, budget is {budget}")

    window = [m for m in req.messages if m.kind != KIND_OBJECTIVE]
    rendered = [f"[{_message_label(m)}] {m.content}" for m in window]
    costs = [token_estimate(line) for line in rendered]
    # Keep the newest suffix that fits.
    start = 0
    total = sum(costs)
    while start < len(rendered) and used + total > budget:
        total -= costs[start]
        start += 1
    return header + "\n".join(rendered[start:])


def _post_once(backend: RemoteBackend, prompt: str) -> str:
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(backend.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    body = {
        "model": backend.model_id,
        "temperature": backend.temperature,
        "messages": [{"role": "user", "content": prompt}],
    }
    logger.debug("request to %s: %s", backend.endpoint,
                 json.dumps(body)[:500])
    resp = requests.post(backend.endpoint, json=body, headers=headers,
                         timeout=backend.request_timeout)
    if resp.status_code >= 500:
        raise requests.HTTPError(f"server error {resp.status_code}", response=resp)
    if resp.status_code != 200:
        raise RemoteError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
    try:
        doc = resp.json()
        text = doc["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise RemoteError(f"malformed completion response: {exc}") from exc
    logger.debug("response: %s", text[:500])
    return text


def respond(backend, prompt: str,
            cancel_event: Optional[threading.Event] = None) -> str:
    """Produce the agent's reply to the prompt.

    Scripted backends pop the next canned response. Remote backends make one
    chat-completion request, retrying transport and 5xx failures with
    exponential backoff up to max_retries.
    """
    if isinstance(backend, ScriptedBackend):
        return backend.next_response()
    if not isinstance(backend, RemoteBackend):
        raise TypeError(f"unknown backend {type(backend).__name__}")

    last_error: Optional[Exception] = None
    for attempt in range(backend.max_retries + 1):
        if cancel_event is not None and cancel_event.is_set():
            raise RemoteError("request canceled")
        try:
            return _post_once(backend, prompt)
        except RemoteError:
            raise
        except (requests.RequestException, OSError) as exc:
            last_error = exc
            if attempt < backend.max_retries:
                delay = backend.retry_base_delay * (2 ** attempt)
                logger.debug("attempt %d failed (%s); retrying in %.2fs",
                             attempt + 1, exc, delay)
                time.sleep(delay)
    raise RemoteError(f"exhausted {backend.max_retries} retries: {last_error}")
