"""Agent scheduling: round robin, token-based, and priority-based rotation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Union

DEFAULT_HANDOFF_MARKER = "HANDOFF"

OP_EXECUTED = "op_executed"
HANDOFF_EMITTED = "handoff_emitted"


@dataclass(frozen=True)
class RoundRobin:
    """Each agent in config order gets ops_per_turn operations, cyclically."""

    ops_per_turn: int = 1


@dataclass(frozen=True)
class TokenBased:
    """The current agent holds the floor until it emits the handoff marker
    as a whole message."""

    handoff_marker: str = DEFAULT_HANDOFF_MARKER


@dataclass(frozen=True)
class PriorityBased:
    """Round robin over agents ordered by descending priority (config order
    breaks ties)."""

    ops_per_turn: int = 1


SchedulerKind = Union[RoundRobin, TokenBased, PriorityBased]


@dataclass(frozen=True)
class ScheduleState:
    agent_order: tuple[str, ...]
    current_index: int = 0
    ops_used_in_turn: int = 0

    def __post_init__(self):
        if not self.agent_order:
            raise ValueError("scheduler needs at least one agent")
        if not 0 <= self.current_index < len(self.agent_order):
            raise ValueError("current_index out of range")


def initial_state(agents: Sequence, kind: SchedulerKind) -> ScheduleState:
    """Build the starting state from config AgentSpecs (or plain names)."""
    names = [getattr(a, "name", a) for a in agents]
    if isinstance(kind, PriorityBased):
        priorities = [getattr(a, "priority", 0) for a in agents]
        order = [name for _, name in sorted(zip(priorities, names),
                                            key=lambda pair: -pair[0])]
        # sorted() is stable, so equal priorities keep config order
        names = order
    return ScheduleState(agent_order=tuple(names))


def next_agent(state: ScheduleState, kind: SchedulerKind) -> str:
    """Name of the agent that acts next. Pure; does not advance the state."""
    return state.agent_order[state.current_index]


def record_turn(state: ScheduleState, kind: SchedulerKind, event: str) -> ScheduleState:
    """Account for one event and return the next state.

    op_executed increments the op counter and, for the ops-per-turn kinds,
    rotates once the budget is used. handoff_emitted rotates immediately
    (token-based collaboration). Rotation resets the op counter.
    """
    n = len(state.agent_order)
    if event == HANDOFF_EMITTED:
        return replace(state, current_index=(state.current_index + 1) % n,
                       ops_used_in_turn=0)
    if event != OP_EXECUTED:
        raise ValueError(f"unknown scheduler event {event!r}")
    used = state.ops_used_in_turn + 1
    if isinstance(kind, (RoundRobin, PriorityBased)) and used >= kind.ops_per_turn:
        return replace(state, current_index=(state.current_index + 1) % n,
                       ops_used_in_turn=0)
    return replace(state, ops_used_in_turn=used)
