"""Conversation state, the output organizer, and conclusion checks."""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from autodev import commands
from autodev.config import Limits
from autodev.conversation import (
    ABORT_ENVIRONMENT,
    ABORT_MAX_ITERATIONS,
    ABORT_MAX_TOKENS,
    ABORT_PARSE_FAILURES,
    CONTINUE,
    DONE,
    KIND_COMMAND,
    KIND_ENV_ERROR,
    KIND_ENV_RESULT,
    KIND_OBJECTIVE,
    KIND_TALK,
    MESSAGE_CHAR_LIMIT,
    ROLE_AGENT,
    ROLE_ENV,
    ROLE_USER,
    Conversation,
    LoopEvent,
    Message,
    SequenceError,
    organize_output,
    should_conclude,
    token_estimate,
)
from autodev.sandbox import ExecutionResult


def result(exit_code=0, stdout="", stderr="", timed_out=False):
    return ExecutionResult(exit_code=exit_code, stdout=stdout, stderr=stderr,
                           duration=0.01, timed_out=timed_out)


def test_conversation_starts_with_objective():
    conv = Conversation("do the thing")
    assert len(conv.messages) == 1
    first = conv.messages[0]
    assert first.role == ROLE_USER
    assert first.kind == KIND_OBJECTIVE
    assert conv.total_tokens == first.token_count


def test_append_updates_totals_and_iterations():
    conv = Conversation("obj")
    conv.add(ROLE_AGENT, KIND_COMMAND, "test", agent="dev")
    assert conv.iteration_count == 1
    conv.add(ROLE_ENV, KIND_ENV_RESULT, "'summary': ok")
    # environment replies do not count as iterations
    assert conv.iteration_count == 1
    assert conv.total_tokens == sum(m.token_count for m in conv.messages)


def test_append_with_stale_seq_raises():
    conv = Conversation("obj")
    msg = Message(role=ROLE_AGENT, kind=KIND_TALK, content="hi", seq=0)
    with pytest.raises(SequenceError):
        conv.append(msg)


def test_six_message_exchange_walk():
    conv = Conversation("obj")
    conv.add(ROLE_AGENT, KIND_COMMAND, "write-new f.py\nx", agent="dev")
    conv.add(ROLE_ENV, KIND_ENV_RESULT, "Content successfully written to /f.py")
    conv.add(ROLE_AGENT, KIND_COMMAND, "test", agent="dev")
    conv.add(ROLE_ENV, KIND_ENV_ERROR, "'summary': {'failed': 1}")
    conv.add(ROLE_AGENT, KIND_TALK, "Fixing it now.", agent="dev")
    assert [m.seq for m in conv.messages] == list(range(6))
    assert conv.iteration_count == 3
    assert conv.total_tokens == sum(m.token_count for m in conv.messages)


def test_message_json_round_trip():
    msg = Message(role=ROLE_AGENT, kind=KIND_COMMAND, content="test", seq=4,
                  agent="dev", meta={"command": "test"})
    back = Message.from_json(msg.to_json())
    assert back == msg


# -- token estimation ----------------------------------------------------


def test_token_estimate_empty():
    assert token_estimate("") == 0


def test_token_estimate_eight_bytes():
    assert token_estimate("abcdefgh") == 2  # ceil(8 / 4)


def test_token_estimate_rounds_up():
    assert token_estimate("abc") == 1
    assert token_estimate("abcde") == 2


def test_token_estimate_counts_bytes_not_chars():
    assert token_estimate("é" * 4) == 2  # 8 utf-8 bytes


@given(st.text(max_size=200), st.text(max_size=200))
def test_token_estimate_concat_monotone(a, b):
    assert token_estimate(a + b) >= max(token_estimate(a), token_estimate(b))


# -- output organizer ----------------------------------------------------


def test_failing_test_report_reduced_to_summary_and_message():
    report = {"summary": {"failed": 1, "total": 1, "collected": 1},
              "failures": [{"test": "t.py::test_is_bored",
                            "message": "AssertionError: assert 1 == 2\n +  where 1 = "
                                       "is_bored('I am bored. This is boring!')"}]}
    msg = organize_output(result(exit_code=1, stdout=json.dumps(report)),
                          commands.TEST_VALIDATE)
    assert "'summary': {'failed': 1, 'total': 1, 'collected': 1}" in msg.content
    assert "AssertionError: assert 1 == 2" in msg.content
    assert msg.kind == KIND_ENV_ERROR


def test_passing_test_report():
    report = {"summary": {"passed": 1, "total": 1, "collected": 1}, "failures": []}
    msg = organize_output(result(exit_code=0, stdout=json.dumps(report)),
                          commands.TEST_VALIDATE)
    assert "'summary': {'passed': 1, 'total': 1, 'collected': 1}" in msg.content
    assert msg.kind == KIND_ENV_RESULT


def test_at_most_three_failures_each_truncated():
    failures = [{"test": f"t{i}", "message": "m" * 2000} for i in range(7)]
    report = {"summary": {"failed": 7, "total": 7, "collected": 7},
              "failures": failures}
    msg = organize_output(result(exit_code=1, stdout=json.dumps(report)),
                          commands.TEST_VALIDATE)
    assert msg.content.count("'message':") == 3
    assert len(msg.content) < 4 * 600


def test_malformed_adapter_json_degrades_to_raw_mode():
    msg = organize_output(result(exit_code=1, stdout="not json at all"),
                          commands.TEST_VALIDATE)
    assert "exit code: 1" in msg.content
    assert "not json at all" in msg.content


def test_huge_stdout_truncated_with_marker():
    big = "y\n" * (512 * 1024)  # 1 MiB of output
    msg = organize_output(result(exit_code=0, stdout=big), commands.BUILD_EXEC)
    assert msg.kind == KIND_ENV_RESULT
    assert "[truncated" in msg.content
    assert "bytes]" in msg.content
    assert len(msg.content) <= MESSAGE_CHAR_LIMIT


def test_nonzero_exit_is_env_error():
    msg = organize_output(result(exit_code=2, stderr="boom"), commands.BUILD_EXEC)
    assert msg.kind == KIND_ENV_ERROR
    assert "exit code: 2" in msg.content
    assert "boom" in msg.content


@given(st.text(max_size=5000), st.text(max_size=5000), st.integers(0, 3))
def test_organizer_never_exceeds_message_limit(stdout, stderr, exit_code):
    msg = organize_output(result(exit_code=exit_code, stdout=stdout, stderr=stderr),
                          commands.BUILD_EXEC)
    assert len(msg.content) <= MESSAGE_CHAR_LIMIT


# -- conclusion checks ---------------------------------------------------


LIMITS = Limits(max_iterations=5, max_total_tokens=1000,
                max_consecutive_parse_failures=3)


def _conv(iterations=0, parse_failures=0, tokens=0):
    conv = Conversation("x")
    for _ in range(iterations):
        conv.add(ROLE_AGENT, KIND_TALK, "hi", agent="a")
    conv.consecutive_parse_failures = parse_failures
    if tokens:
        conv.total_tokens = tokens
    return conv


def test_validated_stop_wins():
    verdict = should_conclude(_conv(iterations=5), LIMITS,
                              LoopEvent(stop_validated=True))
    assert verdict == DONE


def test_iteration_boundary_is_inclusive():
    assert should_conclude(_conv(iterations=5), LIMITS, LoopEvent()).reason \
        == ABORT_MAX_ITERATIONS
    assert should_conclude(_conv(iterations=4), LIMITS, LoopEvent()) == CONTINUE


def test_token_cap():
    verdict = should_conclude(_conv(tokens=1000), LIMITS, LoopEvent())
    assert verdict.reason == ABORT_MAX_TOKENS


def test_parse_failure_cap():
    verdict = should_conclude(_conv(parse_failures=3), LIMITS, LoopEvent())
    assert verdict.reason == ABORT_PARSE_FAILURES


def test_dead_session():
    verdict = should_conclude(_conv(), LIMITS, LoopEvent(session_dead=True))
    assert verdict.reason == ABORT_ENVIRONMENT


def test_should_conclude_is_pure():
    conv = _conv(iterations=2)
    event = LoopEvent()
    assert should_conclude(conv, LIMITS, event) == \
        should_conclude(conv, LIMITS, event)


def test_parse_failure_counter_reset():
    conv = _conv()
    conv.note_parse_failure()
    conv.note_parse_failure()
    assert conv.consecutive_parse_failures == 2
    conv.note_parse_success()
    assert conv.consecutive_parse_failures == 0
