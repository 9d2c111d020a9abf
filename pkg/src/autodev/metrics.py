"""Per-run command/token tallies and cross-run aggregation.

Reports are recomputable from transcripts alone, so post-hoc analysis never
needs a re-run; the orchestrator's live tally and `tally()` here are two
independent code paths that must agree. A message counts as incorrect iff
it failed parsing or referenced a command the agent may not use.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .conversation import (
    ERROR_PARSE_FAILURE,
    ERROR_PERMISSION_DENIED,
    KIND_COMMAND,
    KIND_CONCLUSION,
    KIND_TALK,
    ROLE_AGENT,
    Message,
    Verdict,
    read_transcript,
)

INCORRECT_ERRORS = {ERROR_PARSE_FAILURE, ERROR_PERMISSION_DENIED}


class FormatError(Exception):
    """The transcript is not well-formed JSON Lines."""


@dataclass
class RunReport:
    counts: dict = field(default_factory=dict)
    incorrect_count: int = 0
    total_tokens: int = 0
    iterations: int = 0
    verdict: Optional[Verdict] = None

    def to_dict(self) -> dict:
        return {
            "counts": dict(sorted(self.counts.items())),
            "incorrect_count": self.incorrect_count,
            "total_tokens": self.total_tokens,
            "iterations": self.iterations,
            "verdict": None if self.verdict is None else {
                "status": self.verdict.status,
                "reason": self.verdict.reason,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        verdict = None
        if doc.get("verdict"):
            verdict = Verdict(doc["verdict"]["status"], doc["verdict"].get("reason"))
        return cls(counts=dict(doc.get("counts", {})),
                   incorrect_count=int(doc.get("incorrect_count", 0)),
                   total_tokens=int(doc.get("total_tokens", 0)),
                   iterations=int(doc.get("iterations", 0)),
                   verdict=verdict)


def classify_message(msg: Message) -> tuple[Optional[str], bool]:
    """(command-name-to-count, is_incorrect) for one agent message."""
    if msg.role != ROLE_AGENT:
        return None, False
    error = msg.meta.get("error")
    if error in INCORRECT_ERRORS:
        return None, True
    if msg.kind == KIND_TALK:
        return "talk", False
    if msg.kind == KIND_COMMAND:
        return msg.meta.get("command", msg.content.split()[0] if msg.content else "?"), False
    return None, False


def tally(transcript) -> RunReport:
    """Recompute a RunReport from a transcript (path or Message sequence)."""
    if isinstance(transcript, (str, Path)):
        try:
            messages = read_transcript(transcript)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise FormatError(f"bad transcript {transcript}: {exc}") from exc
    else:
        messages = list(transcript)

    counts: Counter = Counter()
    incorrect = 0
    tokens = 0
    iterations = 0
    verdict = None
    for msg in messages:
        tokens += msg.token_count
        if msg.role == ROLE_AGENT:
            iterations += 1
        name, is_incorrect = classify_message(msg)
        if is_incorrect:
            incorrect += 1
        elif name is not None:
            counts[name] += 1
        if msg.kind == KIND_CONCLUSION and "verdict" in msg.meta:
            doc = msg.meta["verdict"]
            verdict = Verdict(doc["status"], doc.get("reason"))
    return RunReport(counts=dict(counts), incorrect_count=incorrect,
                     total_tokens=tokens, iterations=iterations, verdict=verdict)


@dataclass
class Aggregate:
    runs: int
    mean_counts: dict  # command name -> mean per run
    mean_incorrect: float
    mean_tokens: float
    mean_iterations: float


class EmptyInput(Exception):
    pass


def aggregate(reports: Sequence[RunReport]) -> Aggregate:
    """Arithmetic means per command across runs; missing names count 0."""
    if not reports:
        raise EmptyInput("need at least one report")
    n = len(reports)
    names = sorted({name for r in reports for name in r.counts})
    mean_counts = {name: sum(r.counts.get(name, 0) for r in reports) / n
                   for name in names}
    return Aggregate(
        runs=n,
        mean_counts=mean_counts,
        mean_incorrect=sum(r.incorrect_count for r in reports) / n,
        mean_tokens=sum(r.total_tokens for r in reports) / n,
        mean_iterations=sum(r.iterations for r in reports) / n,
    )


def format_table(agg: Aggregate) -> str:
    """Aligned text table, means to 2 decimal places."""
    rows = [("command", "mean/run")]
    for name, mean in sorted(agg.mean_counts.items()):
        rows.append((name, f"{mean:.2f}"))
    rows.append(("incorrect", f"{agg.mean_incorrect:.2f}"))
    rows.append(("tokens", f"{agg.mean_tokens:.2f}"))
    rows.append(("iterations", f"{agg.mean_iterations:.2f}"))
    width = max(len(r[0]) for r in rows)
    lines = [f"{rows[0][0]:<{width}}  {rows[0][1]}"]
    lines.append("-" * (width + 10))
    lines.extend(f"{name:<{width}}  {value}" for name, value in rows[1:])
    return "\n".join(lines)


def write_csv(agg: Aggregate, path: Path) -> None:
    """Delimited command-usage output next to the figure."""
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["command", "mean_per_run"])
        for name, mean in sorted(agg.mean_counts.items()):
            writer.writerow([name, f"{mean:.2f}"])
        writer.writerow(["incorrect", f"{agg.mean_incorrect:.2f}"])


def render_figure(agg: Aggregate, path: Path) -> None:
    """Bar chart of mean command usage per run, written to `path`."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted(agg.mean_counts, key=lambda n: -agg.mean_counts[n])
    values = [agg.mean_counts[n] for n in names]
    names.append("incorrect")
    values.append(agg.mean_incorrect)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    bars = ax.bar(range(len(names)), values, color="#5576d1")
    bars[-1].set_color("#c0504d")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("mean uses per run")
    ax.set_title(f"Command usage over {agg.runs} run(s); "
                 f"mean tokens {agg.mean_tokens:.0f}")
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(reports: Iterable[RunReport], out_dir: Path) -> dict:
    """Write report.json, commands.csv, and commands.png into `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = list(reports)
    agg = aggregate(reports)
    report_path = out_dir / "report.json"
    doc = {
        "runs": agg.runs,
        "mean_counts": {k: round(v, 2) for k, v in sorted(agg.mean_counts.items())},
        "mean_incorrect": round(agg.mean_incorrect, 2),
        "mean_tokens": round(agg.mean_tokens, 2),
        "mean_iterations": round(agg.mean_iterations, 2),
        "per_run": [r.to_dict() for r in reports],
    }
    report_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    write_csv(agg, out_dir / "commands.csv")
    render_figure(agg, out_dir / "commands.png")
    return doc
