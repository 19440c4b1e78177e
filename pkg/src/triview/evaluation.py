"""Metrics and reports: string accuracy, judge accuracy, slot diagnostics,
and efficiency accounting."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import prompts
from .corpus import normalize_answer_text
from .errors import EmptyInputError
from .executor import ExecutionTrace
from .gateway import ChatProvider, ChatRequest, QuestionUsage, TokenUsage

logger = logging.getLogger(__name__)


def str_acc(prediction: str, gold: str) -> bool:
    """Containment accuracy: the normalized gold appears in the normalized
    prediction."""
    return normalize_answer_text(gold) in normalize_answer_text(prediction)


def _judge_verdict(text: str) -> bool:
    tokens = text.strip().split()
    first = tokens[0].strip(".,!:;\"'`").casefold() if tokens else ""
    if first == "correct":
        return True
    if first != "incorrect":
        logger.warning("judge returned unexpected output %r; counting as incorrect", text[:80])
    return False


def llm_acc(
    prediction: str,
    gold: str,
    judge_provider: ChatProvider,
    usages: list[TokenUsage] | None = None,
) -> bool:
    """Judge-model equivalence: true iff the judge's leading token is
    "correct" (case-insensitive, punctuation-trimmed)."""
    prompt = prompts.render(prompts.JUDGE, pred_answer=prediction, gold_answer=gold)
    text, usage = judge_provider.complete(ChatRequest(user=prompt))
    if usages is not None:
        usages.append(usage)
    return _judge_verdict(text)


@dataclass
class QuestionVerdict:
    question_id: str
    prediction: str
    gold: str
    str_correct: bool
    llm_correct: bool | None = None


@dataclass
class SlotGroupStats:
    count: int
    str_acc_pct: float | None
    llm_acc_pct: float | None


@dataclass
class SlotReport:
    eligible: int
    wrong_count: int
    wrong_rate_pct: float
    slot_correct: SlotGroupStats
    slot_wrong: SlotGroupStats
    heuristic: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "eligible": self.eligible,
            "wrong_count": self.wrong_count,
            "wrong_rate_pct": self.wrong_rate_pct,
            "slot_correct": vars(self.slot_correct),
            "slot_wrong": vars(self.slot_wrong),
            "heuristic": self.heuristic,
        }


def _group_stats(verdicts: Sequence[QuestionVerdict]) -> SlotGroupStats:
    if not verdicts:
        return SlotGroupStats(count=0, str_acc_pct=None, llm_acc_pct=None)
    str_pct = 100.0 * sum(v.str_correct for v in verdicts) / len(verdicts)
    llm_values = [v.llm_correct for v in verdicts]
    llm_pct = 100.0 * sum(bool(v) for v in llm_values) / len(verdicts) if all(v is not None for v in llm_values) else None
    return SlotGroupStats(count=len(verdicts), str_acc_pct=str_pct, llm_acc_pct=llm_pct)


def slot_diagnostics(
    traces: Sequence[ExecutionTrace],
    verdicts: Mapping[str, QuestionVerdict],
    judge_provider: ChatProvider,
    gold_sub_answers: Mapping[str, Mapping[int, str]] | None = None,
    usages: list[TokenUsage] | None = None,
) -> SlotReport:
    """Split slot-using questions into slot-correct vs slot-wrong groups.

    A question is eligible when at least one step declares dependencies.
    Each filled slot j (the answer of step j that a later step consumed) is
    judged against the gold sub-answer when one is supplied; otherwise
    against step j's own acquired evidence, which is a heuristic reference
    and flagged as such in the report. A step that ran with an empty binding
    is slot-wrong by definition.
    """
    heuristic = gold_sub_answers is None
    correct_group: list[QuestionVerdict] = []
    wrong_group: list[QuestionVerdict] = []
    for trace in traces:
        consumed = sorted({dep for step in trace.plan for dep in step.dependencies})
        if not consumed:
            continue
        answers = {step.step_id: step.answer for step in trace.steps}
        acquired_by_step = {step.step_id: step.acquired_information for step in trace.steps}
        had_empty_binding = any(step.missing_bindings for step in trace.steps)
        all_correct = not had_empty_binding
        if all_correct:
            for dep in consumed:
                filled = answers.get(dep, "")
                if gold_sub_answers is not None:
                    reference = gold_sub_answers.get(trace.question_id, {}).get(dep, "")
                else:
                    reference = acquired_by_step.get(dep, "")
                if not filled.strip() or not reference.strip():
                    all_correct = False
                    break
                if not llm_acc(filled, reference, judge_provider, usages):
                    all_correct = False
                    break
        verdict = verdicts[trace.question_id]
        (correct_group if all_correct else wrong_group).append(verdict)

    eligible = len(correct_group) + len(wrong_group)
    wrong_rate = 100.0 * len(wrong_group) / eligible if eligible else 0.0
    return SlotReport(
        eligible=eligible,
        wrong_count=len(wrong_group),
        wrong_rate_pct=wrong_rate,
        slot_correct=_group_stats(correct_group),
        slot_wrong=_group_stats(wrong_group),
        heuristic=heuristic,
    )


@dataclass
class EvalReport:
    dataset: str
    total: int
    str_acc_pct: float
    llm_acc_pct: float | None
    avg_time_s: float
    avg_total_tokens: float
    verdicts: list[QuestionVerdict]
    usages: dict[str, QuestionUsage]
    slot: SlotReport | None = None
    effective_config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "total": self.total,
            "str_acc_pct": self.str_acc_pct,
            "llm_acc_pct": self.llm_acc_pct,
            "avg_time_s": self.avg_time_s,
            "avg_total_tokens": self.avg_total_tokens,
            "verdicts": [vars(v) for v in sorted(self.verdicts, key=lambda v: v.question_id)],
            "usages": {qid: vars(u) for qid, u in sorted(self.usages.items())},
            "slot": self.slot.to_dict() if self.slot else None,
            "effective_config": self.effective_config,
        }


def aggregate_report(
    verdicts: Sequence[QuestionVerdict],
    usages: Mapping[str, QuestionUsage],
    dataset: str = "",
    slot: SlotReport | None = None,
    effective_config: dict[str, Any] | None = None,
) -> EvalReport:
    if not verdicts:
        raise EmptyInputError("cannot aggregate an empty verdict list")
    total = len(verdicts)
    str_pct = 100.0 * sum(v.str_correct for v in verdicts) / total
    llm_values = [v.llm_correct for v in verdicts]
    llm_pct = 100.0 * sum(bool(v) for v in llm_values) / total if all(v is not None for v in llm_values) else None
    matched = [usages[v.question_id] for v in verdicts if v.question_id in usages]
    avg_time_s = (sum(u.wall_clock_ms for u in matched) / len(matched) / 1000.0) if matched else 0.0
    avg_tokens = (sum(u.total_tokens for u in matched) / len(matched)) if matched else 0.0
    return EvalReport(
        dataset=dataset,
        total=total,
        str_acc_pct=str_pct,
        llm_acc_pct=llm_pct,
        avg_time_s=avg_time_s,
        avg_total_tokens=avg_tokens,
        verdicts=list(verdicts),
        usages=dict(usages),
        slot=slot,
        effective_config=effective_config or {},
    )


def render_report_text(report: EvalReport) -> str:
    """Aligned plain-text summary table."""
    rows = [
        ("dataset", report.dataset or "-"),
        ("questions", str(report.total)),
        ("str-acc", f"{report.str_acc_pct:.1f}%"),
        ("llm-acc", f"{report.llm_acc_pct:.1f}%" if report.llm_acc_pct is not None else "n/a"),
        ("avg time", f"{report.avg_time_s:.3f} s"),
        ("avg tokens", f"{report.avg_total_tokens:.1f}"),
    ]
    if report.slot:
        slot = report.slot
        rows.append(("slot eligible", str(slot.eligible)))
        rows.append(("slot wrong rate", f"{slot.wrong_rate_pct:.1f}%" + (" (heuristic)" if slot.heuristic else "")))
        for label, group in (("slot-correct", slot.slot_correct), ("slot-wrong", slot.slot_wrong)):
            str_s = f"{group.str_acc_pct:.1f}%" if group.str_acc_pct is not None else "n/a"
            llm_s = f"{group.llm_acc_pct:.1f}%" if group.llm_acc_pct is not None else "n/a"
            rows.append((f"{label} (n={group.count})", f"str {str_s} / llm {llm_s}"))
    width = max(len(k) for k, _ in rows)
    lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
    if report.effective_config:
        lines.append("")
        lines.append("effective config:")
        lines.append(json.dumps(report.effective_config, indent=2, sort_keys=True, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def render_verdict_csv(report: EvalReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["id", "str_acc", "llm_acc", "tokens", "ms"])
    for verdict in sorted(report.verdicts, key=lambda v: v.question_id):
        usage = report.usages.get(verdict.question_id)
        writer.writerow(
            [
                verdict.question_id,
                int(verdict.str_correct),
                "" if verdict.llm_correct is None else int(verdict.llm_correct),
                usage.total_tokens if usage else 0,
                f"{usage.wall_clock_ms:.3f}" if usage else "0.000",
            ]
        )
    return buffer.getvalue()


def write_report(report: EvalReport, directory: str | Path) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(render_report_text(report), encoding="utf-8")
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (out / "verdicts.csv").write_text(render_verdict_csv(report), encoding="utf-8")
