"""Slot-bound execution: decompose, bind, retrieve, answer, finalize.

A plan is an ordered list of sub-questions whose placeholders "<dep:j>" are
bound to earlier step answers before retrieval. Every content-level model
failure degrades to a stated fallback; only transport failures abort a
question.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from . import prompts
from .corpus import Corpus
from .errors import (
    InvalidPlanError,
    InvalidQueryError,
    MissingBindingError,
    UnparseableOutputError,
)
from .fusion import MultiViewRetriever, RankedResult
from .gateway import REPAIR_REMINDER, ChatProvider, ChatRequest, TokenUsage, parse_json_payload
from .prompts import DECOMPOSE, FINAL_ANSWER, STEP_ANSWER

logger = logging.getLogger(__name__)

DEP_TOKEN_RE = re.compile(r"<dep:(\d+)>")

DEFAULT_MAX_STEPS = 8


@dataclass(frozen=True)
class PlanStep:
    id: int
    sub_question: str
    dependencies: tuple[int, ...]


@dataclass
class StepResult:
    step_id: int
    sub_question: str
    bound_query: str
    retrieved_unit_ids: list[str]
    answer: str
    acquired_information: str
    missing_bindings: list[int] = field(default_factory=list)
    parse_fallback: bool = False


@dataclass
class ExecutionTrace:
    question_id: str
    question: str
    plan: list[PlanStep]
    initial_unit_ids: list[str]
    steps: list[StepResult]
    acquired: list[str]
    final_answer: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "plan": [
                {"id": s.id, "sub_question": s.sub_question, "dependencies": list(s.dependencies)}
                for s in self.plan
            ],
            "initial_unit_ids": self.initial_unit_ids,
            "steps": [
                {
                    "step_id": s.step_id,
                    "sub_question": s.sub_question,
                    "bound_query": s.bound_query,
                    "retrieved_unit_ids": s.retrieved_unit_ids,
                    "answer": s.answer,
                    "acquired_information": s.acquired_information,
                    "missing_bindings": s.missing_bindings,
                    "parse_fallback": s.parse_fallback,
                }
                for s in self.steps
            ],
            "acquired": self.acquired,
            "final_answer": self.final_answer,
            "warnings": self.warnings,
        }


def trace_from_dict(data: dict[str, Any]) -> ExecutionTrace:
    plan = [
        PlanStep(id=s["id"], sub_question=s["sub_question"], dependencies=tuple(s["dependencies"]))
        for s in data.get("plan", [])
    ]
    steps = [
        StepResult(
            step_id=s["step_id"],
            sub_question=s["sub_question"],
            bound_query=s["bound_query"],
            retrieved_unit_ids=list(s["retrieved_unit_ids"]),
            answer=s["answer"],
            acquired_information=s["acquired_information"],
            missing_bindings=list(s.get("missing_bindings", [])),
            parse_fallback=bool(s.get("parse_fallback", False)),
        )
        for s in data.get("steps", [])
    ]
    return ExecutionTrace(
        question_id=data["question_id"],
        question=data.get("question", ""),
        plan=plan,
        initial_unit_ids=list(data.get("initial_unit_ids", [])),
        steps=steps,
        acquired=list(data.get("acquired", [])),
        final_answer=data.get("final_answer", ""),
        warnings=list(data.get("warnings", [])),
    )


def validate_plan(payload: Any, max_steps: int = DEFAULT_MAX_STEPS) -> tuple[list[PlanStep], list[str]]:
    """Enforce the plan contract; returns (steps, warnings).

    Rejections: non-list/empty plan, malformed step objects, non-contiguous
    ids, forward/self/duplicate dependencies, and any mismatch between
    declared dependencies and "<dep:j>" placeholders. Plans longer than
    max_steps are valid but truncated with a warning.
    """
    if not isinstance(payload, list) or not payload:
        raise InvalidPlanError("plan must be a non-empty list")
    raw_steps: list[PlanStep] = []
    for item in payload:
        if not isinstance(item, dict):
            raise InvalidPlanError(f"plan step is not an object: {item!r}")
        step_id = item.get("id")
        sub_question = item.get("sub_question")
        dependencies = item.get("dependencies", [])
        if not isinstance(step_id, int) or isinstance(step_id, bool):
            raise InvalidPlanError(f"step id must be an integer: {step_id!r}")
        if not isinstance(sub_question, str) or not sub_question.strip():
            raise InvalidPlanError(f"step {step_id} has an empty sub_question")
        if not isinstance(dependencies, list) or any(
            not isinstance(d, int) or isinstance(d, bool) for d in dependencies
        ):
            raise InvalidPlanError(f"step {step_id} has non-integer dependencies")
        if len(set(dependencies)) != len(dependencies):
            raise InvalidPlanError(f"step {step_id} has duplicate dependencies")
        raw_steps.append(PlanStep(id=step_id, sub_question=sub_question.strip(), dependencies=tuple(sorted(dependencies))))

    ids = [s.id for s in raw_steps]
    if sorted(ids) != list(range(len(raw_steps))):
        raise InvalidPlanError(f"step ids must be contiguous from 0, got {ids}")
    steps = sorted(raw_steps, key=lambda s: s.id)
    for step in steps:
        for dep in step.dependencies:
            if dep < 0 or dep >= step.id:
                raise InvalidPlanError(f"step {step.id} depends on {dep}, which is not an earlier step")
        placeholders = {int(m) for m in DEP_TOKEN_RE.findall(step.sub_question)}
        declared = set(step.dependencies)
        if placeholders != declared:
            raise InvalidPlanError(
                f"step {step.id}: placeholders {sorted(placeholders)} != declared dependencies {sorted(declared)}"
            )

    warnings: list[str] = []
    if len(steps) > max_steps:
        warnings.append(f"plan truncated from {len(steps)} to {max_steps} steps")
        steps = steps[:max_steps]
    return steps, warnings


def fallback_plan(question: str) -> list[PlanStep]:
    return [PlanStep(id=0, sub_question=question, dependencies=())]


def bind_slots(step: PlanStep, answers: Mapping[int, str]) -> str:
    """Replace every "<dep:j>" with the answer of step j, verbatim."""
    bound = step.sub_question
    for dep in step.dependencies:
        answer = answers.get(dep)
        if answer is None or not answer.strip():
            raise MissingBindingError(dep)
        bound = bound.replace(f"<dep:{dep}>", answer)
    return bound


def bind_literal(step: PlanStep, plan: Sequence[PlanStep]) -> str:
    """Slot-binding-off ablation: placeholders expand to the dependency's
    sub-question text instead of its answer. Expansion iterates because a
    dependency's text may itself contain placeholders; acyclic ids bound
    the loop."""
    by_id = {s.id: s for s in plan}
    bound = step.sub_question
    for _ in range(len(plan) + 1):
        replaced = DEP_TOKEN_RE.sub(lambda m: by_id[int(m.group(1))].sub_question, bound)
        if replaced == bound:
            return bound
        bound = replaced
    return DEP_TOKEN_RE.sub("", bound)


def format_evidence(corpus: Corpus, unit_ids: Sequence[str]) -> str:
    return "\n\n".join(corpus.get(unit_id).display_text() for unit_id in unit_ids)


def _merge_acquired(accumulator: list[str], text: str) -> None:
    """Line-level accumulation, deduplicated by exact (stripped) line."""
    for line in text.splitlines():
        line = line.strip()
        if line and line not in accumulator:
            accumulator.append(line)


def _complete_with_one_repair(
    provider: ChatProvider,
    prompt: str,
    usages: list[TokenUsage],
    validate,
) -> tuple[Any | None, str]:
    """(complete -> parse -> validate) with one repair re-prompt.

    Returns (validated payload, raw text); payload is None when both
    attempts failed.
    """
    text, usage = provider.complete(ChatRequest(user=prompt))
    usages.append(usage)
    for attempt in range(2):
        try:
            return validate(parse_json_payload(text)), text
        except (UnparseableOutputError, InvalidPlanError) as exc:
            if attempt == 1:
                return None, text
            logger.debug("repair re-prompt after: %s", exc)
            repair = REPAIR_REMINDER.replace("{previous}", text)
            text, usage = provider.complete(ChatRequest(user=repair))
            usages.append(usage)
    return None, text


def _validate_decompose_payload(payload: Any, max_steps: int) -> tuple[str, list[PlanStep], list[str]]:
    if not isinstance(payload, dict):
        raise UnparseableOutputError(f"decomposition payload is not an object: {type(payload).__name__}")
    acquired = payload.get("acquired_information", "")
    if not isinstance(acquired, str):
        raise UnparseableOutputError("acquired_information must be a string")
    steps, warnings = validate_plan(payload.get("plan"), max_steps)
    return acquired, steps, warnings


def decompose(
    question: str,
    evidence_text: str,
    provider: ChatProvider,
    usages: list[TokenUsage],
    max_steps: int = DEFAULT_MAX_STEPS,
) -> tuple[str, list[PlanStep], list[str]]:
    """Plan the question. Falls back to a single-step plan when the model
    cannot produce a valid plan after one repair re-prompt."""
    prompt = prompts.render(DECOMPOSE, question=question, evidence=evidence_text)
    result, _raw = _complete_with_one_repair(
        provider, prompt, usages, validate=lambda p: _validate_decompose_payload(p, max_steps)
    )
    if result is None:
        logger.warning("decomposition invalid after repair; using single-step fallback")
        return "", fallback_plan(question), ["decomposition fell back to a single-step plan"]
    return result


def _validate_step_payload(payload: Any) -> tuple[str, str]:
    if not isinstance(payload, dict):
        raise UnparseableOutputError("step payload is not an object")
    answer = payload.get("answer")
    if not isinstance(answer, str) or not answer.strip():
        raise UnparseableOutputError("step payload has no usable answer")
    acquired = payload.get("acquired_information", "")
    if not isinstance(acquired, str):
        acquired = str(acquired)
    return answer.strip(), acquired


def _first_line(text: str) -> str:
    for line in text.splitlines():
        if line.strip():
            return line.strip()
    return ""


def execute_step(
    step: PlanStep,
    answers: Mapping[int, str],
    acquired: list[str],
    retriever: MultiViewRetriever,
    provider: ChatProvider,
    corpus: Corpus,
    original_question: str,
    usages: list[TokenUsage],
    plan: Sequence[PlanStep],
    slot_binding: bool = True,
) -> StepResult:
    """Bind, retrieve, and answer one plan step.

    A missing/empty dependency answer degrades to an empty-string binding
    and marks the step slot-wrong instead of aborting the question.
    """
    missing: list[int] = []
    if slot_binding:
        try:
            bound = bind_slots(step, answers)
        except MissingBindingError:
            bound = step.sub_question
            for dep in step.dependencies:
                answer = answers.get(dep, "")
                if not answer.strip():
                    missing.append(dep)
                    answer = ""
                bound = bound.replace(f"<dep:{dep}>", answer)
    else:
        bound = bind_literal(step, plan)

    if bound.strip():
        result: RankedResult = retriever.retrieve(bound)
        retrieved = [unit_id for unit_id, _ in result.ranking]
    else:
        retrieved = []

    prompt = prompts.render(
        STEP_ANSWER,
        original_question=original_question,
        acquired_information="\n".join(acquired),
        sub_question=bound,
        evidence=format_evidence(corpus, retrieved),
    )
    payload, raw = _complete_with_one_repair(provider, prompt, usages, validate=_validate_step_payload)
    if payload is None:
        answer, new_acquired, fell_back = _first_line(raw), "", True
    else:
        (answer, new_acquired), fell_back = payload, False
    _merge_acquired(acquired, new_acquired)
    return StepResult(
        step_id=step.id,
        sub_question=step.sub_question,
        bound_query=bound,
        retrieved_unit_ids=retrieved,
        answer=answer,
        acquired_information=new_acquired,
        missing_bindings=sorted(missing),
        parse_fallback=fell_back,
    )


def finalize(
    question: str,
    steps: Sequence[StepResult],
    acquired: Sequence[str],
    provider: ChatProvider,
    usages: list[TokenUsage],
) -> str:
    """Generate the final answer from the resolved execution trace."""
    lines = list(acquired)
    for step in steps:
        lines.append(f"Sub-question {step.step_id}: {step.bound_query}")
        lines.append(f"Answer {step.step_id}: {step.answer}")
    prompt = prompts.render(FINAL_ANSWER, question=question, evidence="\n".join(lines))
    text, usage = provider.complete(ChatRequest(user=prompt))
    usages.append(usage)
    return text.strip()


def run_pipeline(
    question: str,
    retriever: MultiViewRetriever,
    provider: ChatProvider,
    corpus: Corpus,
    usages: list[TokenUsage],
    question_id: str = "q",
    max_steps: int = DEFAULT_MAX_STEPS,
    slot_binding: bool = True,
) -> ExecutionTrace:
    """Full per-question pipeline; deterministic given deterministic
    providers. Steps run strictly in ascending id order."""
    if not question.strip():
        raise InvalidQueryError("question is empty")
    question = question.strip()

    initial = retriever.retrieve(question)
    initial_ids = [unit_id for unit_id, _ in initial.ranking]
    acquired_text, plan, warnings = decompose(
        question, format_evidence(corpus, initial_ids), provider, usages, max_steps
    )
    acquired: list[str] = []
    _merge_acquired(acquired, acquired_text)

    answers: dict[int, str] = {}
    steps: list[StepResult] = []
    for step in plan:
        result = execute_step(
            step,
            answers,
            acquired,
            retriever,
            provider,
            corpus,
            question,
            usages,
            plan,
            slot_binding=slot_binding,
        )
        answers[step.id] = result.answer
        steps.append(result)
        if result.missing_bindings:
            warnings.append(f"step {step.id} ran with empty bindings for {result.missing_bindings}")

    final_answer = finalize(question, steps, acquired, provider, usages)
    return ExecutionTrace(
        question_id=question_id,
        question=question,
        plan=plan,
        initial_unit_ids=initial_ids,
        steps=steps,
        acquired=acquired,
        final_answer=final_answer,
        warnings=warnings,
    )
