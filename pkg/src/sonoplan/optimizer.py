"""Verification layer: dual-aspect plan checks, structured feedback and the
bounded generate-evaluate-refine loop with human escalation.

Task feasibility is a conjunction of hard physical constraints; guideline
consistency evaluates machine-checkable rules attached to retrieved
knowledge chunks.  A failing plan triggers re-planning with structured
feedback at most ``t_max`` times, after which the case escalates to a human
reviewer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .core import CaseInput
from .errors import EmptyViolations, InvalidState, UnknownPlanField
from .memory import Condition, MemoryIndex, _parse_value
from .strategy import PLAN_KEYS, TreatmentPlan

T_MAX = 2  # regenerations allowed before escalation
NO_KNOWLEDGE_NOTE = "no knowledge available; guideline check passed vacuously"


@dataclass(frozen=True)
class PhysicalConstraint:
    constraint_id: str
    condition: Condition
    message: str

    def check(self, plan_fields: dict) -> bool:
        if self.condition.fld not in PLAN_KEYS:
            raise UnknownPlanField(
                f"constraint {self.constraint_id} references {self.condition.fld!r}"
            )
        return self.condition.holds(plan_fields)


DEFAULT_CONSTRAINTS: tuple[PhysicalConstraint, ...] = (
    PhysicalConstraint(
        "PHY-POWER",
        Condition("acoustic_power", "<=", 400.0),
        "Acoustic power above the 400 W transducer limit",
    ),
    PhysicalConstraint(
        "PHY-ENERGY",
        Condition("predicted_total_energy", "<=", 60_000.0),
        "Total delivered energy above the 60 kJ session limit",
    ),
    PhysicalConstraint(
        "PHY-MARGIN",
        Condition("safety_margin", ">=", 10.0),
        "Safety margin below 10 mm around critical structures",
    ),
    PhysicalConstraint(
        "PHY-COOLING",
        Condition("cooling_interval", ">=", 5.0),
        "Cooling interval under 5 s risks heat accumulation",
    ),
)


def load_constraints(path: str | Path) -> tuple[PhysicalConstraint, ...]:
    """Constraint set from a JSON config: [{id, field, op, bound, message}]."""
    doc = json.loads(Path(path).read_text())
    out = []
    for entry in doc:
        out.append(
            PhysicalConstraint(
                constraint_id=entry["id"],
                condition=Condition(entry["field"], entry["op"], _parse_value(str(entry["bound"]))),
                message=entry["message"],
            )
        )
    return tuple(out)


@dataclass(frozen=True)
class Violation:
    source_id: str  # constraint or rule id
    message: str


@dataclass(frozen=True)
class VerificationReport:
    s_task: int
    s_guide: int
    violations: tuple[Violation, ...]
    retrieved_chunk_ids: tuple[str, ...]
    feedback_text: str
    notes: tuple[str, ...] = ()

    @property
    def s_total(self) -> int:
        return self.s_task * self.s_guide

    def __post_init__(self):
        if (self.s_total == 0) != bool(self.violations):
            raise ValueError("s_total must be 0 exactly when violations exist")
        if bool(self.feedback_text) != bool(self.violations):
            raise ValueError("feedback_text must be non-empty exactly when violations exist")


def check_task_feasibility(
    plan: TreatmentPlan, constraints=DEFAULT_CONSTRAINTS
) -> tuple[int, list[Violation]]:
    """Conjunction of hard physical checks; every failure is reported."""
    fields_ = plan.fields()
    violations = []
    for c in constraints:
        if not c.check(fields_):
            violations.append(
                Violation(c.constraint_id, f"{c.message} (requires {c.condition.render()})")
            )
    return (0 if violations else 1), violations


def compose_verification_query(plan: TreatmentPlan, case: CaseInput) -> str:
    parts = [plan.ablation_strategy, plan.patient_position]
    parts.extend(plan.intraoperative_warnings)
    parts.append(case.ehr_text)
    return " ".join(parts)


def check_guideline_consistency(
    plan: TreatmentPlan,
    case: CaseInput,
    index: MemoryIndex | None,
    k: int = 3,
) -> tuple[int, list[Violation], tuple[str, ...], tuple[str, ...]]:
    """Evaluate rules attached to the top-k retrieved knowledge chunks.

    Returns (s_guide, violations, retrieved chunk ids, notes).  Without a
    usable index the check passes vacuously with an explicit note.
    """
    if index is None or len(index) == 0:
        return 1, [], (), (NO_KNOWLEDGE_NOTE,)

    query = compose_verification_query(plan, case)
    result = index.retrieve(query, k=k, kinds=("guideline", "contraindication"))
    facts = case.facts()
    fields_ = plan.fields()

    notes = []
    violations = []
    seen_rules = set()
    for chunk_, _score in result.ranked:
        for rule in chunk_.rules:
            if rule.rule_id in seen_rules:
                continue
            seen_rules.add(rule.rule_id)
            if not rule.applies(facts):
                notes.append(f"rule {rule.rule_id} not applicable")
                continue
            if rule.satisfied(fields_):
                notes.append(f"rule {rule.rule_id} checked: consistent")
            else:
                violations.append(
                    Violation(
                        rule.rule_id,
                        f"{rule.message} (requires {rule.requirement.render()})",
                    )
                )
    if not seen_rules:
        notes.append("retrieved chunks carry no machine-checkable rules")
    return (0 if violations else 1), violations, tuple(result.chunk_ids()), tuple(notes)


def build_feedback(violations: list[Violation] | tuple[Violation, ...]) -> str:
    """One deterministic line per violation, ordered by id."""
    if not violations:
        raise EmptyViolations("feedback requires at least one violation")
    ordered = sorted(violations, key=lambda v: v.source_id)
    return "\n".join(f"Violation of {v.source_id}: {v.message}" for v in ordered)


def verify_plan(
    plan: TreatmentPlan,
    case: CaseInput,
    constraints=DEFAULT_CONSTRAINTS,
    index: MemoryIndex | None = None,
    k: int = 3,
) -> VerificationReport:
    s_task, task_violations = check_task_feasibility(plan, constraints)
    s_guide, guide_violations, retrieved, notes = check_guideline_consistency(plan, case, index, k)
    violations = tuple(task_violations) + tuple(guide_violations)
    feedback = build_feedback(violations) if violations else ""
    return VerificationReport(
        s_task=s_task,
        s_guide=s_guide,
        violations=violations,
        retrieved_chunk_ids=retrieved,
        feedback_text=feedback,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# bounded reflection loop
# ---------------------------------------------------------------------------

class LoopStatus(str, Enum):
    RUNNING = "Running"
    FINALIZED = "Finalized"
    ESCALATED = "Escalated"


class NextAction(str, Enum):
    FINALIZE = "Finalize"
    TRIGGER_PLANNER = "TriggerPlanner"
    ESCALATE = "Escalate"


@dataclass(frozen=True)
class LoopState:
    """Progress of one generate-evaluate-refine loop; t counts regenerations."""

    iteration: int = 0
    t_max: int = T_MAX
    history: tuple[tuple[str, VerificationReport], ...] = field(default_factory=tuple)
    status: LoopStatus = LoopStatus.RUNNING

    def __post_init__(self):
        if self.iteration > self.t_max:
            raise InvalidState(f"iteration {self.iteration} exceeds t_max {self.t_max}")


def reflect_step(state: LoopState, plan_text: str, report: VerificationReport):
    """Decide the next move and advance the loop state.

    Passing report -> Finalize.  Failing report -> TriggerPlanner with the
    report's feedback while regenerations remain, else Escalate for manual
    review.
    """
    if state.status is not LoopStatus.RUNNING:
        raise InvalidState(f"loop already {state.status.value}")
    history = state.history + ((plan_text, report),)
    if report.s_total == 1:
        return NextAction.FINALIZE, replace(state, history=history, status=LoopStatus.FINALIZED)
    if state.iteration < state.t_max:
        return NextAction.TRIGGER_PLANNER, replace(
            state, history=history, iteration=state.iteration + 1
        )
    return NextAction.ESCALATE, replace(state, history=history, status=LoopStatus.ESCALATED)
