"""Deterministic task decomposition: compile a case and configuration into
an ordered, dependency-respecting action plan.

The control plane is a rule compiler rather than a generative model so the
whole loop is reproducible; a generative planner can be layered on top by
emitting the same ActionPlan structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .core import CaseInput


class Agent(str, Enum):
    EXECUTOR = "Executor"
    STRATEGY = "Strategy"
    OPTIMIZER = "Optimizer"


class Tool(str, Enum):
    SEGMENT = "Segment"
    LOAD_MASK = "LoadMask"
    PREDICT_DOSE = "PredictDose"
    GENERATE_PLAN = "GeneratePlan"
    VERIFY_PLAN = "VerifyPlan"


# expected tool phases when present: perception -> quantification -> reasoning -> verification
_PHASE = {
    Tool.SEGMENT: 0,
    Tool.LOAD_MASK: 0,
    Tool.PREDICT_DOSE: 1,
    Tool.GENERATE_PLAN: 2,
    Tool.VERIFY_PLAN: 3,
}


@dataclass(frozen=True)
class PlannerConfig:
    enable_executor: bool = True
    enable_optimizer: bool = True
    enable_memory: bool = True
    system_policy_id: str = "default-policy"


@dataclass(frozen=True)
class ActionStep:
    agent: Agent
    tool: Tool
    args: dict = field(default_factory=dict)
    depends_on: tuple[int, ...] = ()


@dataclass(frozen=True)
class ActionPlan:
    steps: tuple[ActionStep, ...]

    def render_lines(self) -> list[str]:
        lines = []
        for i, step in enumerate(self.steps):
            args = " ".join(f"{k}={v}" for k, v in sorted(step.args.items()))
            deps = ",".join(str(d) for d in step.depends_on) or "-"
            lines.append(f"a{i + 1} {step.agent.value}.{step.tool.value} deps={deps} {args}".rstrip())
        return lines


def decompose(case: CaseInput, cfg: PlannerConfig, existing_mask_ref: str | None = None) -> ActionPlan:
    """Compile the phase sequence implied by the config flags.

    Full configuration yields Segment -> PredictDose -> GeneratePlan ->
    VerifyPlan with chained dependencies.  Disabling the executor drops the
    first two, disabling the optimizer drops the last; GeneratePlan is always
    present.  A case with a precomputed mask swaps Segment for LoadMask.
    """
    steps: list[ActionStep] = []
    if cfg.enable_executor:
        if existing_mask_ref is not None:
            steps.append(ActionStep(Agent.EXECUTOR, Tool.LOAD_MASK, {"mask_ref": existing_mask_ref}))
        else:
            steps.append(ActionStep(Agent.EXECUTOR, Tool.SEGMENT, {"prompt": "auto"}))
        steps.append(ActionStep(Agent.EXECUTOR, Tool.PREDICT_DOSE, {}, depends_on=(len(steps) - 1,)))

    gen_deps = (len(steps) - 1,) if steps else ()
    steps.append(
        ActionStep(
            Agent.STRATEGY,
            Tool.GENERATE_PLAN,
            {"policy": cfg.system_policy_id, "memory": cfg.enable_memory},
            depends_on=gen_deps,
        )
    )
    if cfg.enable_optimizer:
        steps.append(
            ActionStep(
                Agent.OPTIMIZER,
                Tool.VERIFY_PLAN,
                {"memory": cfg.enable_memory},
                depends_on=(len(steps) - 1,),
            )
        )
    return ActionPlan(tuple(steps))


def validate(plan: ActionPlan) -> list[str]:
    """Every ordering/dependency violation, empty when the plan is sound."""
    violations = []
    for i, step in enumerate(plan.steps):
        for dep in step.depends_on:
            if dep == i:
                violations.append(f"step {i} ({step.tool.value}) depends on itself")
            elif dep > i:
                violations.append(
                    f"step {i} ({step.tool.value}) depends on later step {dep}"
                )
            elif dep < 0:
                violations.append(f"step {i} ({step.tool.value}) has negative dependency")
    phases = [(i, _PHASE[s.tool]) for i, s in enumerate(plan.steps)]
    for (i, pa), (j, pb) in zip(phases, phases[1:]):
        if pb < pa:
            violations.append(
                f"step {j} ({plan.steps[j].tool.value}) out of phase order after "
                f"step {i} ({plan.steps[i].tool.value})"
            )
    return violations
