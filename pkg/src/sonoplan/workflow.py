"""Workflow engine and persistence: executes a decomposed action plan end to
end, records every artifact for replay, and enforces the review state
machine.

A store is one directory per case under ``cases/`` plus shared assets at the
root (knowledge index, dose model, optional constraint config).  The engine
is deterministic for a fixed (case, config, seeds) triple: two runs produce
byte-identical plan texts.
"""

from __future__ import annotations

import json
import math
import shutil
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import radiomics, segtool
from .core import (
    CaseInput,
    ClinicalVariables,
    Mask,
    Volume,
    parse_case,
    read_mask,
    read_volume,
    serialize_case,
    write_mask,
    write_volume,
)
from .dosemodel import (
    CLINICAL_NAMES,
    BoostParams,
    DoseModel,
    TrainingTable,
    boosted_fit,
    icc_filter,
    lasso_fit,
    predict_dose,
)
from .errors import InvalidTransition, SonoplanError, UnknownCase
from .memory import MemoryIndex, ingest_directory
from .optimizer import (
    DEFAULT_CONSTRAINTS,
    LoopState,
    NextAction,
    VerificationReport,
    load_constraints,
    reflect_step,
    verify_plan,
)
from .planner import Agent, PlannerConfig, Tool, decompose, validate
from .segtool import AutonomyPrompt, ReferenceBackend, SegmenterConfig, SegObservation
from .strategy import (
    DEFAULT_SYSTEM_INSTRUCTION,
    GenerationConfig,
    ReferencePlanProvider,
    TreatmentPlan,
    assemble_prompt,
    count_tokens,
    generate,
    parse_plan,
    render_plan,
)

POLICIES = {"default-policy": DEFAULT_SYSTEM_INSTRUCTION}

KNOWLEDGE_INDEX_FILE = "knowledge_index.json"
DOSE_MODEL_FILE = "dose_model.json"
CONSTRAINTS_FILE = "constraints.json"


class WorkflowStatus(str, Enum):
    RUNNING = "Running"
    FINALIZED = "Finalized"
    ESCALATED = "Escalated"
    APPROVED = "Approved"
    REJECTED = "Rejected"


_ALLOWED_TRANSITIONS = {
    WorkflowStatus.RUNNING: {WorkflowStatus.FINALIZED, WorkflowStatus.ESCALATED},
    WorkflowStatus.ESCALATED: {
        WorkflowStatus.APPROVED,
        WorkflowStatus.REJECTED,
        WorkflowStatus.RUNNING,  # modification re-verify
    },
    WorkflowStatus.FINALIZED: {WorkflowStatus.APPROVED, WorkflowStatus.REJECTED},
    WorkflowStatus.APPROVED: set(),
    WorkflowStatus.REJECTED: set(),
}


@dataclass
class AgentTelemetry:
    running_time_s: float = 0.0
    token_usage: int = 0
    success: bool = True

    def as_dict(self) -> dict:
        return {
            "running_time_s": round(self.running_time_s, 6),
            "token_usage": self.token_usage,
            "success": self.success,
        }


def _report_dict(report: VerificationReport) -> dict:
    return {
        "s_task": report.s_task,
        "s_guide": report.s_guide,
        "s_total": report.s_total,
        "violations": [{"id": v.source_id, "message": v.message} for v in report.violations],
        "retrieved_chunk_ids": list(report.retrieved_chunk_ids),
        "feedback_text": report.feedback_text,
        "notes": list(report.notes),
    }


@dataclass
class WorkflowRecord:
    """Everything one case produced: artifacts, plans, reports, telemetry."""

    case_id: str
    status: WorkflowStatus = WorkflowStatus.RUNNING
    config: dict = field(default_factory=dict)
    action_plan_lines: list = field(default_factory=list)
    mask_ref: str | None = None
    seg_observation: dict | None = None
    dose_observation: dict | None = None
    observation_blocks: list = field(default_factory=list)
    retrieved_case_chunks: list = field(default_factory=list)
    plans: list = field(default_factory=list)          # raw plan texts, in order
    final_plan_text: str | None = None
    reports: list = field(default_factory=list)        # report dicts, in order
    loop: dict = field(default_factory=dict)
    telemetry: dict = field(default_factory=dict)      # agent -> telemetry dict
    trace: list = field(default_factory=list)
    created_at: float = 0.0
    updated_at: float = 0.0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["status"] = self.status.value
        return d

    @staticmethod
    def from_dict(doc: dict) -> "WorkflowRecord":
        doc = dict(doc)
        doc["status"] = WorkflowStatus(doc["status"])
        return WorkflowRecord(**doc)


class Store:
    """File-backed case store; writes are serialized per case."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "cases").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()

    def lock(self, case_id: str) -> threading.Lock:
        with self._global:
            return self._locks.setdefault(case_id, threading.Lock())

    def case_dir(self, case_id: str) -> Path:
        return self.root / "cases" / case_id

    def list_case_ids(self) -> list[str]:
        return sorted(p.name for p in (self.root / "cases").iterdir() if p.is_dir())

    def ingest_case(self, case: CaseInput, base_dir: str | Path | None = None) -> CaseInput:
        """Copy the case and its referenced files into the store.

        Relative file references resolve against ``base_dir`` (the directory
        the case document came from), falling back to the working directory.
        """
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        cdir = self.case_dir(case.case_id)
        (cdir / "masks").mkdir(parents=True, exist_ok=True)
        vol_src = base / case.volume_ref
        vol_dst = cdir / "volume.rvol"
        if vol_src.resolve() != vol_dst.resolve():
            shutil.copyfile(vol_src, vol_dst)
        oar_refs = []
        for i, ref in enumerate(case.oar_refs):
            src = base / ref
            dst = cdir / f"oar_{i}.rmsk"
            if src.resolve() != dst.resolve():
                shutil.copyfile(src, dst)
            oar_refs.append(dst.name)
        stored = CaseInput(
            case_id=case.case_id,
            volume_ref=vol_dst.name,
            ehr_text=case.ehr_text,
            clinician_query=case.clinician_query,
            clinical_vars=case.clinical_vars,
            oar_refs=tuple(oar_refs),
        )
        (cdir / "case.json").write_text(serialize_case(stored))
        return stored

    def load_case(self, case_id: str) -> CaseInput:
        path = self.case_dir(case_id) / "case.json"
        if not path.exists():
            raise UnknownCase(case_id)
        return parse_case(path.read_text())

    def volume_path(self, case: CaseInput) -> Path:
        p = Path(case.volume_ref)
        return p if p.is_absolute() else self.case_dir(case.case_id) / p

    def oar_paths(self, case: CaseInput) -> list[Path]:
        out = []
        for ref in case.oar_refs:
            p = Path(ref)
            out.append(p if p.is_absolute() else self.case_dir(case.case_id) / p)
        return out

    def save_mask(self, case_id: str, mask: Mask) -> str:
        mdir = self.case_dir(case_id) / "masks"
        mdir.mkdir(parents=True, exist_ok=True)
        seq = len(list(mdir.glob("m*.rmsk")))
        name = f"m{seq:03d}.rmsk"
        write_mask(mdir / name, mask.binarize())
        return f"masks/{name}"

    def load_mask_by_ref(self, case_id: str, ref: str) -> Mask:
        return read_mask(self.case_dir(case_id) / ref)

    def save_record(self, record: WorkflowRecord) -> None:
        record.updated_at = time.time()
        cdir = self.case_dir(record.case_id)
        cdir.mkdir(parents=True, exist_ok=True)
        (cdir / "record.json").write_text(json.dumps(record.to_dict(), indent=1))
        (cdir / "trace.log").write_text("\n".join(record.trace) + "\n")

    def load_record(self, case_id: str) -> WorkflowRecord:
        path = self.case_dir(case_id) / "record.json"
        if not path.exists():
            raise UnknownCase(case_id)
        return WorkflowRecord.from_dict(json.loads(path.read_text()))

    def has_record(self, case_id: str) -> bool:
        return (self.case_dir(case_id) / "record.json").exists()

    def list_records(self) -> list[WorkflowRecord]:
        return [self.load_record(cid) for cid in self.list_case_ids() if self.has_record(cid)]


# ---------------------------------------------------------------------------
# dose model bootstrap
# ---------------------------------------------------------------------------

def _jitter_mask(mask: Mask, rng: np.random.Generator) -> Mask:
    """One-voxel random dilation or erosion, the replicate stand-in for a
    second observer's contour."""
    fg = mask.voxels >= 0.5
    grown = fg.copy()
    shrunk = fg.copy()
    for axis in range(3):
        for shift in (1, -1):
            rolled = np.roll(fg, shift, axis=axis)
            sl = [slice(None)] * 3
            sl[axis] = 0 if shift == 1 else -1
            rolled[tuple(sl)] = False
            grown |= rolled
            shrunk &= rolled
    pick = grown if rng.random() < 0.5 else shrunk
    if not pick.any():
        pick = fg
    return Mask(mask.dims, mask.spacing, pick.astype(np.float32))


def _cohort_phantom(seed: int) -> tuple[Volume, Mask, ClinicalVariables, float]:
    """One synthetic training sample: phantom, truth mask, covariates, dose."""
    rng = np.random.default_rng(seed)
    dims = (24, 24, 16)
    spacing = (1.5, 1.5, 2.0)
    extent = np.asarray(dims) * np.asarray(spacing)
    radius = float(rng.uniform(5.0, 11.0))
    center = tuple(float(c) for c in extent / 2 + rng.uniform(-3, 3, size=3))
    spec = segtool.PhantomSpec(
        dims=dims,
        spacing=spacing,
        ellipsoids=(
            segtool.Ellipsoid(center, (radius, radius * rng.uniform(0.8, 1.2), radius), 1.0),
        ),
        background=0.0,
        noise_sigma=0.04,
        rng_seed=seed,
    )
    volume, truth = segtool.make_phantom(spec)
    clinical = ClinicalVariables(
        bmi=float(rng.uniform(20.0, 36.0)),
        abdominal_wall_thickness_mm=float(rng.uniform(12.0, 38.0)),
        preop_score=float(rng.integers(1, 6)),
        age=float(rng.uniform(28.0, 55.0)),
    )
    lesion_mm3 = truth.foreground_count() * volume.voxel_volume_mm3
    noise = float(rng.normal(0.0, 400.0))
    dose_j = 4000.0 + 6.0 * lesion_mm3 + 350.0 * clinical.bmi + 120.0 * clinical.abdominal_wall_thickness_mm + noise
    return volume, truth, clinical, dose_j


def build_training_table(n_samples: int = 32, seed: int = 7) -> TrainingTable:
    """Synthetic cohort through the real feature pipeline."""
    rows, clin, doses = [], [], []
    for i in range(n_samples):
        volume, truth, clinical, dose_j = _cohort_phantom(seed * 1000 + i)
        fv = radiomics.extract(volume, truth)
        rows.append(list(fv.values))
        clin.append([clinical.as_dict()[k] for k in CLINICAL_NAMES])
        doses.append(dose_j)
    return TrainingTable(
        feature_names=radiomics.ALL_FEATURE_NAMES,
        features=np.asarray(rows),
        clinical=np.asarray(clin),
        dose_j=np.asarray(doses),
    )


def build_icc_replicates(n_samples: int, n_replicates: int, seed: int) -> list[np.ndarray]:
    """Feature matrices re-extracted under jittered masks."""
    replicates = []
    for r in range(n_replicates):
        rows = []
        for i in range(n_samples):
            volume, truth, _, _ = _cohort_phantom(seed * 1000 + i)
            rng = np.random.default_rng(seed * 7919 + r * 104729 + i)
            mask = truth if r == 0 else _jitter_mask(truth, rng)
            rows.append(list(radiomics.extract(volume, mask).values))
        replicates.append(np.asarray(rows))
    return replicates


def build_default_model(seed: int = 7, n_samples: int = 32, n_replicates: int = 3) -> tuple[DoseModel, TrainingTable]:
    """ICC-filter, LASSO-select and boost a dose model on the synthetic cohort."""
    table = build_training_table(n_samples, seed)
    replicates = build_icc_replicates(n_samples, n_replicates, seed)
    stable = icc_filter(replicates, threshold=0.75)
    if not stable:  # degenerate cohort; keep every column rather than none
        stable = list(range(len(table.feature_names)))
    F = table.features[:, stable]
    fit = lasso_fit(F, table.dose_j)
    selected = [stable[j] for j in fit.selected] or stable
    selected_names = tuple(table.feature_names[j] for j in selected)
    X = np.hstack([table.features[:, selected], table.clinical])
    schema = selected_names + CLINICAL_NAMES
    model = boosted_fit(X, table.dose_j, schema, BoostParams(n_stages=120, learning_rate=0.1, max_depth=2, min_leaf=2))
    return model, table


def load_or_build_model(store: Store, seed: int = 7) -> DoseModel:
    path = store.root / DOSE_MODEL_FILE
    if path.exists():
        return DoseModel.load(path)
    model, table = build_default_model(seed)
    model.save(path)
    (store.root / "training_table.csv").write_text(table.to_csv())
    return model


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

class StepFailure(SonoplanError):
    pass


class WorkflowEngine:
    """Runs cases through plan decomposition, tool execution, generation and
    bounded verification.  One engine serves many cases; a single case's
    workflow is strictly sequential."""

    def __init__(
        self,
        store: Store,
        memory_index: MemoryIndex | None = None,
        constraints=DEFAULT_CONSTRAINTS,
        provider=None,
        seg_config: SegmenterConfig = SegmenterConfig(),
        dose_model: DoseModel | None = None,
        generation_config: GenerationConfig = GenerationConfig(),
        retrieval_k: int = 3,
    ):
        self.store = store
        self.memory_index = memory_index
        self.constraints = constraints
        self.generation_config = generation_config
        self.provider = provider if provider is not None else ReferencePlanProvider(generation_config)
        self.seg_backend = ReferenceBackend(seg_config)
        self.dose_model = dose_model
        self.retrieval_k = retrieval_k

    # -- helpers -------------------------------------------------------------

    def _memory_for(self, cfg: PlannerConfig) -> MemoryIndex | None:
        return self.memory_index if cfg.enable_memory else None

    def _require_model(self) -> DoseModel:
        if self.dose_model is None:
            self.dose_model = load_or_build_model(self.store)
        return self.dose_model

    def _system_instruction(self, cfg: PlannerConfig) -> str:
        if cfg.system_policy_id not in POLICIES:
            raise SonoplanError(f"unknown system policy {cfg.system_policy_id!r}")
        return POLICIES[cfg.system_policy_id]

    # -- execution -----------------------------------------------------------

    def run_case(self, case: CaseInput, cfg: PlannerConfig, provider=None) -> WorkflowRecord:
        """Execute the full loop for one case and persist the record."""
        provider = provider if provider is not None else self.provider
        with self.store.lock(case.case_id):
            return self._run_locked(case, cfg, provider)

    def _run_locked(self, case: CaseInput, cfg: PlannerConfig, provider) -> WorkflowRecord:
        record = WorkflowRecord(case_id=case.case_id, created_at=time.time())
        record.config = {
            "enable_executor": cfg.enable_executor,
            "enable_optimizer": cfg.enable_optimizer,
            "enable_memory": cfg.enable_memory,
            "system_policy_id": cfg.system_policy_id,
        }
        telem = {a.value: AgentTelemetry() for a in (Agent.EXECUTOR, Agent.STRATEGY, Agent.OPTIMIZER)}
        telem["Planner"] = AgentTelemetry()

        # a mask from an earlier interactive session short-circuits Segment
        existing_mask_ref = None
        if self.store.has_record(case.case_id):
            existing_mask_ref = self.store.load_record(case.case_id).mask_ref

        t0 = time.perf_counter()
        action_plan = decompose(case, cfg, existing_mask_ref=existing_mask_ref)
        telem["Planner"].running_time_s += time.perf_counter() - t0
        record.action_plan_lines = action_plan.render_lines()
        telem["Planner"].token_usage += count_tokens("\n".join(record.action_plan_lines))
        problems = validate(action_plan)
        if problems:  # cannot happen for compiled plans; guards hand-built ones
            raise SonoplanError(f"invalid action plan: {problems}")
        record.trace.append(f"PLANNER decomposed {len(action_plan.steps)} steps [{cfg.system_policy_id}]")
        record.trace.extend(record.action_plan_lines)

        try:
            self._execute(case, cfg, provider, record, telem, action_plan)
        except StepFailure as exc:
            record.trace.append(f"STEP FAILED: {exc}; escalating for manual review")
            record.status = WorkflowStatus.ESCALATED
        record.telemetry = {name: t.as_dict() for name, t in telem.items()}
        self.store.save_record(record)
        return record

    def _run_executor_step(self, step, case, record, ctx) -> None:
        if step.tool is Tool.SEGMENT:
            ctx["volume"] = read_volume(self.store.volume_path(case))
            mask = self.seg_backend.segment(ctx["volume"], AutonomyPrompt())
            if mask.foreground_count() == 0:
                raise StepFailure("Segment: segmentation produced an empty mask")
            ctx["mask_ref"] = self.store.save_mask(case.case_id, mask)
            ctx["mask"] = mask
        elif step.tool is Tool.LOAD_MASK:
            ctx["volume"] = read_volume(self.store.volume_path(case))
            ctx["mask_ref"] = step.args["mask_ref"]
            ctx["mask"] = self.store.load_mask_by_ref(case.case_id, ctx["mask_ref"])
            if ctx["mask"].foreground_count() == 0:
                raise StepFailure("LoadMask: stored mask is empty")
        elif step.tool is Tool.PREDICT_DOSE:
            model = self._require_model()
            fv = radiomics.extract(ctx["volume"], ctx["mask"].binarize())
            dose_obs = predict_dose(model, fv.as_dict(), case.clinical_vars)
            record.dose_observation = {
                "predicted_dose_j": dose_obs.predicted_dose_j,
                "dose_band": dose_obs.dose_band,
                "model_version": dose_obs.model_version,
            }
            ctx["obs_blocks"].append(dose_obs.to_block())
            record.trace.append(
                f"EXECUTOR PredictDose -> {dose_obs.predicted_dose_j:.1f} J ({dose_obs.dose_band})"
            )
            return
        else:
            raise StepFailure(f"unexpected executor tool {step.tool.value}")

        # shared tail for Segment/LoadMask: geometric serialization
        oars = [read_mask(p) for p in self.store.oar_paths(case)]
        seg_obs = segtool.geometric_descriptors(
            ctx["mask"], ctx["volume"], oars, mask_ref=ctx["mask_ref"]
        )
        record.mask_ref = ctx["mask_ref"]
        record.seg_observation = _seg_obs_dict(seg_obs)
        ctx["obs_blocks"].append(seg_obs.to_block())
        record.trace.append(
            f"EXECUTOR {step.tool.value} -> {ctx['mask_ref']} ({seg_obs.multiplicity} lesions)"
        )

    def _execute(self, case, cfg, provider, record, telem, action_plan) -> None:
        ctx: dict = {"volume": None, "mask": None, "mask_ref": None, "obs_blocks": []}

        for step in action_plan.steps:
            if step.agent is not Agent.EXECUTOR:
                continue
            t0 = time.perf_counter()
            try:
                self._run_executor_step(step, case, record, ctx)
            except StepFailure:
                telem["Executor"].success = False
                raise
            except (SonoplanError, OSError) as exc:
                telem["Executor"].success = False
                raise StepFailure(f"{step.tool.value}: {exc}") from exc
            finally:
                telem["Executor"].running_time_s += time.perf_counter() - t0
        obs_blocks = ctx["obs_blocks"]
        record.observation_blocks = list(obs_blocks)

        retrieved: tuple[str, ...] = ()
        memory = self._memory_for(cfg)
        if memory is not None and len(memory) > 0:
            result = memory.retrieve(
                f"{case.ehr_text} {case.clinician_query}", k=self.retrieval_k, kinds=("case",)
            )
            retrieved = tuple(c.text for c, _ in result.ranked)
            record.retrieved_case_chunks = list(retrieved)
            record.trace.append(f"MEMORY retrieved {len(retrieved)} case chunks for generation")
        elif cfg.enable_memory:
            record.trace.append("MEMORY empty; generation proceeds without retrieved cases")

        loop = LoopState()
        feedback: str | None = None
        system_instruction = self._system_instruction(cfg)
        while True:
            query = case.clinician_query
            if feedback:
                query = f"{case.clinician_query}\n\nFEEDBACK FROM VERIFICATION:\n{feedback}"
            bundle = assemble_prompt(case, obs_blocks, query, retrieved, system_instruction)

            t0 = time.perf_counter()
            try:
                plan_text = generate(
                    bundle, provider, max_output_tokens=self.generation_config.max_output_tokens
                )
                plan_obj = parse_plan(plan_text)
            except SonoplanError as exc:
                telem["Strategy"].success = False
                telem["Strategy"].running_time_s += time.perf_counter() - t0
                raise StepFailure(f"GeneratePlan: {exc}") from exc
            telem["Strategy"].running_time_s += time.perf_counter() - t0
            telem["Strategy"].token_usage += count_tokens(bundle.render()) + count_tokens(plan_text)
            record.plans.append(plan_text)
            record.trace.append(f"STRATEGY generated plan #{len(record.plans)}")

            if not cfg.enable_optimizer:
                record.final_plan_text = plan_text
                record.status = WorkflowStatus.FINALIZED
                record.loop = {"iteration": 0, "t_max": loop.t_max, "status": "Finalized"}
                record.trace.append("OPTIMIZER disabled; plan emitted unverified")
                return

            t0 = time.perf_counter()
            report = verify_plan(plan_obj, case, self.constraints, memory, k=self.retrieval_k)
            telem["Optimizer"].running_time_s += time.perf_counter() - t0
            telem["Optimizer"].token_usage += count_tokens(plan_text) + count_tokens(report.feedback_text)
            record.reports.append(_report_dict(report))
            for note in report.notes:
                record.trace.append(f"OPTIMIZER note: {note}")
            record.trace.append(
                f"OPTIMIZER verdict s_task={report.s_task} s_guide={report.s_guide}"
            )

            action, loop = reflect_step(loop, plan_text, report)
            record.loop = {"iteration": loop.iteration, "t_max": loop.t_max, "status": loop.status.value}
            if action is NextAction.FINALIZE:
                record.final_plan_text = plan_text
                record.status = WorkflowStatus.FINALIZED
                record.trace.append("OPTIMIZER passed; plan finalized")
                return
            if action is NextAction.ESCALATE:
                record.final_plan_text = plan_text
                record.status = WorkflowStatus.ESCALATED
                record.trace.append(
                    f"OPTIMIZER escalated after {len(record.plans)} plans (t_max={loop.t_max})"
                )
                return
            feedback = report.feedback_text
            t0 = time.perf_counter()
            decompose(case, cfg)  # feedback routes through re-planning
            telem["Planner"].running_time_s += time.perf_counter() - t0
            telem["Planner"].token_usage += count_tokens("\n".join(record.action_plan_lines))
            record.trace.append(
                f"PLANNER replanned with feedback (t={loop.iteration}); observations reused"
            )

    # -- review --------------------------------------------------------------

    def review(self, case_id: str, decision: str, patch: dict | None = None) -> WorkflowRecord:
        """Apply a human decision: approve, reject, or modify(plan patch)."""
        with self.store.lock(case_id):
            record = self.store.load_record(case_id)
            if decision == "approve":
                self._transition(record, WorkflowStatus.APPROVED)
            elif decision == "reject":
                self._transition(record, WorkflowStatus.REJECTED)
            elif decision == "modify":
                self._modify(record, patch or {})
            else:
                raise InvalidTransition(f"unknown decision {decision!r}")
            self.store.save_record(record)
            return record

    def _transition(self, record: WorkflowRecord, to: WorkflowStatus) -> None:
        if to not in _ALLOWED_TRANSITIONS[record.status]:
            raise InvalidTransition(f"{record.status.value} -> {to.value}")
        record.status = to
        record.trace.append(f"REVIEW status -> {to.value}")

    def _modify(self, record: WorkflowRecord, patch: dict) -> None:
        self._transition(record, WorkflowStatus.RUNNING)
        case = self.store.load_case(record.case_id)
        cfg = PlannerConfig(**record.config)
        memory = self._memory_for(cfg)
        patched = parse_plan(record.final_plan_text).with_patch(patch)
        plan_text = render_plan(patched)
        record.plans.append(plan_text)
        record.trace.append(f"REVIEW modified plan: {sorted(patch.keys())}")

        loop = LoopState()  # fresh loop counter for the re-verification pass
        feedback = None
        while True:
            report = verify_plan(patched, case, self.constraints, memory, k=self.retrieval_k)
            record.reports.append(_report_dict(report))
            action, loop = reflect_step(loop, plan_text, report)
            record.loop = {"iteration": loop.iteration, "t_max": loop.t_max, "status": loop.status.value}
            if action is NextAction.FINALIZE:
                record.final_plan_text = plan_text
                record.status = WorkflowStatus.FINALIZED
                record.trace.append("REVIEW re-verification passed; plan finalized")
                return
            if action is NextAction.ESCALATE:
                record.final_plan_text = plan_text
                record.status = WorkflowStatus.ESCALATED
                record.trace.append("REVIEW re-verification kept failing; escalated again")
                return
            feedback = report.feedback_text
            record.trace.append("REVIEW patched plan failed; regenerating with feedback")
            query = f"{case.clinician_query}\n\nFEEDBACK FROM VERIFICATION:\n{feedback}"
            bundle = assemble_prompt(
                case, record.observation_blocks, query, (), self._system_instruction(cfg)
            )
            plan_text = generate(
                bundle, self.provider, max_output_tokens=self.generation_config.max_output_tokens
            )
            patched = parse_plan(plan_text)
            record.plans.append(plan_text)

    # -- interactive segmentation --------------------------------------------

    def interactive_segment(self, case_id: str, prompt) -> tuple[str, float | None]:
        """Segment with a clinician prompt; returns (mask ref, Dice against
        the record's previous mask when one exists).  The new mask becomes
        the record's current mask."""
        with self.store.lock(case_id):
            case = self.store.load_case(case_id)
            volume = read_volume(self.store.volume_path(case))
            new_mask = self.seg_backend.segment(volume, prompt)
            previous = None
            record = None
            if self.store.has_record(case_id):
                record = self.store.load_record(case_id)
                if record.mask_ref:
                    previous = self.store.load_mask_by_ref(case_id, record.mask_ref)
            ref = self.store.save_mask(case_id, new_mask)
            dice_vs_previous = (
                segtool.dice(new_mask.binarize(), previous.binarize()) if previous is not None else None
            )
            if record is not None:
                record.mask_ref = ref
                record.trace.append(f"INTERACTIVE segment -> {ref}")
                self.store.save_record(record)
            return ref, dice_vs_previous

    # -- telemetry -----------------------------------------------------------

    def telemetry_aggregates(self) -> dict:
        """Per-agent mean running time, total tokens and success rate."""
        agents: dict[str, dict] = {}
        records = self.store.list_records()
        for rec in records:
            for agent, t in rec.telemetry.items():
                slot = agents.setdefault(
                    agent, {"running_time_s": [], "token_usage": 0, "successes": 0, "n": 0}
                )
                slot["running_time_s"].append(t["running_time_s"])
                slot["token_usage"] += t["token_usage"]
                slot["successes"] += 1 if t["success"] else 0
                slot["n"] += 1
        out = {}
        for agent, slot in sorted(agents.items()):
            out[agent] = {
                "mean_running_time_s": (
                    sum(slot["running_time_s"]) / slot["n"] if slot["n"] else 0.0
                ),
                "token_usage": slot["token_usage"],
                "success_rate": slot["successes"] / slot["n"] if slot["n"] else 1.0,
            }
        return {"agents": out, "cases": len(records)}


def _seg_obs_dict(obs: SegObservation) -> dict:
    return {
        "mask_ref": obs.mask_ref,
        "lesion_volume_mm3": obs.lesion_volume_mm3,
        "centroid_mm": list(obs.centroid_mm),
        "bbox": [list(obs.bbox[0]), list(obs.bbox[1])],
        "oar_min_distance_mm": [None if math.isinf(d) else d for d in obs.oar_min_distance_mm],
        "multiplicity": obs.multiplicity,
        "components": [
            {
                "lesion_id": c.lesion_id,
                "volume_mm3": c.volume_mm3,
                "centroid_mm": list(c.centroid_mm),
                "oar_min_distance_mm": None if math.isinf(c.oar_min_distance_mm) else c.oar_min_distance_mm,
            }
            for c in obs.components
        ],
    }


# ---------------------------------------------------------------------------
# engine wiring
# ---------------------------------------------------------------------------

def open_engine(store_dir: str | Path, provider=None, build_model: bool = True) -> WorkflowEngine:
    """Assemble an engine from a store directory's persisted assets."""
    store = Store(store_dir)
    index = None
    index_path = store.root / KNOWLEDGE_INDEX_FILE
    if index_path.exists():
        index = MemoryIndex.load(index_path)
    constraints = DEFAULT_CONSTRAINTS
    constraints_path = store.root / CONSTRAINTS_FILE
    if constraints_path.exists():
        constraints = load_constraints(constraints_path)
    model = None
    model_path = store.root / DOSE_MODEL_FILE
    if model_path.exists():
        model = DoseModel.load(model_path)
    elif build_model:
        model = load_or_build_model(store)
    return WorkflowEngine(
        store, memory_index=index, constraints=constraints, provider=provider, dose_model=model
    )


def run_workflow(case: CaseInput, cfg: PlannerConfig, store_dir: str | Path, provider=None) -> WorkflowRecord:
    """One-shot convenience wrapper around :class:`WorkflowEngine`."""
    engine = open_engine(store_dir, provider=provider)
    stored = engine.store.ingest_case(case)
    return engine.run_case(stored, cfg)


# ---------------------------------------------------------------------------
# demo assets
# ---------------------------------------------------------------------------

def make_demo_case(seed: int, out_dir: str | Path, case_id: str | None = None) -> CaseInput:
    """Seeded phantom case on disk: volume, OAR mask, case document."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dims = (36, 36, 22)
    spacing = (1.5, 1.5, 2.0)
    extent = np.asarray(dims) * np.asarray(spacing)
    n_lesions = 2 if rng.random() < 0.4 else 1
    ellipsoids = []
    first_center = extent / 2 + rng.uniform(-4, 4, size=3)
    radius = float(rng.uniform(7.5, 10.0))
    ellipsoids.append(
        segtool.Ellipsoid(tuple(float(c) for c in first_center), (radius, radius, radius * 0.8), 1.0)
    )
    if n_lesions == 2:
        offset = np.array([radius * 2.6, radius * 1.4, 0.0])
        second = np.clip(first_center - offset, 8.0, extent - 8.0)
        r2 = float(rng.uniform(4.0, 6.0))
        ellipsoids.append(
            segtool.Ellipsoid(tuple(float(c) for c in second), (r2, r2, r2), 1.0)
        )
    spec = segtool.PhantomSpec(
        dims=dims,
        spacing=spacing,
        ellipsoids=tuple(ellipsoids),
        background=0.0,
        noise_sigma=0.05,
        rng_seed=seed,
    )
    volume, _truth = segtool.make_phantom(spec)

    # organ at risk: small ellipsoid mask offset from the main lesion
    oar_center = np.clip(
        first_center + np.array([0.0, radius + rng.uniform(6.0, 14.0), 0.0]), 6.0, extent - 6.0
    )
    oar_spec = segtool.PhantomSpec(
        dims=dims,
        spacing=spacing,
        ellipsoids=(segtool.Ellipsoid(tuple(float(c) for c in oar_center), (4.0, 4.0, 4.0), 1.0),),
        rng_seed=seed,
    )
    _, oar_mask = segtool.make_phantom(oar_spec)

    cid = case_id or f"case-{seed:04d}"
    write_volume(out / "volume.rvol", volume)
    write_mask(out / "truth.rmsk", _truth)
    write_mask(out / "oar_0.rmsk", oar_mask)

    clinical = ClinicalVariables(
        bmi=float(round(rng.uniform(21.0, 35.0), 1)),
        abdominal_wall_thickness_mm=float(round(rng.uniform(14.0, 36.0), 1)),
        preop_score=float(rng.integers(1, 6)),
        age=float(rng.integers(30, 56)),
    )
    phenotype = "solitary uterine fibroid" if n_lesions == 1 else "multiple uterine fibroids"
    ehr = (
        f"MRI report: {phenotype} with low T2 signal, largest diameter about "
        f"{2 * radius:.0f} mm, located near the posterior wall. Adjacent bowel loop "
        f"noted as organ at risk. BMI {clinical.bmi:g}, abdominal wall thickness "
        f"{clinical.abdominal_wall_thickness_mm:g} mm. No absolute contraindication recorded."
    )
    case = CaseInput(
        case_id=cid,
        volume_ref=str(out / "volume.rvol"),
        ehr_text=ehr,
        clinician_query="Plan focused ultrasound ablation for the dominant lesion while prioritizing safety.",
        clinical_vars=clinical,
        oar_refs=(str(out / "oar_0.rmsk"),),
    )
    (out / "case.json").write_text(serialize_case(case))
    return case


DEMO_KNOWLEDGE = {
    "margins_guideline.txt": """kind: guideline
source: margins-guideline
RULE: require safety_margin >= 10 :: Safety margin below 10 mm around critical structures
RULE: if bmi >= 30 then require safety_margin >= 15 :: Elevated BMI attenuates the acoustic window; enlarge the protective margin
---
Focused ultrasound ablation of uterine fibroids requires a protective safety margin
between the ablation boundary and every adjacent organ at risk, including bowel,
bladder and the sacral nerve plexus. A minimum margin of 10 mm is mandatory around
critical structures. When the acoustic pathway is attenuated, for example by an
elevated body mass index or a thick abdominal wall, the margin must be enlarged to
15 mm to compensate for focal spot uncertainty. Sonication should pause whenever
the monitored temperature adjacent to bowel rises above the safety threshold.
""",
    "positioning_contraindications.txt": """kind: contraindication
source: positioning-rules
RULE: if abdominal_wall_thickness_mm >= 40 then require patient_position == prone :: Thick abdominal wall degrades the anterior acoustic window; switch to prone positioning
---
Contraindications and positioning notes for focused ultrasound ablation. Extensive
abdominal scarring in the acoustic window, an intrauterine device in place, or a
wall thickness of 40 mm and above compromise the anterior acoustic window; such
patients are treated prone or excluded. Bowel interposition between the abdominal
wall and the uterus requires bladder filling or rejection of the anterior pathway.
""",
    "case_library.txt": """kind: case
source: case-library
---
Historical case: solitary low-signal uterine fibroid of 34 mm treated with a
center_to_periphery strategy at 300 W, cooling interval 8 s, safety margin 12 mm,
supine position; complete non-perfusion achieved without adverse events.
Historical case: multiple uterine fibroids with the posterior lesion treated first
under a staged strategy, anterior targets received reduced energy and extended
cooling of 12 s to avoid heat buildup; margins kept above 10 mm throughout.
Historical case: iso-high signal fibroid near the rectum treated with periphery
to center sonication at reduced power and an enlarged 15 mm margin, prone
position after bowel interposition was detected.
""",
}


def write_demo_knowledge(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in DEMO_KNOWLEDGE.items():
        (out / name).write_text(text)
    return out


def seed_demo_store(store_dir: str | Path, seed: int = 7) -> str:
    """Populate a store with knowledge, a dose model and one escalated case.

    The escalated record comes from a scripted provider that keeps proposing
    an 8 mm safety margin, so the reflection loop exhausts its budget and
    hands the case to a human.  Suitable for driving the review console.
    """
    store = Store(store_dir)
    kdir = write_demo_knowledge(store.root / "knowledge")
    index = MemoryIndex()
    ingest_directory(kdir, index)
    index.save(store.root / KNOWLEDGE_INDEX_FILE)

    model = load_or_build_model(store)
    engine = WorkflowEngine(store, memory_index=index, dose_model=model)

    case = make_demo_case(seed, store.root / "incoming" / "demo", case_id="demo-0001")
    stored = engine.store.ingest_case(case)

    from .strategy import ScriptedPlanProvider  # local import avoids cycle at module load

    bad_plan = TreatmentPlan(
        reasoning_trace="- scripted demo plan with an under-sized margin",
        target_lesion_id="L1",
        ablation_strategy="center_to_periphery",
        acoustic_power=300.0,
        sonication_duration=40.0,
        cooling_interval=8.0,
        predicted_total_energy=12_000.0,
        treatment_order=("L1",),
        patient_position="supine",
        safety_margin=8.0,
        intraoperative_warnings=(),
    )
    provider = ScriptedPlanProvider([render_plan(bad_plan)])
    record = engine.run_case(stored, PlannerConfig(), provider=provider)
    assert record.status is WorkflowStatus.ESCALATED
    return stored.case_id
