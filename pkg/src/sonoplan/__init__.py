"""Closed-loop focused-ultrasound treatment planning engine.

Pipeline: plan decomposition -> perception (segmentation + geometric
serialization) -> quantification (radiomics + boosted dose model) ->
strategy generation -> constraint-aware verification with a bounded
reflection loop and human escalation, all grounded in a retrieval memory.
"""

from .core import CaseInput, ClinicalVariables, Mask, Volume
from .kernels import IMPLEMENTATION as KERNEL_IMPLEMENTATION
from .planner import PlannerConfig
from .strategy import TreatmentPlan
from .workflow import WorkflowEngine, open_engine, run_workflow

__version__ = "0.1.0"

__all__ = [
    "CaseInput",
    "ClinicalVariables",
    "Mask",
    "Volume",
    "PlannerConfig",
    "TreatmentPlan",
    "WorkflowEngine",
    "open_engine",
    "run_workflow",
    "KERNEL_IMPLEMENTATION",
    "__version__",
]
