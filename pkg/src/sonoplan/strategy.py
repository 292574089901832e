"""Strategy layer: structured prompt assembly, plan generation behind a
provider contract, plan text parsing, and ROUGE/BLEU scoring.

Generated text follows a fixed contract: a ``REASONING:`` block, a blank
line, then a ``PLAN:`` block of ``key: value`` lines covering exactly the
ten plan parameters in canonical order.  The reference provider is a
deterministic rule table over the serialized tool observations, so the whole
loop stays reproducible; a learned generator can be plugged in behind the
same interface.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from .core import CaseInput
from .errors import BadValue, MissingBlock, MissingKey, ProviderFailure

ABLATION_STRATEGIES = ("center_to_periphery", "periphery_to_center", "staged")
PATIENT_POSITIONS = ("supine", "prone")

PLAN_KEYS = (
    "target_lesion_id",
    "ablation_strategy",
    "acoustic_power",
    "sonication_duration",
    "cooling_interval",
    "predicted_total_energy",
    "treatment_order",
    "patient_position",
    "safety_margin",
    "intraoperative_warnings",
)

_NUMERIC_KEYS = (
    "acoustic_power",
    "sonication_duration",
    "cooling_interval",
    "predicted_total_energy",
    "safety_margin",
)


def count_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class TreatmentPlan:
    """Ten keyed parameters plus the free-text reasoning trace."""

    reasoning_trace: str
    target_lesion_id: str
    ablation_strategy: str
    acoustic_power: float          # W
    sonication_duration: float     # s
    cooling_interval: float        # s
    predicted_total_energy: float  # J
    treatment_order: tuple[str, ...]
    patient_position: str
    safety_margin: float           # mm
    intraoperative_warnings: tuple[str, ...]

    def __post_init__(self):
        if self.ablation_strategy not in ABLATION_STRATEGIES:
            raise BadValue("ablation_strategy", self.ablation_strategy)
        if self.patient_position not in PATIENT_POSITIONS:
            raise BadValue("patient_position", self.patient_position)
        for key in _NUMERIC_KEYS:
            v = getattr(self, key)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise BadValue(key, repr(v))
        order = tuple(self.treatment_order)
        if len(order) != len(set(order)) or not order:
            raise BadValue("treatment_order", "ids must be unique and non-empty")
        if self.target_lesion_id not in order:
            raise BadValue("target_lesion_id", "must appear in treatment_order")
        object.__setattr__(self, "treatment_order", order)
        object.__setattr__(self, "intraoperative_warnings", tuple(self.intraoperative_warnings))

    def fields(self) -> dict:
        """Plan parameters keyed by name, for constraint evaluation."""
        return {key: getattr(self, key) for key in PLAN_KEYS}

    def with_patch(self, patch: dict) -> "TreatmentPlan":
        """Apply a reviewer patch; unknown keys or bad values raise."""
        kwargs = {}
        for key, value in patch.items():
            if key not in PLAN_KEYS:
                raise BadValue(key, "not a plan field")
            if key in _NUMERIC_KEYS:
                value = float(value)
            elif key in ("treatment_order", "intraoperative_warnings"):
                value = tuple(value)
            kwargs[key] = value
        return replace(self, **kwargs)


def render_plan(plan: TreatmentPlan) -> str:
    warnings = " | ".join(plan.intraoperative_warnings) if plan.intraoperative_warnings else "none"
    lines = [
        "REASONING:",
        plan.reasoning_trace.strip(),
        "",
        "PLAN:",
        f"target_lesion_id: {plan.target_lesion_id}",
        f"ablation_strategy: {plan.ablation_strategy}",
        f"acoustic_power: {plan.acoustic_power:g}",
        f"sonication_duration: {plan.sonication_duration:g}",
        f"cooling_interval: {plan.cooling_interval:g}",
        f"predicted_total_energy: {plan.predicted_total_energy:g}",
        f"treatment_order: {', '.join(plan.treatment_order)}",
        f"patient_position: {plan.patient_position}",
        f"safety_margin: {plan.safety_margin:g}",
        f"intraoperative_warnings: {warnings}",
    ]
    return "\n".join(lines) + "\n"


def parse_plan(text: str) -> TreatmentPlan:
    """Inverse of ``render_plan``; validates all ten keys."""
    m = re.search(r"REASONING:\s*\n(.*?)\n\s*\nPLAN:\s*\n(.*)", text, re.DOTALL)
    if m is None:
        if "PLAN:" not in text:
            raise MissingBlock("no PLAN block")
        raise MissingBlock("no REASONING block")
    reasoning, plan_body = m.group(1).strip(), m.group(2)

    raw: dict[str, str] = {}
    for line in plan_body.splitlines():
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        if sep:
            raw[key.strip()] = value.strip()
    for key in PLAN_KEYS:
        if key not in raw:
            raise MissingKey(key)

    def number(key: str) -> float:
        try:
            return float(raw[key])
        except ValueError as exc:
            raise BadValue(key, raw[key]) from exc

    order = tuple(t.strip() for t in raw["treatment_order"].split(",") if t.strip())
    warn_text = raw["intraoperative_warnings"]
    warnings = () if warn_text == "none" else tuple(
        w.strip() for w in warn_text.split("|") if w.strip()
    )
    return TreatmentPlan(
        reasoning_trace=reasoning,
        target_lesion_id=raw["target_lesion_id"],
        ablation_strategy=raw["ablation_strategy"],
        acoustic_power=number("acoustic_power"),
        sonication_duration=number("sonication_duration"),
        cooling_interval=number("cooling_interval"),
        predicted_total_energy=number("predicted_total_energy"),
        treatment_order=order,
        patient_position=raw["patient_position"],
        safety_margin=number("safety_margin"),
        intraoperative_warnings=warnings,
    )


# ---------------------------------------------------------------------------
# prompt assembly
# ---------------------------------------------------------------------------

DEFAULT_SYSTEM_INSTRUCTION = (
    "You are a focused-ultrasound treatment planning assistant. "
    "Produce a REASONING block followed by a PLAN block with the ten "
    "required parameters, honoring every safety constraint."
)

_SECTION_ORDER = ("SYSTEM", "PATIENT", "OBSERVATIONS", "RETRIEVED", "QUERY")


@dataclass(frozen=True)
class PromptBundle:
    """Structured prompt sections in fixed order."""

    system_instruction: str
    patient_profile: str
    tool_observations: str   # "none" when the executor was disabled
    retrieved: tuple[str, ...]
    user_query: str

    def render(self) -> str:
        retrieved = "\n\n".join(self.retrieved) if self.retrieved else "none"
        sections = {
            "SYSTEM": self.system_instruction,
            "PATIENT": self.patient_profile,
            "OBSERVATIONS": self.tool_observations,
            "RETRIEVED": retrieved,
            "QUERY": self.user_query,
        }
        return "\n\n".join(f"{name}:\n{sections[name]}" for name in _SECTION_ORDER) + "\n"


def render_patient_profile(case: CaseInput) -> str:
    cv = case.clinical_vars
    return (
        f"case_id: {case.case_id}\n"
        f"bmi: {cv.bmi:g}\n"
        f"abdominal_wall_thickness_mm: {cv.abdominal_wall_thickness_mm:g}\n"
        f"preop_score: {cv.preop_score:g}\n"
        f"age: {cv.age:g}\n"
        f"record: {case.ehr_text}"
    )


def assemble_prompt(
    case: CaseInput,
    observation_blocks: list[str] | tuple[str, ...],
    query: str,
    retrieved: tuple[str, ...] = (),
    system_instruction: str = DEFAULT_SYSTEM_INSTRUCTION,
) -> PromptBundle:
    obs = "\n".join(b.strip() for b in observation_blocks if b.strip()) or "none"
    return PromptBundle(
        system_instruction=system_instruction,
        patient_profile=render_patient_profile(case),
        tool_observations=obs,
        retrieved=tuple(retrieved),
        user_query=query,
    )


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationConfig:
    margin_floor_mm: float = 10.0
    power_by_band: dict = field(
        default_factory=lambda: {"low": 200.0, "medium": 300.0, "high": 380.0}
    )
    base_cooling_s: float = 8.0
    max_output_tokens: int | None = None


_SEG_LINE = re.compile(
    r"SEG: volume_mm3=([\d.]+); centroid=\(([^)]*)\); multiplicity=(\d+); "
    r"oar_min_distance_mm=(none|[\d.]+)"
)
_LESION_LINE = re.compile(
    r"SEG-LESION: id=(\S+); volume_mm3=([\d.]+); oar_min_distance_mm=(none|[\d.]+)"
)
_DOSE_LINE = re.compile(r"DOSE: predicted_J=([\d.]+); band=(\w+)")
_MARGIN_FEEDBACK = re.compile(r"requires safety_margin >= ([\d.eE+-]+)")


class ReferencePlanProvider:
    """Deterministic rule-table generator over the rendered prompt.

    Strategy comes from lesion multiplicity and the dose band, treatment
    order from descending distance to organs at risk, and the safety margin
    from a configurable floor (raised when verification feedback cites a
    margin requirement).  Pure function of (bundle, config): byte-identical
    output on repeat calls.
    """

    name = "reference"
    reentrant = True

    def __init__(self, config: GenerationConfig = GenerationConfig()):
        self.config = config

    def generate(self, bundle: PromptBundle) -> str:
        text = bundle.render()
        fired: list[str] = []

        seg = _SEG_LINE.search(text)
        dose = _DOSE_LINE.search(text)
        lesions = [
            (m.group(1), float(m.group(2)), math.inf if m.group(3) == "none" else float(m.group(3)))
            for m in _LESION_LINE.finditer(text)
        ]

        multiplicity = int(seg.group(3)) if seg else 0
        band = dose.group(2) if dose else "low"
        energy = float(dose.group(1)) if dose else 0.0

        if multiplicity >= 2:
            strategy_name = "staged"
            fired.append(f"multiplicity {multiplicity} >= 2 -> staged ablation")
        elif band == "high":
            strategy_name = "periphery_to_center"
            fired.append("high dose band -> periphery_to_center ablation")
        else:
            strategy_name = "center_to_periphery"
            fired.append("solitary lesion, non-high dose band -> center_to_periphery ablation")

        if lesions:
            # farthest from any organ at risk first; unknown distance counts as far
            ordered = sorted(lesions, key=lambda t: (0 if math.isinf(t[2]) else 1, -t[2], t[0]))
            order = tuple(lid for lid, _, _ in ordered)
            fired.append("treatment order by descending distance to organs at risk")
        else:
            order = ("L1",)
            fired.append("no lesion observations; defaulting to single target L1")

        margin = max(10.0, self.config.margin_floor_mm)
        for m in _MARGIN_FEEDBACK.finditer(bundle.user_query):
            bound = float(m.group(1))
            if bound > margin:
                margin = bound
                fired.append(f"verification feedback -> safety margin raised to {bound:g} mm")

        power = self.config.power_by_band[band]
        duration = round(energy / power, 1) if energy > 0 else 30.0
        cooling = self.config.base_cooling_s
        if band == "high":
            cooling += 4.0
            fired.append("high dose band -> extended cooling interval")
        if multiplicity >= 2:
            cooling += 4.0
            fired.append("multiple targets -> extended cooling interval")

        warnings = []
        for lid, _, dist in lesions:
            if math.isfinite(dist) and dist < 2.0 * margin:
                warnings.append(
                    f"Lesion {lid} lies {dist:g} mm from an organ at risk; "
                    f"monitor the {margin:g} mm margin continuously"
                )
                fired.append(f"lesion {lid} within 2x margin of an organ at risk -> warning")
        if not seg and not dose:
            warnings.append("No tool observations available; confirm target geometry manually")
            fired.append("missing observations -> manual confirmation warning")

        reasoning = "\n".join(f"- {line}" for line in fired)
        plan = TreatmentPlan(
            reasoning_trace=reasoning,
            target_lesion_id=order[0],
            ablation_strategy=strategy_name,
            acoustic_power=power,
            sonication_duration=duration,
            cooling_interval=cooling,
            predicted_total_energy=energy,
            treatment_order=order,
            patient_position="supine",
            safety_margin=margin,
            intraoperative_warnings=tuple(warnings),
        )
        return render_plan(plan)


class ScriptedPlanProvider:
    """Replays fixed plan texts; after the script runs out, the last text
    repeats.  Used for fault injection in tests and demo seeding."""

    name = "scripted"
    reentrant = False

    def __init__(self, texts: list[str]):
        if not texts:
            raise ValueError("need at least one scripted text")
        self.texts = list(texts)
        self.calls = 0

    def generate(self, bundle: PromptBundle) -> str:
        text = self.texts[min(self.calls, len(self.texts) - 1)]
        self.calls += 1
        return text


def generate(bundle: PromptBundle, provider=None, max_output_tokens: int | None = None) -> str:
    """Run a provider on the bundle; enforces the optional token budget."""
    if provider is None:
        provider = ReferencePlanProvider()
    try:
        text = provider.generate(bundle)
    except ProviderFailure:
        raise
    except Exception as exc:
        raise ProviderFailure(f"provider {getattr(provider, 'name', '?')} failed: {exc}") from exc
    if max_output_tokens is not None and count_tokens(text) > max_output_tokens:
        raise ProviderFailure(
            f"output of {count_tokens(text)} tokens exceeds budget {max_output_tokens}"
        )
    return text


# ---------------------------------------------------------------------------
# text metrics
# ---------------------------------------------------------------------------

def _ngrams(tokens: list[str], n: int) -> dict:
    counts: dict[tuple, int] = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i : i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def _overlap_f1(ref_counts: dict, hyp_counts: dict) -> float:
    ref_total = sum(ref_counts.values())
    hyp_total = sum(hyp_counts.values())
    if ref_total == 0 and hyp_total == 0:
        return 1.0
    if ref_total == 0 or hyp_total == 0:
        return 0.0
    match = sum(min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items())
    if match == 0:
        return 0.0
    p = match / hyp_total
    r = match / ref_total
    return 2 * p * r / (p + r)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(ref_text: str, hyp_text: str) -> dict[str, float]:
    """ROUGE-1/2 and ROUGE-L F1 over whitespace tokens."""
    ref = ref_text.split()
    hyp = hyp_text.split()
    if not ref and not hyp:
        return {"rouge1": 1.0, "rouge2": 1.0, "rougeL": 1.0}
    if not ref or not hyp:
        return {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    scores = {
        "rouge1": _overlap_f1(_ngrams(ref, 1), _ngrams(hyp, 1)),
        "rouge2": _overlap_f1(_ngrams(ref, 2), _ngrams(hyp, 2)),
    }
    lcs = _lcs_length(ref, hyp)
    if lcs == 0:
        scores["rougeL"] = 0.0
    else:
        p = lcs / len(hyp)
        r = lcs / len(ref)
        scores["rougeL"] = 2 * p * r / (p + r)
    return scores


def bleu(ref_text: str, hyp_text: str, max_n: int = 4) -> dict[str, float]:
    """Clipped n-gram precision with brevity penalty; add-one smoothing on
    zero counts for n >= 2.  ``bleu{k}`` weights orders 1..k uniformly."""
    ref = ref_text.split()
    hyp = hyp_text.split()
    if not ref and not hyp:
        return {f"bleu{k}": 1.0 for k in range(1, max_n + 1)}
    if not ref or not hyp:
        return {f"bleu{k}": 0.0 for k in range(1, max_n + 1)}

    precisions = []
    for n in range(1, max_n + 1):
        ref_counts = _ngrams(ref, n)
        hyp_counts = _ngrams(hyp, n)
        total = sum(hyp_counts.values())
        if total == 0:
            precisions.append(1.0)  # vacuous order (hyp shorter than n)
            continue
        clipped = sum(min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items())
        if clipped == 0 and n >= 2:
            precisions.append(1.0 / (total + 1))
        else:
            precisions.append(clipped / total)

    bp = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    out = {}
    for k in range(1, max_n + 1):
        ps = precisions[:k]
        if any(p == 0.0 for p in ps):
            out[f"bleu{k}"] = 0.0
        else:
            out[f"bleu{k}"] = bp * math.exp(sum(math.log(p) for p in ps) / k)
    return out
