import math

import pytest

import oracles
from sonoplan.core import CaseInput, ClinicalVariables
from sonoplan.errors import BadValue, MissingBlock, MissingKey, ProviderFailure
from sonoplan.strategy import (
    PLAN_KEYS,
    GenerationConfig,
    PromptBundle,
    ReferencePlanProvider,
    ScriptedPlanProvider,
    TreatmentPlan,
    assemble_prompt,
    bleu,
    generate,
    parse_plan,
    render_plan,
    rouge,
)

CASE = CaseInput(
    case_id="c-1",
    volume_ref="volume.rvol",
    ehr_text="solitary uterine fibroid, low T2 signal, bowel adjacent",
    clinician_query="Plan ablation prioritizing safety.",
    clinical_vars=ClinicalVariables(24.0, 20.0, 2, 44),
)

SEG_BLOCK = (
    "SEG: volume_mm3=2145.00; centroid=(24.00,24.00,24.00); multiplicity=1; "
    "oar_min_distance_mm=35.00\n"
    "SEG-LESION: id=L1; volume_mm3=2145.00; oar_min_distance_mm=35.00"
)
DOSE_BLOCK = "DOSE: predicted_J=18000.0; band=medium"


def _plan(**overrides):
    kwargs = dict(
        reasoning_trace="- because",
        target_lesion_id="L1",
        ablation_strategy="center_to_periphery",
        acoustic_power=300.0,
        sonication_duration=60.0,
        cooling_interval=8.0,
        predicted_total_energy=18_000.0,
        treatment_order=("L1",),
        patient_position="supine",
        safety_margin=12.0,
        intraoperative_warnings=(),
    )
    kwargs.update(overrides)
    return TreatmentPlan(**kwargs)


# ---------------------------------------------------------------------------
# prompt assembly
# ---------------------------------------------------------------------------

def test_bundle_sections_in_canonical_order():
    bundle = assemble_prompt(CASE, [SEG_BLOCK, DOSE_BLOCK], CASE.clinician_query, ("chunk A",))
    text = bundle.render()
    positions = [text.index(h) for h in ("SYSTEM:", "PATIENT:", "OBSERVATIONS:", "RETRIEVED:", "QUERY:")]
    assert positions == sorted(positions)


def test_bundle_observations_none_when_executor_disabled():
    bundle = assemble_prompt(CASE, [], CASE.clinician_query)
    assert bundle.tool_observations == "none"
    assert "OBSERVATIONS:\nnone" in bundle.render()


def test_bundle_rendering_deterministic():
    a = assemble_prompt(CASE, [SEG_BLOCK], "q", ("r1", "r2")).render()
    b = assemble_prompt(CASE, [SEG_BLOCK], "q", ("r1", "r2")).render()
    assert a == b


# ---------------------------------------------------------------------------
# reference provider
# ---------------------------------------------------------------------------

def test_reference_single_far_lesion_center_to_periphery_no_warnings():
    bundle = assemble_prompt(CASE, [SEG_BLOCK, DOSE_BLOCK], CASE.clinician_query)
    plan = parse_plan(generate(bundle))
    assert plan.ablation_strategy == "center_to_periphery"
    assert plan.intraoperative_warnings == ()
    assert plan.safety_margin == 10.0
    assert plan.predicted_total_energy == 18_000.0


def test_reference_multiplicity_orders_by_oar_distance():
    seg = (
        "SEG: volume_mm3=3000.00; centroid=(20.00,20.00,20.00); multiplicity=2; "
        "oar_min_distance_mm=9.00\n"
        "SEG-LESION: id=L1; volume_mm3=2000.00; oar_min_distance_mm=9.00\n"
        "SEG-LESION: id=L2; volume_mm3=1000.00; oar_min_distance_mm=26.00"
    )
    bundle = assemble_prompt(CASE, [seg, DOSE_BLOCK], CASE.clinician_query)
    plan = parse_plan(generate(bundle))
    assert plan.ablation_strategy == "staged"
    assert plan.treatment_order == ("L2", "L1")  # farther from the OAR first
    assert plan.target_lesion_id == "L2"


def test_reference_warns_when_oar_inside_twice_margin():
    seg = (
        "SEG: volume_mm3=1000.00; centroid=(20.00,20.00,20.00); multiplicity=1; "
        "oar_min_distance_mm=8.00\n"
        "SEG-LESION: id=L1; volume_mm3=1000.00; oar_min_distance_mm=8.00"
    )
    bundle = assemble_prompt(CASE, [seg, DOSE_BLOCK], CASE.clinician_query)
    plan = parse_plan(generate(bundle))
    assert plan.intraoperative_warnings  # 8 < 2 * 10
    assert "L1" in plan.intraoperative_warnings[0]


def test_reference_margin_feedback_raises_floor():
    feedback = (
        "Plan ablation.\n\nFEEDBACK FROM VERIFICATION:\n"
        "Violation of g:R1: Enlarge the margin (requires safety_margin >= 15)"
    )
    bundle = assemble_prompt(CASE, [SEG_BLOCK, DOSE_BLOCK], feedback)
    plan = parse_plan(generate(bundle))
    assert plan.safety_margin == 15.0


def test_reference_deterministic_output():
    bundle = assemble_prompt(CASE, [SEG_BLOCK, DOSE_BLOCK], CASE.clinician_query)
    assert generate(bundle) == generate(bundle)


def test_reference_without_observations_still_emits_ten_keys():
    bundle = assemble_prompt(CASE, [], CASE.clinician_query)
    plan = parse_plan(generate(bundle))
    assert plan.treatment_order == ("L1",)
    assert plan.safety_margin >= 10.0
    assert plan.intraoperative_warnings  # manual-confirmation warning


def test_generate_token_budget():
    bundle = assemble_prompt(CASE, [SEG_BLOCK, DOSE_BLOCK], CASE.clinician_query)
    with pytest.raises(ProviderFailure):
        generate(bundle, max_output_tokens=3)


def test_scripted_provider_replays_then_repeats():
    texts = [render_plan(_plan(safety_margin=8.0)), render_plan(_plan(safety_margin=9.0))]
    provider = ScriptedPlanProvider(texts)
    bundle = assemble_prompt(CASE, [], "q")
    assert parse_plan(generate(bundle, provider)).safety_margin == 8.0
    assert parse_plan(generate(bundle, provider)).safety_margin == 9.0
    assert parse_plan(generate(bundle, provider)).safety_margin == 9.0


# ---------------------------------------------------------------------------
# plan text contract
# ---------------------------------------------------------------------------

def test_parse_render_roundtrip():
    plan = _plan(
        intraoperative_warnings=("watch the bowel", "cooling after L1"),
        treatment_order=("L1",),
    )
    assert parse_plan(render_plan(plan)) == plan


def test_reference_output_roundtrips():
    bundle = assemble_prompt(CASE, [SEG_BLOCK, DOSE_BLOCK], CASE.clinician_query)
    text = generate(bundle)
    assert render_plan(parse_plan(text)) == text


def test_parse_missing_key():
    text = render_plan(_plan())
    text = "\n".join(ln for ln in text.splitlines() if not ln.startswith("cooling_interval"))
    with pytest.raises(MissingKey) as exc:
        parse_plan(text)
    assert exc.value.name == "cooling_interval"


def test_parse_bad_numeric():
    text = render_plan(_plan()).replace("acoustic_power: 300", "acoustic_power: lots")
    with pytest.raises(BadValue):
        parse_plan(text)


def test_parse_missing_blocks():
    with pytest.raises(MissingBlock):
        parse_plan("no blocks at all")
    with pytest.raises(MissingBlock):
        parse_plan("PLAN:\ntarget_lesion_id: L1")


def test_plan_field_count_is_ten():
    assert len(PLAN_KEYS) == 10
    fields = _plan().fields()
    assert tuple(fields.keys()) == PLAN_KEYS


def test_plan_invariants():
    with pytest.raises(BadValue):
        _plan(acoustic_power=-5.0)
    with pytest.raises(BadValue):
        _plan(treatment_order=("L1", "L1"))
    with pytest.raises(BadValue):
        _plan(target_lesion_id="L9")
    with pytest.raises(BadValue):
        _plan(ablation_strategy="sideways")


def test_with_patch_validates():
    patched = _plan(safety_margin=8.0).with_patch({"safety_margin": 12})
    assert patched.safety_margin == 12.0
    with pytest.raises(BadValue):
        _plan().with_patch({"bogus_field": 1})


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------

def test_rouge_identical_texts():
    s = rouge("a b c d", "a b c d")
    assert s == {"rouge1": 1.0, "rouge2": 1.0, "rougeL": 1.0}


def test_rouge_l_hand_case():
    s = rouge("a b c", "a c")
    # LCS=2, P=1, R=2/3 -> F1 = 0.8
    assert s["rougeL"] == pytest.approx(0.8)
    assert oracles.lcs_length(["a", "b", "c"], ["a", "c"]) == 2


def test_rouge_disjoint_vocab_zero():
    s = rouge("a b c", "x y z")
    assert s == {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}


def test_rouge_empty_conventions():
    assert rouge("", "") == {"rouge1": 1.0, "rouge2": 1.0, "rougeL": 1.0}
    assert rouge("a", "") == {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}


def test_rouge_l_matches_lcs_oracle(rng):
    vocab = list("abcdef")
    for _ in range(20):
        ref = [vocab[i] for i in rng.integers(0, 6, size=rng.integers(1, 10))]
        hyp = [vocab[i] for i in rng.integers(0, 6, size=rng.integers(1, 10))]
        lcs = oracles.lcs_length(ref, hyp)
        s = rouge(" ".join(ref), " ".join(hyp))
        if lcs == 0:
            assert s["rougeL"] == 0.0
        else:
            p, r = lcs / len(hyp), lcs / len(ref)
            assert s["rougeL"] == pytest.approx(2 * p * r / (p + r))


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------

def test_bleu_identical_texts_all_one():
    assert bleu("a b c d e", "a b c d e") == {
        "bleu1": 1.0, "bleu2": 1.0, "bleu3": 1.0, "bleu4": 1.0,
    }


def test_bleu_hand_case_b1():
    s = bleu("a c", "a b")
    assert s["bleu1"] == pytest.approx(0.5)  # BP = 1 at equal length


def test_bleu_brevity_penalty():
    # hyp half the ref length: BP = e^(1-2)
    ref = "a b c d"
    hyp = "a b"
    s = bleu(ref, hyp)
    assert s["bleu1"] == pytest.approx(math.exp(1 - 2) * 1.0)


def test_bleu_add_one_smoothing_for_higher_orders():
    s = bleu("a b c d", "a c b d")
    # unigrams all match; no matching bigram -> smoothed 1/(3+1)
    assert s["bleu1"] == 1.0
    assert s["bleu2"] == pytest.approx(math.sqrt(1.0 * (1 / 4)))


def test_bleu_identical_single_token():
    assert bleu("a", "a")["bleu4"] == 1.0


def test_bleu_bounded():
    for ref, hyp in [("a b", "c d"), ("a", "a b c"), ("x y z", "x")]:
        for v in bleu(ref, hyp).values():
            assert 0.0 <= v <= 1.0
