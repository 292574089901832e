import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sonoplan.core import Mask, Volume
from sonoplan.errors import (
    DimMismatch,
    EllipsoidOutOfBounds,
    NoPositiveSeed,
    PromptOutOfBounds,
)
from sonoplan.segtool import (
    AutonomyPrompt,
    BBoxPrompt,
    ClickPoint,
    ClickPrompt,
    Ellipsoid,
    PhantomSpec,
    SegmenterConfig,
    autonomy_detect,
    composite_loss,
    dice,
    geometric_descriptors,
    iou,
    make_phantom,
    parse_prompt_spec,
    segment,
)

SPACING = (1.0, 1.0, 1.0)


def sphere_spec(radius=10.0, dims=(32, 32, 32), sigma=0.0, seed=0, intensity=1.0):
    center = tuple(d / 2 for d in dims)
    return PhantomSpec(
        dims=dims,
        spacing=SPACING,
        ellipsoids=(Ellipsoid(center, (radius, radius, radius), intensity),),
        background=0.0,
        noise_sigma=sigma,
        rng_seed=seed,
    )


def _mask(dims, coords, spacing=SPACING):
    vox = np.zeros(dims, np.float32)
    for c in coords:
        vox[c] = 1.0
    return Mask(dims, spacing, vox)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

def test_phantom_deterministic_given_seed():
    spec = sphere_spec(sigma=0.1, seed=42)
    v1, m1 = make_phantom(spec)
    v2, m2 = make_phantom(spec)
    assert np.array_equal(v1.voxels, v2.voxels)
    assert np.array_equal(m1.voxels, m2.voxels)


def test_phantom_ball_volume_close_to_analytic():
    _, mask = make_phantom(sphere_spec(radius=10.0))
    analytic = 4.0 / 3.0 * math.pi * 10.0 ** 3
    voxel = mask.foreground_count() * 1.0
    assert abs(voxel - analytic) / analytic < 0.05


def test_phantom_empty_ellipsoid_list():
    spec = PhantomSpec((4, 4, 4), SPACING, (), background=0.25)
    volume, mask = make_phantom(spec)
    assert np.all(volume.voxels == 0.25)
    assert mask.foreground_count() == 0


def test_phantom_out_of_bounds_rejected():
    spec = PhantomSpec(
        (8, 8, 8), SPACING, (Ellipsoid((1.0, 4.0, 4.0), (3.0, 3.0, 3.0), 1.0),)
    )
    with pytest.raises(EllipsoidOutOfBounds):
        make_phantom(spec)


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

def test_click_on_noiseless_lesion_center_dice_one():
    volume, truth = make_phantom(sphere_spec())
    prompt = ClickPrompt((ClickPoint(16, 16, 16, True),))
    pred = segment(volume, prompt)
    assert dice(pred.binarize(), truth) == 1.0


def test_positive_click_in_background_excludes_lesion():
    volume, truth = make_phantom(sphere_spec())
    pred = segment(volume, ClickPrompt((ClickPoint(1, 1, 1, True),)))
    overlap = (pred.binarize().voxels * truth.voxels).sum()
    assert overlap == 0
    assert pred.foreground_count() > 0  # it segmented the background plateau


def test_noisy_phantom_center_click_dice_high():
    contrast = 1.0
    spec = sphere_spec(radius=9.0, sigma=0.05 * contrast, seed=3)
    volume, truth = make_phantom(spec)
    backend_cfg = SegmenterConfig(tau=0.5 * contrast)
    from sonoplan.segtool import ReferenceBackend

    pred = ReferenceBackend(backend_cfg).segment(
        volume, ClickPrompt((ClickPoint(16, 16, 16, True),))
    )
    assert dice(pred.binarize(), truth) >= 0.95


def test_negative_click_removes_region():
    volume, truth = make_phantom(sphere_spec())
    both = ClickPrompt(
        (ClickPoint(16, 16, 16, True), ClickPoint(16, 16, 16, False))
    )
    pred = segment(volume, both)
    assert pred.foreground_count() == 0


def test_bbox_prompt_clips_to_box():
    volume, truth = make_phantom(sphere_spec(radius=8.0))
    pred = segment(volume, BBoxPrompt((10, 10, 10), (22, 22, 22)))
    coords = np.argwhere(pred.voxels >= 0.5)
    assert coords.min() >= 10 and coords.max() <= 22
    assert pred.foreground_count() > 0


def test_prompt_out_of_bounds():
    volume, _ = make_phantom(sphere_spec(dims=(16, 16, 16), radius=5.0))
    with pytest.raises(PromptOutOfBounds):
        segment(volume, ClickPrompt((ClickPoint(99, 0, 0, True),)))


def test_click_requires_positive_seed():
    with pytest.raises(NoPositiveSeed):
        ClickPrompt((ClickPoint(1, 1, 1, False),))


def test_segment_output_dims_match_volume():
    volume, _ = make_phantom(sphere_spec())
    pred = segment(volume, AutonomyPrompt())
    assert pred.dims == volume.dims


# ---------------------------------------------------------------------------
# autonomy detection
# ---------------------------------------------------------------------------

def two_blob_phantom():
    dims = (40, 20, 20)
    return make_phantom(
        PhantomSpec(
            dims,
            SPACING,
            (
                Ellipsoid((10.0, 10.0, 10.0), (6.0, 6.0, 6.0), 1.0),
                Ellipsoid((30.0, 10.0, 10.0), (4.0, 4.0, 4.0), 1.0),
            ),
        )
    )


def test_autonomy_detect_two_boxes_largest_first():
    volume, _ = two_blob_phantom()
    boxes = autonomy_detect(volume, theta=0.5, min_voxels=10)
    assert len(boxes) == 2
    size0 = np.prod([h - l + 1 for l, h in zip(boxes[0].lo, boxes[0].hi)])
    size1 = np.prod([h - l + 1 for l, h in zip(boxes[1].lo, boxes[1].hi)])
    assert size0 > size1
    assert boxes[0].lo[0] < 20  # the large blob sits at low x


def test_autonomy_detect_matches_component_count():
    volume, _ = two_blob_phantom()
    fg = volume.voxels >= 0.5
    assert oracles.connected_components(fg, 6) == 2


def test_autonomy_detect_empty_volume():
    volume = Volume((8, 8, 8), SPACING, np.zeros((8, 8, 8), np.float32))
    assert autonomy_detect(volume, theta=0.5, min_voxels=1) == []


def test_autonomy_detect_min_voxels_filter():
    vox = np.zeros((8, 8, 8), np.float32)
    vox[2, 2, 2] = 1.0
    volume = Volume((8, 8, 8), SPACING, vox)
    assert autonomy_detect(volume, theta=0.5, min_voxels=2) == []


def test_autonomy_segments_both_lesions():
    volume, truth = two_blob_phantom()
    pred = segment(volume, AutonomyPrompt())
    assert dice(pred.binarize(), truth) == 1.0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_dice_identity_and_hand_counts():
    dims = (3, 3, 1)
    a = _mask(dims, [(0, 0, 0), (1, 0, 0)])
    b = _mask(dims, [(0, 0, 0)])
    assert dice(a, a) == 1.0
    assert dice(a, b) == pytest.approx(2 / 3)
    assert iou(a, b) == pytest.approx(1 / 2)


def test_dice_disjoint_zero_and_both_empty_one():
    dims = (2, 2, 1)
    a = _mask(dims, [(0, 0, 0)])
    b = _mask(dims, [(1, 1, 0)])
    empty = _mask(dims, [])
    assert dice(a, b) == 0.0
    assert dice(empty, empty) == 1.0
    assert iou(empty, empty) == 1.0


def test_dice_dim_mismatch():
    with pytest.raises(DimMismatch):
        dice(_mask((2, 2, 1), []), _mask((2, 2, 2), []))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_iou_dice_identity_random_masks(seed):
    rng = np.random.default_rng(seed)
    dims = (4, 4, 4)
    a = Mask(dims, SPACING, (rng.random(dims) < 0.5).astype(np.float32))
    b = Mask(dims, SPACING, (rng.random(dims) < 0.5).astype(np.float32))
    d = dice(a, b)
    assert iou(a, b) == pytest.approx(d / (2.0 - d))
    assert dice(a, b) == dice(b, a)


# ---------------------------------------------------------------------------
# composite loss
# ---------------------------------------------------------------------------

def test_loss_perfect_prediction_near_zero():
    dims = (3, 3, 3)
    rng = np.random.default_rng(0)
    g = (rng.random(dims) < 0.5).astype(np.float32)
    gt = Mask(dims, SPACING, g)
    loss = composite_loss(Mask(dims, SPACING, g), gt)
    assert loss <= -math.log(1 - 1e-7) * 1.01 + 1e-12


def test_loss_uniform_half_is_ln2():
    dims = (4, 4, 4)
    pred = Mask(dims, SPACING, np.full(dims, 0.5, np.float32))
    gt = Mask(dims, SPACING, np.zeros(dims, np.float32))
    assert composite_loss(pred, gt, lambda_dice=0.0, lambda_ce=1.0) == pytest.approx(
        math.log(2)
    )


def test_loss_disjoint_hard_masks_dice_term_one():
    dims = (2, 1, 1)
    pred = _mask(dims, [(0, 0, 0)])
    gt = _mask(dims, [(1, 0, 0)])
    assert composite_loss(pred, gt, lambda_dice=1.0, lambda_ce=0.0) == pytest.approx(1.0)


def test_loss_monotone_toward_truth():
    dims = (4, 4, 4)
    rng = np.random.default_rng(5)
    g = (rng.random(dims) < 0.5).astype(np.float64)
    start = rng.random(dims)
    gt = Mask(dims, SPACING, g.astype(np.float32))
    losses = []
    for t in np.linspace(0.0, 1.0, 6):
        pred = Mask(dims, SPACING, ((1 - t) * start + t * g).astype(np.float32))
        losses.append(composite_loss(pred, gt))
    assert all(a >= b - 1e-4 for a, b in zip(losses, losses[1:]))


# ---------------------------------------------------------------------------
# geometric descriptors
# ---------------------------------------------------------------------------

def test_single_voxel_volume_and_centroid():
    dims = (4, 4, 4)
    spacing = (1.0, 2.0, 3.0)
    volume = Volume(dims, spacing, np.zeros(dims, np.float32))
    mask = _mask(dims, [(0, 0, 0)], spacing)
    obs = geometric_descriptors(mask, volume)
    assert obs.lesion_volume_mm3 == pytest.approx(6.0)
    assert obs.centroid_mm == pytest.approx((0.5, 1.0, 1.5))
    assert obs.multiplicity == 1


def test_oar_distance_ten_voxels_on_x():
    dims = (16, 4, 4)
    volume = Volume(dims, SPACING, np.zeros(dims, np.float32))
    lesion = _mask(dims, [(2, 1, 1)])
    oar = _mask(dims, [(12, 1, 1)])
    obs = geometric_descriptors(lesion, volume, [oar])
    assert obs.oar_min_distance_mm[0] == pytest.approx(10.0)


def test_oar_distance_matches_brute_force(rng):
    dims = (7, 7, 7)
    spacing = (1.0, 1.5, 2.0)
    volume = Volume(dims, spacing, np.zeros(dims, np.float32))
    for _ in range(10):
        a = rng.random(dims) < 0.15
        b = rng.random(dims) < 0.15
        if not a.any() or not b.any():
            continue
        lesion = Mask(dims, spacing, a.astype(np.float32))
        oar = Mask(dims, spacing, b.astype(np.float32))
        obs = geometric_descriptors(lesion, volume, [oar])
        pa = np.argwhere(a) * np.asarray(spacing)
        pb = np.argwhere(b) * np.asarray(spacing)
        brute = min(
            float(np.sqrt(((p - q) ** 2).sum())) for p in pa for q in pb
        )
        assert obs.oar_min_distance_mm[0] == pytest.approx(brute)


def test_multiplicity_two_components():
    dims = (8, 4, 4)
    volume = Volume(dims, SPACING, np.zeros(dims, np.float32))
    mask = _mask(dims, [(0, 0, 0), (5, 2, 2)])
    obs = geometric_descriptors(mask, volume)
    assert obs.multiplicity == 2
    assert oracles.connected_components(mask.voxels >= 0.5, 6) == 2
    assert [c.lesion_id for c in obs.components] == ["L1", "L2"]


def test_empty_oar_serializes_none():
    dims = (4, 4, 4)
    volume = Volume(dims, SPACING, np.zeros(dims, np.float32))
    mask = _mask(dims, [(1, 1, 1)])
    empty_oar = _mask(dims, [])
    obs = geometric_descriptors(mask, volume, [empty_oar])
    assert math.isinf(obs.oar_min_distance_mm[0])
    assert "oar_min_distance_mm=none" in obs.to_block()


# ---------------------------------------------------------------------------
# prompt grammar
# ---------------------------------------------------------------------------

def test_parse_prompt_specs():
    assert isinstance(parse_prompt_spec("auto"), AutonomyPrompt)
    click = parse_prompt_spec("click:1,2,3,+;4,5,6,-")
    assert click.points[0] == ClickPoint(1, 2, 3, True)
    assert click.points[1] == ClickPoint(4, 5, 6, False)
    box = parse_prompt_spec("bbox:5,5,5,1,1,1")
    assert box.lo == (1, 1, 1) and box.hi == (5, 5, 5)
    with pytest.raises(ValueError):
        parse_prompt_spec("blob:1,2")
