"""Phantom generator invariants: contrast physics, masks, normalizers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmi.errors import ContractError
from flowmi.phantom import (
    FAMILIES,
    Modality,
    PhantomSpec,
    family_of,
    generate_study,
    normalize_ct,
    normalize_mr,
)
from flowmi.rng import Rng


def _noiseless_spec(**overrides):
    return PhantomSpec(noise_sigma=0.0, **overrides)


# ---------------------------------------------------------------------------
# rendering invariants


def test_ct_equals_ctc_when_contrast_weight_is_zero():
    spec = _noiseless_spec(ct_weight=0.0)
    study = generate_study(Rng(3), spec, "ct_pair", 0)
    assert np.array_equal(study.images[Modality.CT], study.images[Modality.CTC])


def test_ctc_minus_ct_is_supported_exactly_on_the_lesion():
    spec = _noiseless_spec()
    study = generate_study(Rng(9), spec, "ct_pair", 1)
    diff = study.images[Modality.CTC] - study.images[Modality.CT]
    lesion = study.lesion_mask
    assert np.all(diff[~lesion] == 0.0)
    assert np.all(diff[lesion] > 0.0)


def test_dce_lesion_means_follow_the_weight_curve():
    # wash-in / peak / wash-out: phase 2 brightest, then 3, then 1
    spec = _noiseless_spec()
    study = generate_study(Rng(4), spec, "dce_triplet", 0)
    lesion = study.lesion_mask
    m1 = study.images[Modality.DCE1][lesion].mean()
    m2 = study.images[Modality.DCE2][lesion].mean()
    m3 = study.images[Modality.DCE3][lesion].mean()
    assert m2 > m3 > m1


def test_modalities_share_anatomy_outside_the_lesion():
    spec = _noiseless_spec()
    study = generate_study(Rng(5), spec, "dce_triplet", 2)
    outside = ~study.lesion_mask
    base = study.images[Modality.DCE1][outside]
    for m in (Modality.DCE2, Modality.DCE3):
        assert np.array_equal(study.images[m][outside], base)


def test_lesion_support_is_inside_the_organ_support():
    for seed in range(12):
        study = generate_study(Rng(seed), PhantomSpec(), "ct_pair", seed % 3)
        assert np.all(study.organ_mask[study.lesion_mask])


def test_images_are_clipped_to_unit_range():
    spec = PhantomSpec(noise_sigma=0.3)  # plenty of clipping on both ends
    study = generate_study(Rng(1), spec, "ct_pair", 0)
    for img in study.images.values():
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_generate_study_is_deterministic_in_the_rng():
    a = generate_study(Rng(77), PhantomSpec(), "dce_triplet", 1, study_id="x")
    b = generate_study(Rng(77), PhantomSpec(), "dce_triplet", 1, study_id="x")
    for m in FAMILIES["dce_triplet"]:
        assert np.array_equal(a.images[m], b.images[m])
    assert np.array_equal(a.lesion_mask, b.lesion_mask)


def test_organ_class_stretches_the_horizontal_axis():
    spec = _noiseless_spec(center_jitter=0.0, axis_jitter=0.0,
                           radius_jitter=0.0, intensity_jitter=0.0)
    narrow = generate_study(Rng(2), spec, "ct_pair", 0)
    wide = generate_study(Rng(2), spec, "ct_pair", 2)
    assert wide.organ_mask.sum() > narrow.organ_mask.sum()


def test_generate_study_rejects_unknown_family():
    with pytest.raises(ContractError):
        generate_study(Rng(0), PhantomSpec(), "pet_pair", 0)


def test_placement_failure_raises_for_impossible_geometry():
    spec = PhantomSpec(lesion_radius=20.0, radius_jitter=0.0)
    with pytest.raises(ContractError):
        generate_study(Rng(0), spec, "ct_pair", 0)


# ---------------------------------------------------------------------------
# spec plumbing


def test_family_of_maps_every_modality():
    assert family_of(Modality.CT) == "ct_pair"
    assert family_of(Modality.CTC) == "ct_pair"
    for m in (Modality.DCE1, Modality.DCE2, Modality.DCE3):
        assert family_of(m) == "dce_triplet"


def test_enhancement_weights_per_modality():
    spec = PhantomSpec(dce_weights=(0.2, 0.9, 0.5), ct_weight=0.8)
    assert spec.enhancement_weight(Modality.CT) == 0.0
    assert spec.enhancement_weight(Modality.CTC) == 0.8
    assert spec.enhancement_weight(Modality.DCE1) == 0.2
    assert spec.enhancement_weight(Modality.DCE2) == 0.9
    assert spec.enhancement_weight(Modality.DCE3) == 0.5


def test_spec_round_trips_through_dict():
    spec = PhantomSpec(grid=24, lesion_radius=3.1, dce_weights=(0.1, 0.8, 0.2))
    again = PhantomSpec.from_dict(spec.to_dict())
    assert again == spec


@pytest.mark.parametrize(
    "overrides",
    [
        {"grid": 4},
        {"organ_intensity": 0.0},
        {"lesion_radius": -1.0},
        {"enhancement": -0.1},
        {"dce_weights": (0.9, 0.3, 0.6)},  # peak must be phase 2
        {"noise_sigma": -0.01},
        {"radius_jitter": -0.5},
    ],
)
def test_spec_validation_rejects_bad_values(overrides):
    spec = PhantomSpec(**overrides)
    with pytest.raises(ContractError):
        spec.validate()


# ---------------------------------------------------------------------------
# normalizers


def test_normalize_ct_window_endpoints_and_midpoint():
    assert normalize_ct(np.array([-200.0])) == pytest.approx(0.0)
    assert normalize_ct(np.array([300.0])) == pytest.approx(1.0)
    assert normalize_ct(np.array([50.0])) == pytest.approx(0.5)
    # values beyond the window saturate
    assert normalize_ct(np.array([-500.0])) == pytest.approx(0.0)
    assert normalize_ct(np.array([900.0])) == pytest.approx(1.0)


def test_normalize_ct_is_monotone_inside_the_window():
    hu = np.linspace(-200.0, 300.0, 64)
    out = normalize_ct(hu)
    assert np.all(np.diff(out) > 0)


def test_normalize_ct_rejects_degenerate_window():
    with pytest.raises(ContractError):
        normalize_ct(np.zeros(3), window=(10.0, 10.0))


def test_normalize_mr_zero_mean_unit_std():
    img = Rng(8).uniforms(256).reshape(16, 16)
    out = normalize_mr(img)
    assert abs(out.mean()) < 1e-12
    assert abs(out.std() - 1.0) < 1e-12


def test_normalize_mr_constant_image_maps_to_zeros():
    assert np.array_equal(normalize_mr(np.full((4, 4), 3.7)), np.zeros((4, 4)))


def test_normalize_mr_two_point_image():
    out = normalize_mr(np.array([0.0, 2.0]))
    assert np.allclose(out, [-1.0, 1.0], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_normalize_mr_is_shift_and_scale_invariant(seed):
    img = Rng(seed).uniforms(64)
    a = normalize_mr(img)
    b = normalize_mr(4.0 * img + 11.0)
    assert np.allclose(a, b, atol=1e-9)
