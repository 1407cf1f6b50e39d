"""PSNR/SSIM identities, sentinel handling, and aggregation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmi.errors import ContractError, ShapeError
from flowmi.metrics import (
    AggregateStats,
    aggregate,
    build_report,
    gaussian_window,
    mse,
    mse_to_psnr,
    psnr,
    ssim,
    ssim_percent,
)
from flowmi.rng import Rng


# ---------------------------------------------------------------------------
# MSE / PSNR


def test_mse_example_and_shape_check():
    assert mse(np.array([1.0, 2.0]), np.array([0.0, 4.0])) == pytest.approx(2.5)
    with pytest.raises(ShapeError):
        mse(np.zeros(2), np.zeros(3))


def test_mse_to_psnr_exact_decades():
    assert mse_to_psnr(0.01) == pytest.approx(20.0, abs=1e-12)
    assert mse_to_psnr(0.0001) == pytest.approx(40.0, abs=1e-12)
    assert mse_to_psnr(1.0) == pytest.approx(0.0, abs=1e-12)


def test_psnr_scales_with_max_val():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert psnr(a, b, max_val=2.0) == pytest.approx(psnr(a, b) + 20.0 * math.log10(2.0), abs=1e-12)


def test_psnr_identical_images_is_the_inf_sentinel():
    img = Rng(5).uniforms(16).reshape(4, 4)
    assert psnr(img, img) == math.inf


def test_psnr_rejects_bad_arguments():
    with pytest.raises(ContractError):
        mse_to_psnr(0.1, max_val=0.0)
    with pytest.raises(ContractError):
        mse_to_psnr(-0.1)


# ---------------------------------------------------------------------------
# SSIM


def test_gaussian_window_normalized_and_symmetric():
    w = gaussian_window(7, 1.5)
    assert w.shape == (7, 7)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w, w.T, atol=1e-15)
    assert np.allclose(w, w[::-1, ::-1], atol=1e-15)
    assert w[3, 3] == w.max()


def test_gaussian_window_rejects_even_or_nonpositive_size():
    with pytest.raises(ContractError):
        gaussian_window(6)
    with pytest.raises(ContractError):
        gaussian_window(0)


def test_ssim_self_similarity_is_one():
    img = Rng(7).uniforms(256).reshape(16, 16)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_is_symmetric():
    a = Rng(8).uniforms(256).reshape(16, 16)
    b = Rng(9).uniforms(256).reshape(16, 16)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


def test_ssim_constant_images_closed_form():
    # constant images have zero variance, so SSIM reduces to the luminance
    # term (2 mu_x mu_y + c1) / (mu_x^2 + mu_y^2 + c1)
    a = np.full((8, 8), 0.25)
    b = np.full((8, 8), 0.75)
    c1 = 0.01 ** 2
    want = (2 * 0.25 * 0.75 + c1) / (0.25 ** 2 + 0.75 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(want, abs=1e-12)


def test_ssim_penalizes_noise():
    clean = Rng(10).uniforms(256).reshape(16, 16)
    noisy = clean + 0.2 * Rng(11).normals(256).reshape(16, 16)
    assert ssim(clean, noisy) < 0.95


def test_ssim_bounded_by_one_in_magnitude():
    for seed in range(6):
        a = Rng(seed).uniforms(144).reshape(12, 12)
        b = Rng(seed + 100).uniforms(144).reshape(12, 12)
        assert -1.0 - 1e-9 <= ssim(a, b) <= 1.0 + 1e-9


def test_ssim_rescaling_with_data_range_is_consistent():
    a = Rng(12).uniforms(256).reshape(16, 16)
    b = Rng(13).uniforms(256).reshape(16, 16)
    assert ssim(2.0 * a, 2.0 * b, data_range=2.0) == pytest.approx(
        ssim(a, b), abs=1e-9
    )


def test_ssim_window_and_shape_errors():
    img = np.zeros((16, 16))
    with pytest.raises(ContractError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))  # smaller than the window
    with pytest.raises(ShapeError):
        ssim(img, np.zeros((8, 8)))
    with pytest.raises(ShapeError):
        ssim(np.zeros(16), np.zeros(16))
    with pytest.raises(ContractError):
        ssim(img, img, data_range=0.0)


def test_ssim_percent_is_one_hundred_times_ssim():
    a = Rng(14).uniforms(256).reshape(16, 16)
    b = Rng(15).uniforms(256).reshape(16, 16)
    assert ssim_percent(a, b) == pytest.approx(100.0 * ssim(a, b), abs=1e-12)


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_two_values():
    stats = aggregate([20.0, 30.0])
    assert stats.mean == pytest.approx(25.0, abs=1e-3)
    assert stats.std == pytest.approx(math.sqrt(50.0), abs=1e-3)
    assert stats.n == 2
    assert not stats.flagged


def test_aggregate_infinite_sentinel_dominates_mean_not_std():
    stats = aggregate([20.0, math.inf, 30.0])
    assert stats.mean == math.inf
    assert stats.std == pytest.approx(math.sqrt(50.0), abs=1e-9)
    assert stats.n == 3
    assert not stats.flagged


def test_aggregate_flags_underdetermined_std():
    lone = aggregate([7.0])
    assert lone.flagged and lone.std == 0.0 and lone.mean == 7.0
    infs = aggregate([math.inf, math.inf])
    assert infs.flagged and infs.std == 0.0 and infs.mean == math.inf


def test_aggregate_rejects_empty():
    with pytest.raises(ContractError):
        aggregate([])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-100, max_value=100), min_size=2, max_size=20))
def test_aggregate_matches_numpy_on_finite_data(values):
    stats = aggregate(values)
    assert stats.mean == pytest.approx(np.mean(values), abs=1e-9)
    assert stats.std == pytest.approx(np.std(values, ddof=1), abs=1e-9)


def test_aggregate_stats_json_shape():
    d = AggregateStats(mean=1.0, std=0.5, n=3, flagged=False).to_json_dict()
    assert d == {"mean": 1.0, "std": 0.5, "n": 3, "flagged": False}


# ---------------------------------------------------------------------------
# reports


def test_build_report_aggregates_both_columns():
    samples = [
        {"study_id": "a", "modality": "CT", "psnr_db": 20.0, "ssim_percent": 80.0},
        {"study_id": "b", "modality": "CT", "psnr_db": 30.0, "ssim_percent": 90.0},
    ]
    report = build_report("CT->CTC", "flowmi", samples)
    assert report.psnr.mean == pytest.approx(25.0)
    assert report.ssim.mean == pytest.approx(85.0)
    assert report.to_json_dict()["aggregate"]["n"] == 2
    with pytest.raises(ContractError):
        build_report("CT->CTC", "flowmi", [])
