import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pytest import approx

from src.errors import InvalidArgumentError, UndefinedMetricError
from src.task import (
    CPSNR_CAP_DB,
    DEFAULT_SIGMA_Y,
    DownsampleMode,
    InpaintingTask,
    PixelMask,
    build_task,
    cpsnr,
    downsample_mask,
)


def left_half_masked(size: int = 16, masked_cols: int = 8) -> PixelMask:
    bits = np.ones((size, size), dtype=np.uint8)
    bits[:, :masked_cols] = 0
    return PixelMask.from_array(bits)


class TestInpaintingTask:
    def test_build_from_index_set(self):
        task = build_task(np.array([1.0, 2.0, 3.0, 4.0]), [0, 1])
        assert task.masked.tolist() == [0, 1]
        assert task.observed.tolist() == [2, 3]
        assert task.y.tolist() == [3.0, 4.0]
        assert task.sigma_y == DEFAULT_SIGMA_Y == 0.01

    def test_build_from_bool_grid(self):
        grid = np.array([[True, False], [False, True]])
        task = build_task(np.arange(4.0), grid, sigma_y=0.2)
        assert task.masked.tolist() == [1, 2]
        assert task.y.tolist() == [0.0, 3.0]

    def test_empty_mask_observes_everything(self):
        x = np.array([0.5, -1.0, 2.0])
        task = build_task(x, [])
        assert np.array_equal(task.y, x)
        assert not task.unconditional

    def test_full_mask_is_unconditional(self):
        task = build_task(np.zeros(3), [0, 1, 2])
        assert task.unconditional
        assert task.observed_mask.tolist() == [False, False, False]

    def test_projection_selects_observed(self):
        task = build_task(np.array([5.0, 6.0, 7.0]), [1])
        assert task.projection() @ np.array([5.0, 6.0, 7.0]) == approx([5.0, 7.0])

    def test_residual(self):
        task = build_task(np.array([1.0, 2.0, 3.0]), [1])
        assert task.residual(np.array([1.5, 0.0, 2.0])).tolist() == [0.5, 1.0]

    @pytest.mark.parametrize("kwargs", [
        dict(d=3, masked=[0], observed=[1], y=[0.0]),
        dict(d=2, masked=[0], observed=[0, 1], y=[0.0, 0.0]),
        dict(d=2, masked=[1, 0], observed=[], y=[]),
        dict(d=2, masked=[0], observed=[1], y=[0.0, 1.0]),
        dict(d=2, masked=[0], observed=[1], y=[0.0], sigma_y=0.0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            InpaintingTask(**kwargs)

    def test_out_of_range_mask(self):
        with pytest.raises(InvalidArgumentError):
            InpaintingTask.from_masked(3, [3], np.zeros(3))


class TestDownsample:
    def test_all_observed(self):
        latent = downsample_mask(PixelMask.from_array(np.ones((16, 16))), 8)
        assert latent.shape == (2, 2)
        assert latent.all()

    def test_left_half_masked(self):
        latent = downsample_mask(left_half_masked(), 8)
        assert latent.tolist() == [[False, True], [False, True]]

    @pytest.mark.parametrize("threshold, observed", [(0.5, True), (0.6, True), (0.95, False)])
    def test_threshold(self, threshold, observed):
        bits = np.zeros((10, 10), dtype=np.uint8)
        bits[:6] = 1
        latent = downsample_mask(PixelMask.from_array(bits), 10, threshold=threshold)
        assert latent.tolist() == [[observed]]

    def test_factor_one_is_identity(self):
        bits = np.random.default_rng(0).integers(0, 2, size=(4, 6))
        assert np.array_equal(downsample_mask(PixelMask.from_array(bits), 1), bits.astype(bool))

    def test_not_divisible(self):
        with pytest.raises(InvalidArgumentError):
            downsample_mask(PixelMask.from_array(np.ones((10, 10))), 3)

    def test_bad_threshold(self):
        with pytest.raises(InvalidArgumentError):
            downsample_mask(left_half_masked(), 8, threshold=0.0)

    def test_bilinear_all_observed(self):
        latent = downsample_mask(PixelMask.from_array(np.ones((16, 16))), 8, DownsampleMode.BILINEAR, threshold=0.95)
        assert latent.all()

    def test_bilinear_widens_masked_region(self):
        # the right column's receptive field overlaps 4 masked pixel columns
        strict = downsample_mask(left_half_masked(), 8, "bilinear", threshold=0.95)
        assert not strict.any()
        loose = downsample_mask(left_half_masked(), 8, "bilinear", threshold=0.5)
        assert loose.tolist() == [[False, True], [False, True]]

    def test_bits_must_be_binary(self):
        with pytest.raises(InvalidArgumentError):
            PixelMask.from_array(np.full((2, 2), 2))

    @settings(deadline=None, max_examples=100)
    @given(
        st.integers(0, 2 ** 32 - 1),
        st.sampled_from(list(DownsampleMode)),
        st.sampled_from([0.3, 0.5, 0.95]),
    )
    def test_masking_more_pixels_never_observes_more(self, seed, mode, threshold):
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, size=(16, 16))
        fewer = bits.copy()
        ones = np.argwhere(fewer == 1)
        if len(ones):
            flip = ones[rng.choice(len(ones), size=max(1, len(ones) // 4), replace=False)]
            fewer[flip[:, 0], flip[:, 1]] = 0
        before = downsample_mask(PixelMask.from_array(bits), 4, mode, threshold)
        after = downsample_mask(PixelMask.from_array(fewer), 4, mode, threshold)
        assert not np.any(after & ~before)


class TestCpsnr:
    def test_perfect_reconstruction_is_capped(self):
        task = build_task(np.array([0.0, 1.0, 0.5]), [2])
        assert cpsnr(task.x_star, task) == CPSNR_CAP_DB

    def test_constant_error(self):
        task = build_task(np.array([0.0, 1.0, 0.5]), [2])
        assert cpsnr(task.x_star + 0.1, task, peak=1.0) == approx(20.0)

    def test_ignores_masked_coordinates(self):
        task = build_task(np.array([0.0, 1.0, 0.5]), [2])
        x_hat = task.x_star.copy()
        x_hat[2] = 100.0
        assert cpsnr(x_hat, task) == CPSNR_CAP_DB

    def test_unconditional(self):
        with pytest.raises(UndefinedMetricError):
            cpsnr(np.zeros(2), build_task(np.zeros(2), [0, 1]))

    def test_needs_reference(self):
        task = InpaintingTask.from_masked(2, [1], np.array([1.0]))
        with pytest.raises(UndefinedMetricError):
            cpsnr(np.zeros(2), task)
