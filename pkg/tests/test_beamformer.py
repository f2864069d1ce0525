import numpy as np
import pytest

from pwdoppler.acquisition import ImageGrid, desk_config
from pwdoppler.beamformer import (AnalyticImageStack, ApodizationSpec,
                                  analytic_signal, beamform_stack,
                                  das_beamform)
from pwdoppler.simulator import (PhantomScene, PulseSpec, Scatterer,
                                 synthesize_sequence)


def circular_hilbert_kernel(n):
    """Time-domain kernel of the periodic discrete Hilbert transform."""
    k = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        if n % 2 == 0:
            h = np.where(k % 2 == 1, 2.0 / (n * np.tan(np.pi * k / n)), 0.0)
        else:
            h = ((np.cos(np.pi * k / n) - np.cos(np.pi * k))
                 / (n * np.sin(np.pi * k / n)))
    h[0] = 0.0
    return h


class TestAnalyticSignal:
    def test_pure_tone_envelope_is_one(self):
        fs, f = 50e6, 5e6
        t = np.arange(4096) / fs
        z = analytic_signal(np.cos(2 * np.pi * f * t))
        interior = np.abs(z[1024:-1024])
        np.testing.assert_allclose(interior, 1.0, atol=1e-3)

    def test_zero_trace(self):
        z = analytic_signal(np.zeros(100))
        assert np.all(z == 0)
        assert z.dtype == np.complex128

    def test_real_part_equals_input(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=777)
        z = analytic_signal(x)
        np.testing.assert_allclose(z.real, x, rtol=0,
                                   atol=1e-9 * np.abs(x).max())

    @pytest.mark.parametrize("n", [256, 511])
    def test_matches_time_domain_kernel(self, n):
        # independent oracle: circular convolution with the periodic kernel
        rng = np.random.default_rng(4)
        x = rng.normal(size=n)
        h = circular_hilbert_kernel(n)
        oracle = np.real(np.fft.ifft(np.fft.fft(x) * np.fft.fft(h)))
        z = analytic_signal(x)
        np.testing.assert_allclose(z.imag, oracle,
                                   atol=1e-6 * np.abs(oracle).max())

    def test_length_one_passthrough(self):
        z = analytic_signal(np.array([2.5]))
        assert z[0] == 2.5 + 0.0j


@pytest.fixture(scope="module")
def point_setup():
    cfg = desk_config()
    pulse = PulseSpec(5e6)
    scene = PhantomScene((Scatterer((1e-3, 14e-3), 1.0),), 0.0, 5)
    data = synthesize_sequence(scene, cfg, pulse, 1)
    grid = ImageGrid(-4e-3, 4e-3, 11e-3, 17e-3, 51, 61)
    return cfg, data, grid


class TestDasBeamform:
    def test_point_target_peak_location_and_level(self, point_setup):
        cfg, data, grid = point_setup
        img = np.abs(das_beamform(data, grid, frame=0, angle=2))
        peak = np.unravel_index(np.argmax(img), img.shape)
        dx = grid.x_axis()[1] - grid.x_axis()[0]
        dz = grid.z_axis()[1] - grid.z_axis()[0]
        assert abs(grid.x_axis()[peak[1]] - 1e-3) <= dx
        assert abs(grid.z_axis()[peak[0]] - 14e-3) <= dz
        assert 20 * np.log10(img[peak] / np.median(img)) >= 20.0

    def test_zero_input_zero_image(self, point_setup):
        cfg, data, grid = point_setup
        zero = synthesize_sequence(PhantomScene((), 0.0, 1), cfg,
                                   PulseSpec(5e6), 1,
                                   sample_count=data.sample_count)
        img = das_beamform(zero, grid, frame=0, angle=0)
        assert np.all(img == 0)

    def test_all_ones_mask_equals_no_mask(self, point_setup):
        cfg, data, grid = point_setup
        base = das_beamform(data, grid, frame=0, angle=1)
        masked = das_beamform(data, grid, frame=0, angle=1,
                              element_mask=np.ones(cfg.num_elements, bool))
        np.testing.assert_allclose(masked, base, rtol=1e-12)

    def test_all_masked_rejected(self, point_setup):
        cfg, data, grid = point_setup
        with pytest.raises(ValueError, match="masked"):
            das_beamform(data, grid, frame=0, angle=0,
                         element_mask=np.zeros(cfg.num_elements, bool))

    def test_linearity(self, point_setup):
        cfg, data, grid = point_setup
        rng = np.random.default_rng(8)
        s1 = rng.normal(size=data.samples.shape[2:]).astype(np.float64)
        s2 = rng.normal(size=data.samples.shape[2:]).astype(np.float64)
        from pwdoppler.beamformer import DasOperator
        op = DasOperator(cfg, grid, ApodizationSpec(), data.t0)
        a, b = 2.25, -0.75
        combined = op.beamform(a * s1 + b * s2, 0)
        separate = a * op.beamform(s1, 0) + b * op.beamform(s2, 0)
        scale = np.abs(separate).max()
        np.testing.assert_allclose(combined, separate, rtol=0,
                                   atol=1e-9 * scale)

    def test_lateral_shift_moves_peak_by_grid_cells(self):
        cfg = desk_config()
        pulse = PulseSpec(5e6)
        nx = 17
        x0 = -8 * cfg.pitch
        grid = ImageGrid(x0, x0 + (nx - 1) * cfg.pitch, 12e-3, 16e-3, nx, 41)
        cols = []
        for k in (0, 3):
            scene = PhantomScene((Scatterer((k * cfg.pitch, 14e-3), 1.0),),
                                 0.0, 5)
            data = synthesize_sequence(scene, cfg, pulse, 1)
            img = np.abs(das_beamform(data, grid, frame=0, angle=2))
            cols.append(np.unravel_index(np.argmax(img), img.shape)[1])
        assert cols[1] - cols[0] == 3

    def test_unnormalized_subaperture_sum(self, point_setup):
        cfg, data, grid = point_setup
        mask1 = np.arange(cfg.num_elements) % 2 == 0
        full = das_beamform(data, grid, frame=0, angle=2, normalize=False)
        part1 = das_beamform(data, grid, frame=0, angle=2,
                             element_mask=mask1, normalize=False)
        part2 = das_beamform(data, grid, frame=0, angle=2,
                             element_mask=~mask1, normalize=False)
        np.testing.assert_allclose(part1 + part2, full, rtol=0,
                                   atol=1e-9 * np.abs(full).max())

    def test_f_number_restricts_aperture(self, point_setup):
        cfg, data, grid = point_setup
        wide = das_beamform(data, grid, frame=0, angle=2)
        narrow = das_beamform(data, grid,
                              ApodizationSpec(f_number=2.0), frame=0, angle=2)
        assert not np.allclose(wide, narrow)


class TestBeamformStack:
    def test_shape_contract(self):
        cfg = desk_config(n_angles=3)
        pulse = PulseSpec(5e6)
        scene = PhantomScene((Scatterer((0.0, 12e-3), 1.0),), 0.0, 3)
        data = synthesize_sequence(scene, cfg, pulse, 2)
        grid = ImageGrid(-2e-3, 2e-3, 10e-3, 14e-3, 9, 11)
        stack = beamform_stack(data, grid)
        assert stack.values.shape == (2, 3, 11, 9)
        assert stack.values.shape[2] * stack.values.shape[3] == 9 * 11

    def test_identical_frames_identical_images(self, point_setup):
        cfg, data, grid = point_setup
        doubled = np.concatenate([data.samples, data.samples], axis=0)
        from pwdoppler.acquisition import ChannelDataSet
        two = ChannelDataSet(config=cfg, samples=doubled, t0=data.t0)
        stack = beamform_stack(two, grid)
        np.testing.assert_array_equal(stack.values[0], stack.values[1])

    def test_equals_individual_das_calls(self, point_setup):
        cfg, data, grid = point_setup
        stack = beamform_stack(data, grid)
        for a in range(len(cfg.angles)):
            single = das_beamform(data, grid, frame=0, angle=a)
            np.testing.assert_array_equal(stack.values[0, a], single)

    def test_stack_validation(self):
        grid = ImageGrid(-1e-3, 1e-3, 1e-3, 2e-3, 4, 5)
        with pytest.raises(ValueError, match="angle dimension"):
            AnalyticImageStack(grid=grid,
                               values=np.zeros((1, 2, 5, 4), complex),
                               angle_list=(0.0,))
        with pytest.raises(ValueError, match="pixel dimensions"):
            AnalyticImageStack(grid=grid,
                               values=np.zeros((1, 1, 4, 4), complex),
                               angle_list=(0.0,))


class TestApodizationSpec:
    def test_windows(self):
        assert np.all(ApodizationSpec().weights(8) == 1.0)
        hann = ApodizationSpec(window="hann").weights(16)
        assert hann.max() <= 1.0 and hann[0] == 0.0
        tuk = ApodizationSpec(window="tukey", alpha=0.25).weights(16)
        assert tuk.max() == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            ApodizationSpec(window="boxcar")
        with pytest.raises(ValueError):
            ApodizationSpec(alpha=2.0)
        with pytest.raises(ValueError):
            ApodizationSpec(f_number=-1.0)
