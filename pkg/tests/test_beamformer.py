import math

import numpy as np
import pytest

from omnifuse.beamformer import (
    AngleGrid,
    Heatmap,
    beamform,
    dominant_bin_wavelength,
    normalize,
    read_heatmap_pfm,
    snapshot_from_audio,
    steering_table,
    write_heatmap_pfm,
    write_heatmap_png16,
)
from omnifuse.errors import InputError
from omnifuse.sensor_model import (
    ArrayGeometry,
    ArraySnapshot,
    AudioBlock,
    PointSource,
    circular_array,
    simulate_snapshot,
    steering_phase,
)

from oracles import oracle_grid_argmax, oracle_grid_db

MIC_GEO = circular_array(6, 0.05, 0.0857)
SMALL_GRID = AngleGrid(-40, 40, 21, -30, 30, 16)


class TestAngleGrid:
    def test_defaults(self):
        grid = AngleGrid()
        assert grid.shape == (61, 91)
        assert grid.az_axis()[0] == -45 and grid.az_axis()[-1] == 45

    def test_validation(self):
        with pytest.raises(InputError):
            AngleGrid(az_min_deg=10, az_max_deg=-10)
        with pytest.raises(InputError):
            AngleGrid(az_steps=1)
        with pytest.raises(InputError):
            AngleGrid(el_min_deg=-90)


class TestHeatmapType:
    def test_dimension_check(self):
        with pytest.raises(InputError):
            Heatmap(grid=AngleGrid(), values_db=np.zeros((5, 5)), floor_db=-120)

    def test_floor_check(self):
        grid = SMALL_GRID
        values = np.full(grid.shape, -200.0)
        with pytest.raises(InputError):
            Heatmap(grid=grid, values_db=values, floor_db=-120)

    def test_peak_lookup(self):
        values = np.full(SMALL_GRID.shape, -120.0)
        values[3, 7] = 5.0
        hm = Heatmap(grid=SMALL_GRID, values_db=values, floor_db=-120)
        peak_db, el_i, az_i = hm.peak()
        assert (peak_db, el_i, az_i) == (5.0, 3, 7)


class TestBeamform:
    def test_coherent_sum_of_six_unit_phasors(self):
        snap = ArraySnapshot(samples=np.ones(6, dtype=complex))
        hm = beamform(snap, MIC_GEO)
        i0 = np.argmin(np.abs(hm.grid.el_axis()))
        j0 = np.argmin(np.abs(hm.grid.az_axis()))
        assert hm.values_db[i0, j0] == pytest.approx(20 * math.log10(6), abs=1e-9)

    def test_all_zero_samples_floor_everywhere(self):
        snap = ArraySnapshot(samples=np.zeros(6, dtype=complex))
        hm = beamform(snap, MIC_GEO, floor_db=-97.0)
        assert (hm.values_db == -97.0).all()

    def test_localizes_known_source_against_oracle(self):
        # Exhaustive-evaluation oracle on the simulator scene pins the argmax.
        snap = simulate_snapshot(MIC_GEO, [PointSource(20.0, 10.0)], 0.0, seed=0)
        grid = AngleGrid()
        hm = beamform(snap, MIC_GEO, grid)
        az_hat, el_hat = hm.peak_angles()
        assert abs(az_hat - 20.0) <= 1.0 and abs(el_hat - 10.0) <= 1.0
        el_o, az_o = oracle_grid_argmax(list(snap.samples), MIC_GEO.elements, 0.0857,
                                        grid.az_axis(), grid.el_axis())
        assert (el_o, az_o) == (hm.peak()[1], hm.peak()[2])

    def test_matches_oracle_grid_values(self, rng):
        snap = simulate_snapshot(MIC_GEO, [PointSource(-12.0, 4.0, 1.5, 0.3)], 0.2, seed=5)
        hm = beamform(snap, MIC_GEO, SMALL_GRID)
        expected = oracle_grid_db(list(snap.samples), MIC_GEO.elements, 0.0857,
                                  SMALL_GRID.az_axis(), SMALL_GRID.el_axis())
        assert np.allclose(hm.values_db, expected, atol=1e-9)

    def test_k_mismatch_rejected(self):
        snap = ArraySnapshot(samples=np.ones(5, dtype=complex))
        with pytest.raises(InputError):
            beamform(snap, MIC_GEO)

    def test_non_finite_floor_rejected(self):
        snap = ArraySnapshot(samples=np.ones(6, dtype=complex))
        with pytest.raises(InputError):
            beamform(snap, MIC_GEO, floor_db=float("nan"))

    def test_on_grid_peak_value_exact(self, rng):
        # Noiseless on-grid source: peak == 20*log10(K * amplitude) within 1e-6 dB.
        grid = AngleGrid()
        az, el = grid.az_axis(), grid.el_axis()
        for _ in range(10):
            amp = float(rng.uniform(0.5, 2.0))
            ia, ie = int(rng.integers(0, len(az))), int(rng.integers(0, len(el)))
            snap = simulate_snapshot(MIC_GEO, [PointSource(az[ia], el[ie], amp)], 0.0,
                                     seed=int(rng.integers(2**31)))
            hm = beamform(snap, MIC_GEO, grid)
            assert hm.values_db[ie, ia] == pytest.approx(
                20 * math.log10(6 * amp), abs=1e-6)

    def test_global_phase_invariance(self, rng):
        snap = simulate_snapshot(MIC_GEO, [PointSource(8.0, -3.0)], 0.1, seed=2)
        hm1 = beamform(snap, MIC_GEO, SMALL_GRID)
        rotated = ArraySnapshot(samples=snap.samples * np.exp(1j * 1.234))
        hm2 = beamform(rotated, MIC_GEO, SMALL_GRID)
        assert np.abs(hm1.values_db - hm2.values_db).max() < 1e-9

    def test_amplitude_scaling_shifts_db(self):
        snap = simulate_snapshot(MIC_GEO, [PointSource(8.0, -3.0)], 0.05, seed=2)
        hm1 = beamform(snap, MIC_GEO, SMALL_GRID, floor_db=-300.0)
        scaled = ArraySnapshot(samples=snap.samples * 3.0)
        hm2 = beamform(scaled, MIC_GEO, SMALL_GRID, floor_db=-300.0)
        shift = 20 * math.log10(3.0)
        assert np.abs((hm2.values_db - hm1.values_db) - shift).max() < 1e-9
        assert hm1.peak()[1:] == hm2.peak()[1:]

    def test_steering_table_matches_scalar_op(self):
        table = steering_table(MIC_GEO, SMALL_GRID)
        az, el = SMALL_GRID.az_axis(), SMALL_GRID.el_axis()
        cell = 3 * SMALL_GRID.az_steps + 11  # el index 3, az index 11
        for k in range(6):
            expected = np.exp(-1j * steering_phase(MIC_GEO, k, az[11], el[3]))
            assert table.conj_phasors[cell, k] == pytest.approx(expected, abs=1e-12)


class TestNormalize:
    def test_formula_endpoints(self):
        values = np.full(SMALL_GRID.shape, -14.44)
        values[0, 0] = 15.56
        hm = Heatmap(grid=SMALL_GRID, values_db=values, floor_db=-120)
        out = normalize(hm, 30.0)
        assert out[0, 0] == pytest.approx(1.0)
        assert out[1, 1] == pytest.approx(0.0)

    def test_uniform_heatmap_is_all_ones(self):
        values = np.full(SMALL_GRID.shape, 3.0)
        hm = Heatmap(grid=SMALL_GRID, values_db=values, floor_db=-120)
        assert (normalize(hm, 40.0) == 1.0).all()

    def test_all_floor_heatmap_is_all_zeros(self):
        values = np.full(SMALL_GRID.shape, -120.0)
        hm = Heatmap(grid=SMALL_GRID, values_db=values, floor_db=-120)
        assert (normalize(hm, 40.0) == 0.0).all()

    def test_output_in_unit_interval(self, rng):
        values = np.maximum(rng.uniform(-80, 20, SMALL_GRID.shape), -120.0)
        hm = Heatmap(grid=SMALL_GRID, values_db=values, floor_db=-120)
        out = normalize(hm, 25.0)
        assert out.min() >= 0.0 and out.max() <= 1.0 and out.max() == 1.0

    def test_invariant_under_constant_db_offset(self, rng):
        values = rng.uniform(-60, 10, SMALL_GRID.shape)
        hm1 = Heatmap(grid=SMALL_GRID, values_db=values, floor_db=-120)
        hm2 = Heatmap(grid=SMALL_GRID, values_db=values + 17.5, floor_db=-120)
        assert np.abs(normalize(hm1, 30.0) - normalize(hm2, 30.0)).max() < 1e-9

    def test_two_symmetric_sources_normalize_equally(self):
        # Mirror-symmetric scene: the +az and -az peaks agree after normalization.
        snap = simulate_snapshot(MIC_GEO, [PointSource(20.0, 0.0), PointSource(-20.0, 0.0)],
                                 0.0, seed=0)
        grid = AngleGrid()
        hm = beamform(snap, MIC_GEO, grid)
        out = normalize(hm, 40.0)
        half = grid.az_steps // 2
        left_peak = out[:, :half].max()
        right_peak = out[:, half + 1:].max()
        assert abs(left_peak - right_peak) <= 0.05

    def test_bad_range_rejected(self):
        values = np.zeros(SMALL_GRID.shape)
        hm = Heatmap(grid=SMALL_GRID, values_db=values, floor_db=-120)
        with pytest.raises(InputError):
            normalize(hm, 0.0)


class TestDominantBin:
    @staticmethod
    def tone_block(freqs_amps, n=1024, rate=16000.0, channels=4):
        t = np.arange(n) / rate
        data = np.zeros((n, channels))
        for freq, amp in freqs_amps:
            data += amp * np.sin(2 * math.pi * freq * t)[:, None]
        return data

    def test_pure_tone_wavelength(self):
        data = self.tone_block([(1000.0, 1.0)])
        lam = dominant_bin_wavelength(data, 16000.0, speed_of_sound=343.0)
        bin_width_hz = 16000.0 / 1024
        f_est = 343.0 / lam
        assert abs(f_est - 1000.0) <= bin_width_hz

    def test_strongest_tone_wins(self):
        # 1 kHz at 1.0 plus 3 kHz at 0.1: oracle is the direct spectrum comparison.
        n, rate = 256, 16000.0
        f1 = round(1000.0 * n / rate) * rate / n
        f2 = round(3000.0 * n / rate) * rate / n
        data = self.tone_block([(f1, 1.0), (f2, 0.1)], n=n, rate=rate, channels=2)
        lam = dominant_bin_wavelength(data, rate)
        assert 343.0 / lam == pytest.approx(f1, abs=rate / n)
        from oracles import oracle_dft_bin_magnitudes
        mags = oracle_dft_bin_magnitudes([data[:, 0].tolist(), data[:, 1].tolist()])
        mags[0] = 0.0
        assert int(np.argmax(mags)) == round(f1 * n / rate)

    def test_silence_errors(self):
        with pytest.raises(InputError, match="no dominant frequency"):
            dominant_bin_wavelength(np.zeros((256, 4)), 16000.0)

    def test_too_short_block_rejected(self):
        with pytest.raises(InputError):
            dominant_bin_wavelength(np.zeros((32, 4)), 16000.0)

    def test_snapshot_from_audio_phases(self):
        # A delayed tone becomes a snapshot whose phases match the steering model.
        from omnifuse.sensor_model import _steering_phases_vec

        rate, n = 16000.0, 2048
        bin_idx = 512
        freq = bin_idx * rate / n
        lam = 343.0 / freq
        geo = circular_array(6, 0.05, lam)
        phases = _steering_phases_vec(geo, 25.0, -10.0)
        t = np.arange(n) / rate
        data = np.sin(2 * math.pi * freq * t[:, None] + phases[None, :])
        block = AudioBlock(samples=data, sample_rate=rate)
        snap, lam_est = snapshot_from_audio(block)
        assert lam_est == pytest.approx(lam, rel=1e-12)
        assert np.abs(np.abs(snap.samples) - 1.0).max() < 1e-9
        geo_est = ArrayGeometry(elements=geo.elements, wavelength=lam_est)
        hm = beamform(snap, geo_est)
        az_hat, el_hat = hm.peak_angles()
        assert abs(az_hat - 25.0) <= 1.0 and abs(el_hat + 10.0) <= 1.0


class TestHeatmapExport:
    def test_pfm_roundtrip(self, tmp_path):
        snap = simulate_snapshot(MIC_GEO, [PointSource(5.0, 5.0)], 0.0, seed=0)
        hm = beamform(snap, MIC_GEO, SMALL_GRID)
        write_heatmap_pfm(hm, tmp_path / "h.pfm")
        back = read_heatmap_pfm(tmp_path / "h.pfm")
        assert np.allclose(back, hm.values_db, atol=1e-4)

    def test_png16_written(self, tmp_path):
        from PIL import Image

        snap = simulate_snapshot(MIC_GEO, [PointSource(5.0, 5.0)], 0.0, seed=0)
        hm = beamform(snap, MIC_GEO, SMALL_GRID)
        write_heatmap_png16(hm, tmp_path / "h.png")
        with Image.open(tmp_path / "h.png") as img:
            assert img.size == (SMALL_GRID.az_steps, SMALL_GRID.el_steps)
            arr = np.asarray(img)
        assert arr.max() == 65535
