import numpy as np
import pytest

from conftest import uniform_scene

from eventpol import calibrate as cal
from eventpol import mueller as mm
from eventpol import reconstruct as rec
from eventpol import scenes
from eventpol import simulate as sim


def synthetic_system(m_true, k=40, seed=0, scale=1.0):
    """Rows spanning exactly the orthogonal complement of vec(m_true)."""
    rng = np.random.default_rng(seed)
    m_vec = m_true.reshape(16) / np.linalg.norm(m_true)
    raw = rng.standard_normal((k, 16))
    rows = raw - np.outer(raw @ m_vec, m_vec)
    return rec.PixelSystem(b=rows * scale, dt_weights=np.full(k, 0.01))


def calib_for(recording):
    return cal.CalibrationParams(
        c_on=recording.sensor.c_on,
        c_off=recording.sensor.c_off,
        eta=recording.sensor.eta,
        phi_calib1=recording.phi_calib1,
        phi_calib2=recording.phi_calib2,
        omega=recording.omega,
    )


def run_pipeline(recording, cfg=None, **kwargs):
    return rec.reconstruct_video(
        recording.events,
        recording.triggers,
        calib_for(recording),
        recording.width,
        recording.height,
        cfg=cfg,
        **kwargs,
    )


class TestSolveHomogeneous:
    def test_recovers_known_null_space(self):
        m_true = mm.quarter_wave_plate(0.3)
        system = synthetic_system(m_true)
        v = rec.solve_homogeneous(system)
        np.testing.assert_allclose(v.reshape(4, 4), m_true / m_true[0, 0], atol=1e-10)

    def test_row_scaling_invariance(self):
        m_true = mm.ideal_depolarizer(0.6)
        v1 = rec.solve_homogeneous(synthetic_system(m_true, scale=1.0))
        v7 = rec.solve_homogeneous(synthetic_system(m_true, scale=7.0))
        np.testing.assert_allclose(v1, v7, atol=1e-12)

    def test_rank_deficient_flagged(self):
        rng = np.random.default_rng(1)
        basis = np.linalg.qr(rng.standard_normal((16, 16)))[0]
        rows = basis[:14].repeat(3, axis=0)  # rank 14: two null directions
        system = rec.PixelSystem(b=rows, dt_weights=np.full(len(rows), 0.01))
        with pytest.raises(rec.AmbiguousPixelError):
            rec.solve_homogeneous(system)

    def test_too_few_rows_flagged(self):
        rng = np.random.default_rng(2)
        system = rec.PixelSystem(
            b=rng.standard_normal((10, 16)), dt_weights=np.full(10, 0.01)
        )
        with pytest.raises(rec.AmbiguousPixelError):
            rec.solve_homogeneous(system)


class TestIrlsWeights:
    def test_clamp_floor(self):
        system = rec.PixelSystem(b=np.zeros((3, 16)), dt_weights=np.ones(3))
        w = rec.update_irls_weights(system, np.eye(4))
        np.testing.assert_allclose(w, 1e6)

    def test_reciprocal_residual(self):
        b = np.zeros((2, 16))
        b[0, 0] = 2.0
        b[1, 0] = 100.0
        system = rec.PixelSystem(b=b, dt_weights=np.ones(2))
        w = rec.update_irls_weights(system, np.eye(4))
        assert w[0] == pytest.approx(0.5)
        assert w[1] == pytest.approx(0.01)
        assert w[0] / w[1] == pytest.approx(50.0)


class TestPerPixel:
    def test_clean_air_recovery(self, air_recording):
        # Microsecond-quantized events; bounds frozen from this pipeline.
        systems = rec.build_systems(
            air_recording.events,
            air_recording.triggers,
            calib_for(air_recording),
            air_recording.width,
            air_recording.height,
        )
        system = systems.pixel_system(2, 3, 0)
        assert system.k >= 16
        m = rec.per_pixel_reconstruct(system, rec.SolverConfig())
        v = m.reshape(16)
        target = np.eye(4).reshape(16)
        cosine = v @ target / (np.linalg.norm(v) * np.linalg.norm(target))
        assert cosine >= 1 - 2e-4
        assert np.mean(np.abs(m - np.eye(4))) < 6e-3

    def test_clean_air_recovery_fine_resolution(self):
        # At fine event resolution (no timestamp quantization) the null
        # direction matches the scene matrix almost exactly.
        c = 0.05
        triggers = sim.emit_triggers(30 * np.pi, 2)
        sensor = sim.SensorConfig(c_on=c, c_off=c)
        times, pols = sim.simulate_pixel_times(
            np.eye(4), triggers, sensor, 0.12, 0.57
        )
        from eventpol import forward as fw

        rows, gaps = [], []
        for w in cal.frame_windows(triggers):
            inside = (times >= w.t_start) & (times < w.t_end)
            tau = cal.angle_of_time(times[inside], w)
            dph = np.diff(tau)
            keep = dph <= np.pi / 100
            a, da = fw.system_rows(0.5 * (tau[1:] + tau[:-1]), 0.12, 0.57)
            rate = pols[inside][1:] * c / dph
            rows.append((da - rate[:, None] * a)[keep])
            gaps.append(dph[keep])
        system = rec.PixelSystem(
            b=np.vstack(rows), dt_weights=np.concatenate(gaps)
        )
        m = rec.per_pixel_reconstruct(system, rec.SolverConfig())
        v = m.reshape(16)
        target = np.eye(4).reshape(16)
        cosine = v @ target / (np.linalg.norm(v) * np.linalg.norm(target))
        assert cosine >= 1 - 1e-6

    def test_k_min_rejection(self):
        system = rec.PixelSystem(
            b=np.zeros((5, 16)), dt_weights=np.ones(5)
        )
        with pytest.raises(ValueError, match="insufficient events"):
            rec.per_pixel_reconstruct(system, rec.SolverConfig())

    def test_irls_iterations_reduce_outlier_error(self):
        # With outlier-corrupted events, five reweighting iterations beat a
        # single solve (seed-fixed).
        scene = uniform_scene(
            element="depolarizer@0.8",
            size=4,
            frames=2,
            c=0.12,
            noise=sim.NoiseConfig(
                additive_event_noise_sigma=0.0,
                outlier_fraction=0.05,
                outlier_sigma=5.0,
                seed=99,
            ),
        )
        recording = sim.simulate_recording(scene)
        systems = rec.build_systems(
            recording.events, recording.triggers, calib_for(recording), 4, 4
        )
        target = np.diag([1.0, 0.8, 0.8, 0.8])
        errors = {}
        for iters in (1, 5):
            errs = []
            for x in range(4):
                for y in range(4):
                    system = systems.pixel_system(x, y, 0)
                    m = rec.per_pixel_reconstruct(
                        system, rec.SolverConfig(irls_iterations=iters)
                    )
                    errs.append(np.mean(np.abs(m - target)))
            errors[iters] = np.mean(errs)
        assert errors[5] < errors[1]

    def test_batched_matches_reference_solver(self, air_recording):
        # The vectorized stage must agree with the single-pixel routine.
        calib = calib_for(air_recording)
        systems = rec.build_systems(
            air_recording.events,
            air_recording.triggers,
            calib,
            air_recording.width,
            air_recording.height,
        )
        cfg = rec.SolverConfig()
        stage1 = run_pipeline(air_recording, cfg, skip_propagation=True,
                              skip_perturbation=True)
        for x, y, f in [(0, 0, 0), (3, 5, 1), (7, 7, 0)]:
            reference = rec.per_pixel_reconstruct(
                systems.pixel_system(x, y, f), cfg
            )
            np.testing.assert_allclose(
                stage1.m[f, y, x], reference, atol=1e-9
            )


class TestNeighbors:
    def test_interior_pixel(self):
        n = rec.spatio_temporal_neighbors(4, 4, 1, (3, 9, 9))
        assert len(n) == 6
        assert (3, 4, 1) in n and (4, 3, 1) in n
        assert (4, 4, 0) in n and (4, 4, 2) in n

    def test_opposite_color(self):
        for x, y, f in [(4, 4, 1), (2, 3, 0), (0, 0, 0)]:
            color = (x + y + f) % 2
            for xn, yn, fn in rec.spatio_temporal_neighbors(x, y, f, (3, 9, 9)):
                assert (xn + yn + fn) % 2 != color

    def test_corner_first_frame(self):
        n = rec.spatio_temporal_neighbors(0, 0, 0, (3, 9, 9))
        assert sorted(n) == sorted([(1, 0, 0), (0, 1, 0), (0, 0, 1)])

    def test_single_frame_is_spatial_only(self):
        n = rec.spatio_temporal_neighbors(4, 4, 0, (1, 9, 9))
        assert len(n) == 4
        assert all(fn == 0 for _, _, fn in n)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            rec.spatio_temporal_neighbors(9, 0, 0, (1, 9, 9))


class TestPropagation:
    def test_fixed_point_when_uniform_and_sigma_zero(self):
        # One frame of a uniform scene: every pixel carries the identical
        # estimate, so every candidate has identical cost, nothing is
        # strictly lower, and with sigma = 0 there is no perturbation.
        recording = sim.simulate_recording(uniform_scene(frames=1))
        cfg = rec.SolverConfig(sigma=0.0, propagation_iterations=3)
        refined, stage1 = rec.reconstruct_video(
            recording.events,
            recording.triggers,
            calib_for(recording),
            recording.width,
            recording.height,
            cfg=cfg,
            return_stage1=True,
        )
        np.testing.assert_array_equal(refined.m, stage1.m)

    def test_corrupted_pixel_recovers(self, air_recording):
        cfg = rec.SolverConfig(propagation_iterations=5, seed=7)
        stage1 = run_pipeline(
            air_recording, cfg, skip_propagation=True, skip_perturbation=True
        )
        systems = rec.build_systems(
            air_recording.events,
            air_recording.triggers,
            calib_for(air_recording),
            air_recording.width,
            air_recording.height,
        )
        # Corrupt one interior estimate.
        bad = mm.cloude_filter(np.eye(4) + 0.4)
        bad /= bad[0, 0]
        stage1.m[0, 4, 4] = bad

        def cost_of(video, x, y, f):
            rows, dphase, pixel, offsets = systems.frame_rows(f)
            flat = y * video.m.shape[2] + x
            sel = slice(offsets[flat], offsets[flat + 1])
            resid = rows[sel] @ video.m[f, y, x].reshape(16)
            return np.sum(np.abs(resid) * dphase[sel])

        before = cost_of(stage1, 4, 4, 0)
        refined = rec.propagate_and_refine(stage1, systems, cfg)
        after = cost_of(refined, 4, 4, 0)
        assert after < before
        np.testing.assert_allclose(refined.m[0, 4, 4], np.eye(4), atol=0.05)

    def test_cost_never_increases(self, air_recording):
        cfg = rec.SolverConfig(propagation_iterations=4, seed=3)
        refined, stage1 = run_pipeline(air_recording, cfg, return_stage1=True)
        systems = rec.build_systems(
            air_recording.events,
            air_recording.triggers,
            calib_for(air_recording),
            air_recording.width,
            air_recording.height,
        )
        for f in range(stage1.frames):
            rows, dphase, pixel, offsets = systems.frame_rows(f)
            for video, store in ((stage1, "init"), (refined, "final")):
                resid = np.abs(
                    np.einsum(
                        "ni,ni->n",
                        rows * dphase[:, None],
                        video.m[f].reshape(-1, 16)[pixel],
                    )
                )
                sums = np.zeros(stage1.height * stage1.width)
                np.add.at(sums, pixel, resid)
                if store == "init":
                    init_cost = sums
                else:
                    assert np.all(sums <= init_cost + 1e-12)

    def test_output_contract(self, air_recording):
        refined = run_pipeline(air_recording, rec.SolverConfig(seed=11))
        valid = refined.valid
        assert valid.any()
        m00 = refined.m[valid][:, 0, 0]
        np.testing.assert_array_equal(m00, 1.0)
        assert np.all(mm.is_physically_valid(refined.m[valid], rtol=1e-6))

    def test_deterministic(self, air_recording):
        cfg = rec.SolverConfig(seed=42)
        out1 = run_pipeline(air_recording, cfg)
        out2 = run_pipeline(air_recording, cfg)
        np.testing.assert_array_equal(out1.m, out2.m)
        np.testing.assert_array_equal(out1.valid, out2.valid)


class TestEndToEnd:
    def test_polarizer_sequence_stable_across_frames(self):
        # A 30-frame noisy recording of a 45-degree polarizer reconstructs
        # every frame within the error budget, without drift.
        scene = uniform_scene(
            element="lp@45",
            size=6,
            frames=30,
            c=0.12,
            noise=sim.NoiseConfig(
                additive_event_noise_sigma=0.5,
                outlier_fraction=0.05,
                outlier_sigma=5.0,
                seed=31,
            ),
        )
        recording = sim.simulate_recording(scene)
        video = run_pipeline(recording, rec.SolverConfig(seed=7))
        _, _, per_mse, _ = video.error_metrics(recording.ground_truth)
        assert np.all(per_mse <= 0.05)
        assert per_mse.max() - per_mse.min() < 0.05

    def test_noisy_air_scene(self):
        scene = uniform_scene(
            element="air",
            size=8,
            frames=3,
            c=0.15,
            noise=sim.NoiseConfig(
                additive_event_noise_sigma=0.5,
                outlier_fraction=0.05,
                outlier_sigma=5.0,
                seed=17,
            ),
        )
        recording = sim.simulate_recording(scene)
        video = run_pipeline(recording, rec.SolverConfig(seed=7))
        mse, _, _, _ = video.error_metrics(recording.ground_truth)
        assert mse <= 0.04


class TestScaleInvariance:
    def test_intensity_scale_leaves_result_unchanged(self):
        base = uniform_scene(element="depolarizer@0.8", size=6, frames=1)
        scaled = uniform_scene(element="depolarizer@0.8", size=6, frames=1)
        scaled.regions[0].matrix = scaled.regions[0].matrix * 1000.0
        rec_a = sim.simulate_recording(base)
        rec_b = sim.simulate_recording(scaled)
        out_a = run_pipeline(rec_a)
        out_b = run_pipeline(rec_b)
        assert np.max(np.abs(out_a.m - out_b.m)) < 1e-9

    def test_hdr_regions_match(self):
        # Two regions with a 1000x intensity ratio but the same normalized
        # matrix reconstruct equally well.
        m = scenes.element_matrix("depolarizer@0.8")
        scene = scenes.SceneSpec(
            width=8,
            height=4,
            frames=1,
            regions=[
                scenes.Region(rect=(0, 0, 4, 4), matrix=m),
                scenes.Region(rect=(4, 0, 4, 4), matrix=m * 1e-3),
            ],
            phi_calib1=0.12,
            phi_calib2=0.57,
            sensor=sim.SensorConfig(c_on=0.1, c_off=0.1, step_div=50_000),
        )
        recording = sim.simulate_recording(scene)
        out = run_pipeline(recording)
        target = m / m[0, 0]
        err_bright = np.mean(np.abs(out.m[0, :, :4] - target))
        err_dark = np.mean(np.abs(out.m[0, :, 4:] - target))
        assert err_dark <= 2 * max(err_bright, 1e-6)
