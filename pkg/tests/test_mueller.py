import numpy as np
import pytest

from eventpol import mueller as mm


def rotation_frame(theta):
    """Stokes rotation used by the independent rotated-element oracle."""
    c, s = np.cos(2 * theta), np.sin(2 * theta)
    return np.array(
        [
            [1, 0, 0, 0],
            [0, c, s, 0],
            [0, -s, c, 0],
            [0, 0, 0, 1],
        ],
        dtype=float,
    )


def random_valid_matrices(rng, n, m00_floor=0.2):
    """Random physically valid Mueller matrices with comfortably positive M00."""
    raw = rng.standard_normal((n, 4, 4))
    raw[:, 0, 0] = np.abs(raw[:, 0, 0]) + 2.0
    valid = mm.cloude_filter(raw)
    return valid[valid[:, 0, 0] > m00_floor]


class TestElements:
    def test_linear_polarizer_axis_0(self):
        expected = 0.5 * np.array(
            [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float
        )
        np.testing.assert_allclose(mm.linear_polarizer(0.0), expected, atol=1e-15)

    def test_linear_polarizer_axis_45(self):
        expected = 0.5 * np.array(
            [[1, 0, 1, 0], [0, 0, 0, 0], [1, 0, 1, 0], [0, 0, 0, 0]], dtype=float
        )
        np.testing.assert_allclose(mm.linear_polarizer(np.pi / 4), expected, atol=1e-15)

    def test_linear_polarizer_axis_30(self):
        # Independent scalar evaluation of each trig product.
        c, s = np.cos(np.pi / 3), np.sin(np.pi / 3)
        expected = 0.5 * np.array(
            [
                [1, c, s, 0],
                [c, c * c, s * c, 0],
                [s, s * c, s * s, 0],
                [0, 0, 0, 0],
            ]
        )
        np.testing.assert_allclose(mm.linear_polarizer(np.pi / 6), expected, atol=1e-15)

    def test_qwp_axis_0(self):
        expected = np.array(
            [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float
        )
        np.testing.assert_allclose(mm.quarter_wave_plate(0.0), expected, atol=1e-15)

    def test_qwp_axis_45(self):
        expected = np.array(
            [[1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=float
        )
        np.testing.assert_allclose(
            mm.quarter_wave_plate(np.pi / 4), expected, atol=1e-15
        )

    def test_qwp_matches_rotation_frame_oracle(self):
        # Q(theta) must equal R(-theta) @ Q(0) @ R(theta).
        rng = np.random.default_rng(7)
        for theta in rng.uniform(0, np.pi, 25):
            oracle = (
                rotation_frame(-theta)
                @ mm.quarter_wave_plate(0.0)
                @ rotation_frame(theta)
            )
            np.testing.assert_allclose(
                mm.quarter_wave_plate(theta), oracle, atol=1e-13
            )

    def test_double_qwp_is_half_wave(self):
        # Two passes through a quarter-wave plate act as a half-wave plate:
        # brute-force chain against the rotated half-wave element.
        theta = np.pi / 8
        s_in = np.array([1.0, 1.0, 0.0, 0.0])
        chain = mm.quarter_wave_plate(theta) @ mm.quarter_wave_plate(theta) @ s_in
        hwp0 = np.diag([1.0, 1.0, -1.0, -1.0])
        oracle = rotation_frame(-theta) @ hwp0 @ rotation_frame(theta) @ s_in
        np.testing.assert_allclose(chain, oracle, atol=1e-13)

    def test_qwp_period_pi(self):
        rng = np.random.default_rng(11)
        for theta in rng.uniform(-2 * np.pi, 2 * np.pi, 20):
            np.testing.assert_allclose(
                mm.quarter_wave_plate(theta + np.pi),
                mm.quarter_wave_plate(theta),
                atol=1e-12,
            )

    def test_depolarizer(self):
        np.testing.assert_array_equal(mm.ideal_depolarizer(1.0), np.eye(4))
        np.testing.assert_allclose(
            mm.ideal_depolarizer(0.8), np.diag([1.0, 0.8, 0.8, 0.8])
        )
        np.testing.assert_allclose(
            mm.ideal_depolarizer(0.0), np.diag([1.0, 0.0, 0.0, 0.0])
        )

    def test_depolarizer_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            mm.ideal_depolarizer(1.5)
        with pytest.raises(ValueError):
            mm.ideal_depolarizer(-1.01)

    def test_polarizer_output_fully_polarized(self):
        s_out = mm.linear_polarizer(0.3) @ mm.unpolarized_stokes(2.0)
        assert mm.degree_of_polarization(s_out) <= 1 + 1e-9


class TestVectorization:
    def test_round_trip_bitwise(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((4, 4))
        v = mm.vectorize(m)
        assert v[1] == m[0, 1] and v[4] == m[1, 0]
        np.testing.assert_array_equal(mm.matricize(v), m)

    def test_round_trip_stacked(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((3, 5, 4, 4))
        np.testing.assert_array_equal(mm.matricize(mm.vectorize(m)), m)


class TestCloudeFilter:
    def test_identity_is_fixed_point(self):
        np.testing.assert_allclose(mm.cloude_filter(np.eye(4)), np.eye(4), atol=1e-12)

    def test_scaled_polarizer_is_fixed_point(self):
        m = mm.linear_polarizer(0.0) * 2.0
        np.testing.assert_allclose(mm.cloude_filter(m), m, atol=1e-12)

    def test_identity_coherency_spectrum(self):
        lam = mm.coherency_eigenvalues(np.eye(4))
        np.testing.assert_allclose(lam, [0, 0, 0, 1], atol=1e-12)

    def test_invalid_matrix_projected(self):
        m = np.eye(4)
        m[1, 1] = 1.5
        filtered = mm.cloude_filter(m)
        lam = mm.coherency_eigenvalues(filtered)
        assert lam.min() >= -1e-12 * lam.max()

        # Minimal Frobenius distance among eigenvalue-repair candidates:
        # compare the clamped reconstruction against other common repairs of
        # the same coherency spectrum.
        h = mm.coherency_matrix(m)
        lam0, vec = np.linalg.eigh(h)

        def rebuild(lams):
            hh = (vec * lams) @ vec.conj().T
            return mm.mueller_from_coherency(hh)

        ours = np.linalg.norm(filtered - m)
        flip = rebuild(np.abs(lam0))
        shift = rebuild(lam0 - lam0.min())
        assert ours <= np.linalg.norm(flip - m) + 1e-12
        assert ours <= np.linalg.norm(shift - m) + 1e-12

    def test_rejects_non_finite(self):
        m = np.eye(4)
        m[2, 3] = np.nan
        with pytest.raises(ValueError):
            mm.cloude_filter(m)

    def test_idempotent_on_random_matrices(self):
        rng = np.random.default_rng(21)
        m = rng.standard_normal((200, 4, 4))
        once = mm.cloude_filter(m)
        twice = mm.cloude_filter(once)
        assert np.linalg.norm(twice - once, axis=(1, 2)).max() < 1e-10

    def test_element_products_are_fixed_points(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            m = np.eye(4)
            for _ in range(rng.integers(1, 4)):
                kind = rng.integers(0, 3)
                if kind == 0:
                    m = m @ mm.linear_polarizer(rng.uniform(0, np.pi))
                elif kind == 1:
                    m = m @ mm.quarter_wave_plate(rng.uniform(0, np.pi))
                else:
                    m = m @ mm.ideal_depolarizer(rng.uniform(0, 1))
            np.testing.assert_allclose(mm.cloude_filter(m), m, atol=1e-10)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(23)
        m = rng.standard_normal((10, 4, 4))
        batched = mm.cloude_filter(m)
        for k in range(10):
            np.testing.assert_allclose(batched[k], mm.cloude_filter(m[k]), atol=1e-12)


class TestLuChipman:
    def test_identity(self):
        maps = mm.lu_chipman_maps(np.eye(4))
        assert maps.diattenuation == pytest.approx(0.0, abs=1e-12)
        assert maps.polarizance == pytest.approx(0.0, abs=1e-12)
        assert maps.preservation == pytest.approx(1.0, abs=1e-12)
        assert maps.retardance == pytest.approx(0.0, abs=1e-6)

    def test_polarizer_is_pure_diattenuator(self):
        m = mm.linear_polarizer(0.0)
        assert mm.diattenuation(m) == pytest.approx(1.0, abs=1e-12)
        assert mm.polarizance(m) == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(mm.DecompositionError, match="pure diattenuator"):
            mm.lu_chipman_maps(m)

    def test_rejects_nonpositive_m00(self):
        with pytest.raises(mm.DecompositionError):
            mm.lu_chipman_maps(np.zeros((4, 4)))

    def test_qwp45(self):
        m = mm.quarter_wave_plate(np.pi / 4)
        maps = mm.lu_chipman_maps(m)
        assert maps.diattenuation == pytest.approx(0.0, abs=1e-12)
        assert maps.polarizance == pytest.approx(0.0, abs=1e-12)
        assert maps.preservation == pytest.approx(1.0, abs=1e-10)
        assert maps.retardance == pytest.approx(np.pi / 2, abs=1e-10)

        # Brute-force decomposition oracle: the retarder factor of a pure
        # retarder input is the input itself and trace(M_R) = 2.
        m_depol, m_ret, m_diat = mm.lu_chipman_decompose(m)
        np.testing.assert_allclose(m_depol, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(m_diat, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(m_ret, m, atol=1e-10)
        assert np.trace(m_ret) == pytest.approx(2.0, abs=1e-10)

    def test_depolarizer_preservation(self):
        maps = mm.lu_chipman_maps(mm.ideal_depolarizer(0.8))
        assert maps.preservation == pytest.approx(0.8, abs=1e-10)
        assert maps.retardance == pytest.approx(0.0, abs=1e-5)

    def test_recomposition_on_random_valid(self):
        rng = np.random.default_rng(31)
        mats = random_valid_matrices(rng, 300)
        assert len(mats) > 100
        tested = 0
        for m in mats:
            try:
                m_depol, m_ret, m_diat = mm.lu_chipman_decompose(m)
            except mm.DecompositionError:
                continue
            np.testing.assert_allclose(
                m_depol @ m_ret @ m_diat, m, atol=1e-8 * np.linalg.norm(m)
            )
            tested += 1
        assert tested > 100

    def test_maps_ranges_on_random_valid(self):
        rng = np.random.default_rng(32)
        for m in random_valid_matrices(rng, 100):
            try:
                maps = mm.lu_chipman_maps(m)
            except mm.DecompositionError:
                continue
            assert 0.0 <= maps.diattenuation <= 1.0 + 1e-6
            assert 0.0 <= maps.polarizance <= 1.0 + 1e-6
            assert 0.0 <= maps.retardance <= np.pi
