import numpy as np
import pytest

from conftest import uniform_scene

from eventpol import calibrate as cal
from eventpol import formats
from eventpol import simulate as sim
from eventpol.video import MuellerVideo


@pytest.fixture
def recording():
    return sim.simulate_recording(uniform_scene(size=4, frames=2))


class TestEventFile:
    def test_round_trip_bit_exact(self, tmp_path, recording):
        path = tmp_path / "rec.evt"
        formats.write_events(
            path, recording.events, recording.triggers, 4, 4,
            omega=recording.omega, eta=0.0,
        )
        first = path.read_bytes()
        events, triggers, meta = formats.read_events(path)
        path2 = tmp_path / "rec2.evt"
        formats.write_events(
            path2, events, triggers, meta["width"], meta["height"],
            omega=meta["omega"], eta=meta["eta"],
        )
        assert path2.read_bytes() == first

    def test_content_preserved(self, tmp_path, recording):
        path = tmp_path / "rec.evt"
        formats.write_events(
            path, recording.events, recording.triggers, 4, 4,
            omega=recording.omega, eta=1e-4,
        )
        events, triggers, meta = formats.read_events(path)
        np.testing.assert_array_equal(events, recording.events)
        assert meta == {"width": 4, "height": 4, "omega": recording.omega,
                        "eta": 1e-4}
        np.testing.assert_allclose(
            triggers.t_on, recording.triggers.t_on, atol=1.1e-6
        )

    def test_rejects_unsorted(self, tmp_path, recording):
        events = recording.events.copy()
        if len(events) > 1:
            events["t"][0] = events["t"][-1] + 10
        with pytest.raises(formats.FormatError):
            formats.write_events(
                tmp_path / "bad.evt", events, recording.triggers, 4, 4,
                omega=1.0, eta=0.0,
            )

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "junk.evt"
        path.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK")
        with pytest.raises(formats.FormatError):
            formats.read_events(path)

    def test_rejects_truncation(self, tmp_path, recording):
        path = tmp_path / "rec.evt"
        formats.write_events(
            path, recording.events, recording.triggers, 4, 4,
            omega=recording.omega, eta=0.0,
        )
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(formats.FormatError):
            formats.read_events(path)


class TestMuellerVideoFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        video = MuellerVideo(
            m=rng.standard_normal((3, 4, 5, 4, 4)),
            valid=rng.random((3, 4, 5)) > 0.3,
            normalized=False,
        )
        path = tmp_path / "video.mmv"
        formats.write_mueller_video(path, video)
        first = path.read_bytes()
        loaded = formats.read_mueller_video(path)
        np.testing.assert_array_equal(loaded.m, video.m)
        np.testing.assert_array_equal(loaded.valid, video.valid)
        assert loaded.normalized == video.normalized
        path2 = tmp_path / "video2.mmv"
        formats.write_mueller_video(path2, loaded)
        assert path2.read_bytes() == first


class TestCalibrationFile:
    def test_scalar_round_trip(self, tmp_path):
        calib = cal.CalibrationParams(
            c_on=0.14, c_off=0.19, eta=5e-5, phi_calib1=0.3, phi_calib2=1.1,
            omega=30 * np.pi,
        )
        path = tmp_path / "cal.calb"
        formats.write_calibration(path, calib)
        first = path.read_bytes()
        loaded = formats.read_calibration(path)
        assert loaded.c_on == calib.c_on and loaded.c_off == calib.c_off
        assert loaded.eta == calib.eta
        assert loaded.phi_calib1 == calib.phi_calib1
        assert loaded.phi_calib2 == calib.phi_calib2
        formats.write_calibration(path, loaded)
        assert path.read_bytes() == first

    def test_map_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        c_on = rng.uniform(0.1, 0.2, (3, 4))
        c_off = rng.uniform(0.1, 0.2, (3, 4))
        c_on[1, 2] = np.nan  # uncalibrated pixel
        calib = cal.CalibrationParams(c_on=c_on, c_off=c_off)
        path = tmp_path / "cal.calb"
        formats.write_calibration(path, calib)
        loaded = formats.read_calibration(path)
        np.testing.assert_array_equal(loaded.c_on, c_on)
        np.testing.assert_array_equal(loaded.c_off, c_off)


class TestPgm:
    def test_header_and_payload(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 2.0]])
        path = tmp_path / "map.pgm"
        formats.write_pgm(path, img)
        data = path.read_bytes()
        assert data.startswith(b"P5\n2 2\n255\n")
        assert data[-4:] == bytes([0, 128, 255, 255])

    def test_nan_renders_as_sentinel_zero(self, tmp_path):
        img = np.array([[np.nan, 1.0]])
        path = tmp_path / "map.pgm"
        formats.write_pgm(path, img)
        assert path.read_bytes()[-2:] == bytes([0, 255])
