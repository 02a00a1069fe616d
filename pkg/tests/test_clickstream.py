import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonserver.clickstream import (Click, ClickFormatError, ClickOrderError,
                                      ClickStream, PulseSchedule, read_clicks,
                                      window_clicks, write_clicks)

from conftest import make_stream, random_stream


class TestPtagFormat:
    def test_single_record_bytes(self):
        stream = make_stream([1000], [0])
        payload = write_clicks(stream, "ptag")
        assert payload == bytes.fromhex("E8 03 00 00 00 00 00 00 00".replace(" ", ""))
        assert len(payload) == 9

    def test_empty_file(self):
        stream = read_clicks(b"", "ptag")
        assert len(stream) == 0
        assert stream.duration == 0

    def test_truncated_record_offset(self):
        data = write_clicks(make_stream([1000], [0]), "ptag") + b"\x01"
        with pytest.raises(ClickFormatError) as exc:
            read_clicks(data, "ptag")
        assert exc.value.offset == 9

    def test_bad_channel_byte(self):
        data = (1000).to_bytes(8, "little") + b"\x02"
        with pytest.raises(ClickFormatError) as exc:
            read_clicks(data, "ptag")
        assert exc.value.offset == 0

    def test_unsorted_rejected(self):
        data = ((5).to_bytes(8, "little") + b"\x00"
                + (3).to_bytes(8, "little") + b"\x01")
        with pytest.raises(ClickOrderError):
            read_clicks(data, "ptag")

    def test_same_timestamp_order_stable(self):
        stream = make_stream([7, 7, 7], [1, 0, 1], duration=8)
        out = read_clicks(write_clicks(stream, "ptag"), "ptag")
        assert list(out.channel) == [1, 0, 1]

    def test_file_round_trip(self, tmp_path):
        stream = make_stream([1, 2, 2, 9], [0, 1, 1, 0])
        path = tmp_path / "run.ptag"
        write_clicks(stream, "ptag", path)
        assert read_clicks(path, "ptag") == stream


class TestCsvFormat:
    def test_round_trip(self):
        stream = make_stream([0, 10, 10, 123456789], [1, 0, 0, 1])
        assert read_clicks(write_clicks(stream, "csv"), "csv") == stream

    def test_header_required(self):
        with pytest.raises(ClickFormatError):
            read_clicks(b"1,0\n", "csv")

    def test_bad_line_number(self):
        data = b"t_ns,channel\n5,0\nnonsense\n"
        with pytest.raises(ClickFormatError) as exc:
            read_clicks(data, "csv")
        assert exc.value.offset == 3


def test_unsorted_constructor_rejected():
    with pytest.raises(ClickOrderError):
        make_stream([5, 3], [0, 0], duration=10)


def test_click_beyond_duration_rejected():
    with pytest.raises(ValueError):
        make_stream([10], [0], duration=10)


@st.composite
def streams(draw):
    n = draw(st.integers(0, 200))
    ts = sorted(draw(st.lists(st.integers(0, 10**7), min_size=n, max_size=n)))
    chs = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    return make_stream(ts, chs)


@given(streams())
@settings(max_examples=100, deadline=None)
def test_round_trip_identity(stream):
    for fmt in ("ptag", "csv"):
        assert read_clicks(write_clicks(stream, fmt), fmt) == stream


class TestWindowing:
    def test_trigger_boundary_half_open(self, schedule):
        w = window_clicks(make_stream([3_999], [0]), schedule)
        assert w.trigger_counts[0][0] == 1
        w = window_clicks(make_stream([4_000], [0]), schedule)
        assert w.n_trigger == 0
        assert w.n_dropped == 1

    def test_recycle_assignment(self, schedule):
        w = window_clicks(make_stream([15_000], [1]), schedule)
        assert w.recycle_counts[1] == 1
        assert w.n_recycle == 1

    def test_channels_separated(self, schedule):
        w = window_clicks(make_stream([100, 200, 300], [0, 1, 0]), schedule)
        assert w.trigger_counts[0][0] == 2
        assert w.trigger_counts[1][0] == 1

    def test_windowed_fraction_uniform(self, schedule):
        rng = np.random.default_rng(42)
        n = 100_000
        stream = random_stream(rng, n, 10_000_000)
        w = window_clicks(stream, schedule)
        for got in (w.n_trigger, w.n_recycle):
            # binomial(n, 0.4): 3 sigma band
            sigma = np.sqrt(n * 0.4 * 0.6)
            assert abs(got - 0.4 * n) < 3 * sigma

    @given(streams())
    @settings(max_examples=60, deadline=None)
    def test_partition(self, stream):
        w = window_clicks(stream, PulseSchedule())
        assert w.n_trigger + w.n_recycle + w.n_dropped == len(stream)

    def test_shift_equivariance(self, schedule):
        rng = np.random.default_rng(3)
        stream = random_stream(rng, 500, 200_000)
        k = 7
        shifted = ClickStream(stream.t + k * schedule.period, stream.channel,
                              stream.duration + k * schedule.period)
        w0 = window_clicks(stream, schedule)
        w1 = window_clicks(shifted, schedule)
        np.testing.assert_array_equal(
            w0.trigger_counts[0], w1.trigger_counts[0][k:k + w0.n_bins])
        np.testing.assert_array_equal(
            w0.recycle_counts, w1.recycle_counts[k:k + w0.n_bins])
        assert np.all(w1.recycle_counts[:k] == 0)


class TestPulseSchedule:
    def test_defaults(self, schedule):
        assert schedule.trigger_rate_hz == pytest.approx(1e5)
        assert schedule.trigger_length == 4000
        assert schedule.recycle_length == 4000

    def test_overlapping_windows_rejected(self):
        with pytest.raises(ValueError):
            PulseSchedule(trigger_window=(0, 6000), recycle_window=(5000, 9000))

    def test_window_outside_period_rejected(self):
        with pytest.raises(ValueError):
            PulseSchedule(recycle_window=(5000, 11_000))
