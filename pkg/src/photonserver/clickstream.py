"""Two-channel detector click streams: event types, the pulse-window
schedule, and bit-exact time-tag IO (.ptag binary and CSV)."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, NamedTuple, Sequence, Union

import numpy as np

PTAG_RECORD_SIZE = 9
# packed little-endian record: 8-byte unsigned ns timestamp, 1-byte channel
_PTAG_DTYPE = np.dtype([("t", "<u8"), ("channel", "u1")])
CSV_HEADER = "t_ns,channel"


class ClickFormatError(ValueError):
    """Malformed time-tag data. `offset` is the byte offset of the bad
    record for binary sources, or the 1-based line number for CSV."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ClickOrderError(ValueError):
    """Timestamps out of order (streams must be non-decreasing in t)."""


class Click(NamedTuple):
    t: int        # ns from run start, >= 0
    channel: int  # detector index, 0 or 1


@dataclass(frozen=True, eq=False)
class ClickStream:
    """Sorted two-channel click record of one run.

    `t` (int64 ns) and `channel` (uint8) are parallel arrays sorted
    non-decreasing in t; `duration` is the run length in ns and bounds
    every timestamp strictly from above.
    """

    t: np.ndarray
    channel: np.ndarray
    duration: int

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        ch = np.ascontiguousarray(self.channel, dtype=np.uint8)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "channel", ch)
        object.__setattr__(self, "duration", int(self.duration))
        if t.shape != ch.shape:
            raise ValueError("t and channel must have equal length")
        if t.size:
            if t[0] < 0:
                raise ValueError("negative timestamp")
            if np.any(np.diff(t) < 0):
                raise ClickOrderError("timestamps not sorted")
            if t[-1] >= self.duration:
                raise ValueError("timestamp beyond duration")
            if ch.max() > 1:
                raise ValueError("channel must be 0 or 1")

    @classmethod
    def from_clicks(cls, clicks: Iterable[Click], duration: int | None = None) -> "ClickStream":
        rows = list(clicks)
        t = np.array([c[0] for c in rows], dtype=np.int64)
        ch = np.array([c[1] for c in rows], dtype=np.uint8)
        if duration is None:
            duration = int(t[-1]) + 1 if rows else 0
        return cls(t, ch, duration)

    def __len__(self) -> int:
        return int(self.t.size)

    def __getitem__(self, i: int) -> Click:
        return Click(int(self.t[i]), int(self.channel[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClickStream):
            return NotImplemented
        return (self.duration == other.duration
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.channel, other.channel))

    @property
    def clicks(self) -> list[Click]:
        return list(self)


@dataclass(frozen=True)
class PulseSchedule:
    """Periodic trigger/recycle window layout.

    Defaults: 10 us period (100 kHz trigger rate), trigger window
    [0, 4000) ns, recycle window [5000, 9000) ns; offsets are within a
    period and half-open.
    """

    period: int = 10_000
    trigger_window: tuple[int, int] = (0, 4_000)
    recycle_window: tuple[int, int] = (5_000, 9_000)

    def __post_init__(self):
        for name in ("trigger_window", "recycle_window"):
            lo, hi = getattr(self, name)
            if not (0 <= lo < hi <= self.period):
                raise ValueError(f"{name} must lie within [0, period)")
        t0, t1 = self.trigger_window
        r0, r1 = self.recycle_window
        if max(t0, r0) < min(t1, r1):
            raise ValueError("trigger and recycle windows overlap")

    @property
    def trigger_rate_hz(self) -> float:
        return 1e9 / self.period

    @property
    def trigger_length(self) -> int:
        return self.trigger_window[1] - self.trigger_window[0]

    @property
    def recycle_length(self) -> int:
        return self.recycle_window[1] - self.recycle_window[0]

    def n_bins(self, duration: int) -> int:
        """Number of (possibly partial) trigger periods covering `duration` ns."""
        return -(-int(duration) // self.period)


@dataclass(frozen=True, eq=False)
class WindowedClicks:
    """Clicks sorted into per-trigger-pulse bins.

    trigger_counts[ch][b] counts channel-`ch` clicks inside the trigger
    window of pulse b; recycle_counts[b] counts clicks of both channels
    inside the recycle window.  trigger_times/trigger_bins keep the kept
    trigger-window clicks (sorted) for fine-resolution analysis.
    """

    n_bins: int
    trigger_counts: tuple[np.ndarray, np.ndarray]
    recycle_counts: np.ndarray
    trigger_times: tuple[np.ndarray, np.ndarray]
    trigger_bins: tuple[np.ndarray, np.ndarray]
    n_dropped: int

    @property
    def n_trigger(self) -> int:
        return int(self.trigger_counts[0].sum() + self.trigger_counts[1].sum())

    @property
    def n_recycle(self) -> int:
        return int(self.recycle_counts.sum())


Source = Union[str, Path, bytes, BinaryIO]


def _read_bytes(source: Source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def read_clicks(source: Source, format: str = "ptag") -> ClickStream:
    """Parse a click stream from a byte source.

    The .ptag format has no header, so the duration of a parsed stream
    is inferred as (last timestamp + 1), or 0 when empty.
    """
    data = _read_bytes(source)
    if format == "ptag":
        return _read_ptag(data)
    if format == "csv":
        return _read_csv(data)
    raise ValueError(f"unknown format {format!r}")


def _read_ptag(data: bytes) -> ClickStream:
    n, rem = divmod(len(data), PTAG_RECORD_SIZE)
    if rem:
        raise ClickFormatError(
            f"truncated record: {rem} trailing bytes", offset=n * PTAG_RECORD_SIZE)
    rec = np.frombuffer(data, dtype=_PTAG_DTYPE)
    ch = rec["channel"]
    bad = np.flatnonzero(ch > 1)
    if bad.size:
        raise ClickFormatError(
            f"invalid channel byte {ch[bad[0]]:#x}", offset=int(bad[0]) * PTAG_RECORD_SIZE)
    t = rec["t"]
    if t.size and t.max() > np.iinfo(np.int64).max:
        raise ClickFormatError("timestamp exceeds signed 64-bit range", offset=0)
    t = t.astype(np.int64)
    if np.any(np.diff(t) < 0):
        first = int(np.flatnonzero(np.diff(t) < 0)[0]) + 1
        raise ClickOrderError(f"timestamps not sorted at record {first}")
    duration = int(t[-1]) + 1 if t.size else 0
    return ClickStream(t, ch.copy(), duration)


def _read_csv(data: bytes) -> ClickStream:
    text = data.decode("ascii")
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ClickFormatError(f"missing {CSV_HEADER!r} header", offset=1)
    ts, chs = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            t, ch = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise ClickFormatError(f"bad record {line!r}", offset=lineno) from None
        if ch not in (0, 1):
            raise ClickFormatError(f"invalid channel {ch}", offset=lineno)
        if t < 0:
            raise ClickFormatError(f"negative timestamp {t}", offset=lineno)
        ts.append(t)
        chs.append(ch)
    t = np.array(ts, dtype=np.int64)
    if np.any(np.diff(t) < 0):
        raise ClickOrderError("timestamps not sorted")
    duration = int(t[-1]) + 1 if t.size else 0
    return ClickStream(t, np.array(chs, dtype=np.uint8), duration)


def write_clicks(stream: ClickStream, format: str = "ptag",
                 dest: Union[str, Path, BinaryIO, None] = None) -> bytes:
    """Serialize a stream; returns the bytes and optionally writes them out."""
    if format == "ptag":
        rec = np.empty(len(stream), dtype=_PTAG_DTYPE)
        rec["t"] = stream.t.astype(np.uint64)
        rec["channel"] = stream.channel
        payload = rec.tobytes()
    elif format == "csv":
        lines = [CSV_HEADER]
        lines.extend(f"{int(t)},{int(c)}" for t, c in zip(stream.t, stream.channel))
        payload = ("\n".join(lines) + "\n").encode("ascii")
    else:
        raise ValueError(f"unknown format {format!r}")
    if dest is not None:
        if isinstance(dest, (str, Path)):
            Path(dest).write_bytes(payload)
        else:
            dest.write(payload)
    return payload


def window_clicks(stream: ClickStream, schedule: PulseSchedule) -> WindowedClicks:
    """Assign clicks to trigger/recycle windows by pulse index.

    A click at time t lands in pulse bin t // period; it is kept iff its
    offset t % period falls in the (half-open) trigger or recycle window,
    and dropped otherwise.
    """
    n_bins = schedule.n_bins(stream.duration)
    t = stream.t
    offs = t % schedule.period
    bins = t // schedule.period
    t_lo, t_hi = schedule.trigger_window
    r_lo, r_hi = schedule.recycle_window
    in_trig = (offs >= t_lo) & (offs < t_hi)
    in_rec = (offs >= r_lo) & (offs < r_hi)

    counts = []
    times = []
    tbins = []
    for ch in (0, 1):
        sel = in_trig & (stream.channel == ch)
        b = bins[sel]
        counts.append(np.bincount(b, minlength=n_bins).astype(np.int64))
        times.append(t[sel])
        tbins.append(b)
    rec_counts = np.bincount(bins[in_rec], minlength=n_bins).astype(np.int64)
    n_dropped = int(len(stream) - in_trig.sum() - in_rec.sum())
    return WindowedClicks(
        n_bins=n_bins,
        trigger_counts=(counts[0], counts[1]),
        recycle_counts=rec_counts,
        trigger_times=(times[0], times[1]),
        trigger_bins=(tbins[0], tbins[1]),
        n_dropped=n_dropped,
    )
