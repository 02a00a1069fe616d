"""Real-time qualification of a photon stream: watch the recycle light
level for the single-atom signature, certify the stream with a timed
correlation test, then serve photons while monitoring for atom loss.

Two equivalent drivers are provided.  `step` is the event-driven
reference: clicks and period-boundary ticks are folded one at a time.
`replay` evaluates a whole recorded stream with vectorized window sums
and must produce the identical verdict (this is checked in the tests).

Window conventions: the tick ending pulse period i fires at time
(i+1)*period and carries that period's click counts.  A rolling window
of W periods evaluated at that tick covers periods [i-W+1, i].  The
light level is the window count divided by the window length in ms.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np

from .clickstream import ClickStream, PulseSchedule, window_clicks
from .correlator import CorrelationHistogram, VisibilityReport, correlate_counts, visibility


class Phase(enum.Enum):
    WAITING = "waiting"
    QUALIFYING = "qualifying"
    SERVING = "serving"
    REJECTED = "rejected"
    LOST = "lost"


class OrderingError(ValueError):
    """Events were delivered out of timestamp order."""


REASON_TOO_FEW = "too-few-correlations"
REASON_ZERO_LAG = "zero-lag-excess"


@dataclass(frozen=True)
class QualifierConfig:
    """Protocol thresholds.

    level_band brackets the one-atom recycle rate (clicks/ms, half-open)
    so that two atoms (~8/ms) and background (~0.03/ms) both fall
    outside; loss_max_counts is the largest trailing-window count still
    compatible with a lost atom, chosen via derive_loss_threshold so
    that background alone stays below it with 98% probability.
    """

    single_atom_level: float = 4.0
    level_band: tuple[float, float] = (2.0, 6.0)
    level_window_ms: float = 100.0
    qual_duration_s: float = 1.5
    min_mean_nonzero: float = 1.5
    zero_lag_fraction_max: float = 0.30
    loss_window_ms: float = 30.0
    loss_max_counts: int = 6
    qual_max_lag: int = 30
    allow_requalify: bool = False

    def __post_init__(self):
        if self.level_band[0] < 0 or self.level_band[0] >= self.level_band[1]:
            raise ValueError("level_band must be an ordered non-negative pair")
        if not 0.0 < self.zero_lag_fraction_max < 1.0:
            raise ValueError("zero_lag_fraction_max must be in (0, 1)")
        for name in ("level_window_ms", "qual_duration_s", "loss_window_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.loss_max_counts < 0 or self.min_mean_nonzero < 0:
            raise ValueError("thresholds must be >= 0")


def poisson_cdf(k: int, lam: float) -> float:
    """P(X <= k) for X ~ Poisson(lam)."""
    if k < 0:
        return 0.0
    term = math.exp(-lam)
    total = term
    for i in range(1, k + 1):
        term *= lam / i
        total += term
    return min(total, 1.0)


def derive_loss_threshold(background_rate: float, loss_window_ms: float = 30.0,
                          confidence: float = 0.98) -> int:
    """Smallest count threshold k such that pure background stays at or
    below k with at least `confidence` probability, i.e. an absent atom
    is flagged within one loss window at that confidence."""
    lam = background_rate * loss_window_ms * 1e-3
    k = 0
    while poisson_cdf(k, lam) < confidence:
        k += 1
        if k > 10_000:
            raise RuntimeError("loss threshold derivation did not converge")
    return k


@dataclass(frozen=True)
class ClickEvent:
    t_ns: int
    channel: int


@dataclass(frozen=True)
class TickEvent:
    t_ns: int  # (i+1) * period for the tick ending period i


Event = Union[ClickEvent, TickEvent]


@dataclass(frozen=True)
class Notification:
    kind: str  # "qualifying" | "serving" | "rejected" | "lost"
    t_ns: int
    detail: Optional[str] = None


def qualification_decision(c_zero: float, c_mean_nonzero: float,
                           cfg: QualifierConfig) -> Optional[str]:
    """None if the correlation data certifies a single atom, else the
    failure reason."""
    if not c_mean_nonzero > cfg.min_mean_nonzero:
        return REASON_TOO_FEW
    if not c_zero < cfg.zero_lag_fraction_max * c_mean_nonzero:
        return REASON_ZERO_LAG
    return None


def qualification_test(h: CorrelationHistogram, cfg: QualifierConfig
                       ) -> tuple[bool, Optional[str]]:
    """Apply the two selection rules to a qualification histogram."""
    nonzero = h.nonzero_lag_counts()
    c_mean = float(nonzero.sum()) / nonzero.size if nonzero.size else 0.0
    reason = qualification_decision(float(h.zero_lag), c_mean, cfg)
    return reason is None, reason


def loss_test(window_count: int, cfg: QualifierConfig) -> bool:
    """True (lost) if the trailing-window recycle count is at or below
    the loss threshold."""
    return window_count <= cfg.loss_max_counts


@dataclass
class ServerState:
    """Mutable fold state of one run's qualification protocol."""

    config: QualifierConfig
    schedule: PulseSchedule
    phase: Phase = Phase.WAITING
    period_index: int = 0
    last_t: int = -1
    # per-period accumulators
    cur_trig: list = field(default_factory=lambda: [0, 0])
    cur_rec: int = 0
    # rolling recycle-count windows
    level_counts: deque = field(default_factory=deque)
    level_sum: int = 0
    loss_counts: deque = field(default_factory=deque)
    loss_sum: int = 0
    # qualification data
    qual_start_period: Optional[int] = None
    qual_trig0: list = field(default_factory=list)
    qual_trig1: list = field(default_factory=list)
    histogram: Optional[CorrelationHistogram] = None
    vis_report: Optional[VisibilityReport] = None
    reject_reason: Optional[str] = None
    # serving bookkeeping
    serving_start_t: Optional[int] = None
    served_clicks: int = 0
    loss_t_ns: Optional[int] = None
    phase_entries: dict = field(default_factory=dict)

    def __post_init__(self):
        period = self.schedule.period
        self.level_window_periods = int(round(
            self.config.level_window_ms * 1e6 / period))
        self.loss_window_periods = int(round(
            self.config.loss_window_ms * 1e6 / period))
        self.qual_periods = int(round(
            self.config.qual_duration_s * 1e9 / period))
        self.phase_entries[Phase.WAITING] = 0


def new_state(config: QualifierConfig, schedule: PulseSchedule) -> ServerState:
    return ServerState(config=config, schedule=schedule)


def step(state: ServerState, event: Event) -> tuple[ServerState, list[Notification]]:
    """Advance the state machine by one event.

    Events must arrive in non-decreasing time order, with the tick
    ending each period delivered before any click of the next period
    (at equal timestamps the tick comes first).
    """
    if event.t_ns < state.last_t:
        raise OrderingError(f"event at {event.t_ns} after {state.last_t}")
    notes: list[Notification] = []

    if isinstance(event, ClickEvent):
        period = event.t_ns // state.schedule.period
        if period != state.period_index:
            raise OrderingError(
                f"click in period {period} but period {state.period_index} is open"
                " (missing tick?)")
        off = event.t_ns % state.schedule.period
        t_lo, t_hi = state.schedule.trigger_window
        r_lo, r_hi = state.schedule.recycle_window
        if t_lo <= off < t_hi:
            state.cur_trig[event.channel] += 1
        elif r_lo <= off < r_hi:
            state.cur_rec += 1
        state.last_t = event.t_ns
        return state, notes

    expected = (state.period_index + 1) * state.schedule.period
    if event.t_ns != expected:
        raise OrderingError(f"tick at {event.t_ns}, expected {expected}")
    state.last_t = event.t_ns
    i = state.period_index
    cfg = state.config

    # roll the windows with this period's recycle count
    state.level_counts.append(state.cur_rec)
    state.level_sum += state.cur_rec
    if len(state.level_counts) > state.level_window_periods:
        state.level_sum -= state.level_counts.popleft()
    state.loss_counts.append(state.cur_rec)
    state.loss_sum += state.cur_rec
    if len(state.loss_counts) > state.loss_window_periods:
        state.loss_sum -= state.loss_counts.popleft()

    if state.phase is Phase.QUALIFYING:
        state.qual_trig0.append(state.cur_trig[0])
        state.qual_trig1.append(state.cur_trig[1])
    elif state.phase is Phase.SERVING:
        state.served_clicks += state.cur_trig[0] + state.cur_trig[1]

    if state.phase in (Phase.QUALIFYING, Phase.SERVING) and loss_test(state.loss_sum, cfg):
        state.phase = Phase.LOST
        state.loss_t_ns = event.t_ns
        state.phase_entries[Phase.LOST] = event.t_ns
        notes.append(Notification("lost", event.t_ns))
    elif (state.phase is Phase.QUALIFYING
          and i == state.qual_start_period + state.qual_periods - 1):
        c0 = np.asarray(state.qual_trig0, dtype=np.int64)
        c1 = np.asarray(state.qual_trig1, dtype=np.int64)
        state.histogram = correlate_counts(c0, c1, cfg.qual_max_lag)
        passed, reason = qualification_test(state.histogram, cfg)
        try:
            state.vis_report = visibility(state.histogram)
        except ValueError:
            state.vis_report = None
        if passed:
            state.phase = Phase.SERVING
            state.serving_start_t = event.t_ns
            state.phase_entries[Phase.SERVING] = event.t_ns
            notes.append(Notification("serving", event.t_ns))
        elif cfg.allow_requalify:
            state.phase = Phase.WAITING
            state.reject_reason = reason
            state.qual_start_period = None
            state.qual_trig0 = []
            state.qual_trig1 = []
            notes.append(Notification("rejected", event.t_ns, reason))
        else:
            state.phase = Phase.REJECTED
            state.reject_reason = reason
            state.phase_entries[Phase.REJECTED] = event.t_ns
            notes.append(Notification("rejected", event.t_ns, reason))
    elif (state.phase is Phase.WAITING
          and len(state.level_counts) >= state.level_window_periods):
        rate = state.level_sum / cfg.level_window_ms
        if cfg.level_band[0] <= rate < cfg.level_band[1]:
            state.phase = Phase.QUALIFYING
            state.qual_start_period = i + 1
            state.phase_entries[Phase.QUALIFYING] = event.t_ns
            notes.append(Notification("qualifying", event.t_ns))

    state.period_index = i + 1
    state.cur_trig = [0, 0]
    state.cur_rec = 0
    return state, notes


def build_events(stream: ClickStream, schedule: PulseSchedule) -> Iterator[Event]:
    """Interleave a stream's clicks with period-boundary ticks (ticks for
    every complete period; tick first at equal timestamps)."""
    n_periods = stream.duration // schedule.period
    click_i = 0
    n_clicks = len(stream)
    for p in range(n_periods):
        boundary = (p + 1) * schedule.period
        while click_i < n_clicks and stream.t[click_i] < boundary:
            yield ClickEvent(int(stream.t[click_i]), int(stream.channel[click_i]))
            click_i += 1
        yield TickEvent(boundary)
    while click_i < n_clicks:
        yield ClickEvent(int(stream.t[click_i]), int(stream.channel[click_i]))
        click_i += 1


@dataclass(frozen=True)
class RunVerdict:
    """Outcome of one run's qualification protocol."""

    qualified: bool
    reached_qualifying: bool
    histogram: Optional[CorrelationHistogram]
    visibility: Optional[VisibilityReport]
    serving_s: float
    served_clicks: int
    loss_t_ns: Optional[int]
    reject_reason: Optional[str]
    qual_start_ns: Optional[int]
    final_phase: Phase

    def to_dict(self) -> dict:
        return {
            "qualified": self.qualified,
            "visibility": (None if self.visibility is None
                           else self.visibility.visibility),
            "serving_s": self.serving_s,
            "served_clicks": self.served_clicks,
            "loss_t_ns": self.loss_t_ns,
            "reject_reason": self.reject_reason,
            "qual_start_ns": self.qual_start_ns,
            "final_phase": self.final_phase.value,
        }


def finalize(state: ServerState) -> RunVerdict:
    """Summarize a fully folded state into a verdict."""
    qualified = state.serving_start_t is not None
    end_t = state.period_index * state.schedule.period
    serving_s = 0.0
    if qualified:
        serving_end = state.loss_t_ns if state.loss_t_ns is not None else end_t
        serving_s = max(0, serving_end - state.serving_start_t) * 1e-9
    qual_start_ns = (None if state.qual_start_period is None
                     else state.qual_start_period * state.schedule.period)
    return RunVerdict(
        qualified=qualified,
        reached_qualifying=Phase.QUALIFYING in state.phase_entries,
        histogram=state.histogram,
        visibility=state.vis_report,
        serving_s=serving_s,
        served_clicks=state.served_clicks,
        loss_t_ns=state.loss_t_ns,
        reject_reason=state.reject_reason,
        qual_start_ns=qual_start_ns,
        final_phase=state.phase,
    )


def fold(stream: ClickStream, schedule: PulseSchedule, config: QualifierConfig
         ) -> tuple[RunVerdict, list[Notification]]:
    """Event-at-a-time reference replay of a recorded stream."""
    state = new_state(config, schedule)
    notes: list[Notification] = []
    for event in build_events(stream, schedule):
        state, out = step(state, event)
        notes.extend(out)
    return finalize(state), notes


def qualified_segment_periods(verdict: RunVerdict, schedule: PulseSchedule,
                              n_periods: int) -> Optional[tuple[int, int]]:
    """Half-open period range [a, b) of a qualified run's single-photon
    data: from qualification start through atom loss (or run end).
    None for runs that did not qualify."""
    if not verdict.qualified or verdict.qual_start_ns is None:
        return None
    a = verdict.qual_start_ns // schedule.period
    b = (verdict.loss_t_ns // schedule.period
         if verdict.loss_t_ns is not None else n_periods)
    return a, min(b, n_periods)


def _rolling_sums(counts: np.ndarray, window: int) -> np.ndarray:
    """r[i] = sum(counts[max(0, i-window+1) .. i])."""
    cs = np.concatenate(([0], np.cumsum(counts, dtype=np.int64)))
    idx = np.arange(counts.size)
    lo = np.maximum(idx - window + 1, 0)
    return cs[idx + 1] - cs[lo]


def replay(stream: ClickStream, schedule: PulseSchedule, config: QualifierConfig
           ) -> tuple[RunVerdict, list[Notification]]:
    """Vectorized replay; verdict-identical to `fold`."""
    period = schedule.period
    n = stream.duration // period
    w = window_clicks(stream, schedule)
    c0 = w.trigger_counts[0][:n]
    c1 = w.trigger_counts[1][:n]
    rec = w.recycle_counts[:n]

    w_level = int(round(config.level_window_ms * 1e6 / period))
    w_loss = int(round(config.loss_window_ms * 1e6 / period))
    q_len = int(round(config.qual_duration_s * 1e9 / period))

    level = _rolling_sums(rec, w_level) / config.level_window_ms
    in_band = (level >= config.level_band[0]) & (level < config.level_band[1])
    in_band[: w_level - 1] = False
    lost = _rolling_sums(rec, w_loss) <= config.loss_max_counts

    notes: list[Notification] = []
    state_hist: Optional[CorrelationHistogram] = None
    vis_report: Optional[VisibilityReport] = None
    reject_reason: Optional[str] = None
    reached_qualifying = False
    qual_start: Optional[int] = None
    serving_start_t: Optional[int] = None
    loss_t: Optional[int] = None
    served = 0
    final_phase = Phase.WAITING
    search_from = 0

    while True:
        cand = np.flatnonzero(in_band[search_from:])
        if cand.size == 0:
            break
        entry_tick = search_from + int(cand[0])
        reached_qualifying = True
        qual_start = entry_tick + 1
        notes.append(Notification("qualifying", (entry_tick + 1) * period))
        final_phase = Phase.QUALIFYING

        q_end_tick = qual_start + q_len - 1
        hi = min(q_end_tick, n - 1)
        loss_idx = np.flatnonzero(lost[qual_start: hi + 1])
        if loss_idx.size:
            tick = qual_start + int(loss_idx[0])
            loss_t = (tick + 1) * period
            notes.append(Notification("lost", loss_t))
            final_phase = Phase.LOST
            break
        if q_end_tick > n - 1:
            break  # run ended mid-qualification
        qc0 = np.asarray(c0[qual_start: qual_start + q_len], dtype=np.int64)
        qc1 = np.asarray(c1[qual_start: qual_start + q_len], dtype=np.int64)
        state_hist = correlate_counts(qc0, qc1, config.qual_max_lag)
        passed, reason = qualification_test(state_hist, config)
        try:
            vis_report = visibility(state_hist)
        except ValueError:
            vis_report = None
        if not passed:
            reject_reason = reason
            notes.append(Notification("rejected", (q_end_tick + 1) * period, reason))
            if config.allow_requalify:
                final_phase = Phase.WAITING
                qual_start = None
                search_from = q_end_tick + 1
                continue
            final_phase = Phase.REJECTED
            break

        serving_start_t = (q_end_tick + 1) * period
        notes.append(Notification("serving", serving_start_t))
        final_phase = Phase.SERVING
        loss_idx = np.flatnonzero(lost[qual_start + q_len: n])
        if loss_idx.size:
            tick = qual_start + q_len + int(loss_idx[0])
            loss_t = (tick + 1) * period
            served = int(c0[qual_start + q_len: tick + 1].sum()
                         + c1[qual_start + q_len: tick + 1].sum())
            notes.append(Notification("lost", loss_t))
            final_phase = Phase.LOST
        else:
            served = int(c0[qual_start + q_len:].sum() + c1[qual_start + q_len:].sum())
        break

    qualified = serving_start_t is not None
    serving_s = 0.0
    if qualified:
        serving_end = loss_t if loss_t is not None else n * period
        serving_s = max(0, serving_end - serving_start_t) * 1e-9
    verdict = RunVerdict(
        qualified=qualified,
        reached_qualifying=reached_qualifying,
        histogram=state_hist,
        visibility=vis_report,
        serving_s=serving_s,
        served_clicks=served,
        loss_t_ns=loss_t,
        reject_reason=reject_reason,
        qual_start_ns=None if qual_start is None else qual_start * period,
        final_phase=final_phase,
    )
    return verdict, notes
