"""Seeded stochastic generation of full-run click streams: atom loading
and loss, per-trigger photon emission, the detection chain, recycle
scattering, and background counts.

All randomness flows through one numpy Generator per run, with a fixed
draw order, so a (config, schedule, seed) triple reproduces the stream
bit for bit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .clickstream import ClickStream, PulseSchedule
from .qed import Trajectory


@dataclass(frozen=True)
class SimConfig:
    """Run parameters.

    Probabilities are per event; rates in the units noted.  The chain
    t_cavity * t_prop * eta_det is the probability that an emitted
    photon produces a click.  recycle_det_rate is the wall-clock rate of
    detected recycle photons per atom (clicks per ms, placed inside the
    recycle windows).  initial_atoms accepts "fixed(n)" or
    "1+poisson(m)"; lifetime_shape accepts "exponential", "gamma(k)" or
    "fixed" (departure at exactly trap_mean_life, for forced-loss runs).
    emission_model "capped_linear" emits one photon per trigger with
    probability min(1, n_atoms * p_gen); "binomial" draws
    Binomial(n_atoms, p_gen) photons.  p_two_photon adds a second photon
    to a triggering pulse that already emitted one.
    """

    trigger_rate: float = 1e5
    p_gen: float = 0.09
    t_cavity: float = 0.50
    t_prop: float = 0.48
    eta_det: float = 0.44
    background_rate: float = 84.0
    recycle_det_rate: float = 4.0
    trap_mean_life: float = 10.3
    lifetime_shape: str = "exponential"
    initial_atoms: str = "1+poisson(1.5)"
    run_duration: float = 30.0
    p_two_photon: float = 0.0
    emission_model: str = "capped_linear"
    dead_time_ns: int = 0

    def __post_init__(self):
        for name in ("p_gen", "t_cavity", "t_prop", "eta_det", "p_two_photon"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("trigger_rate", "background_rate", "recycle_det_rate",
                     "trap_mean_life", "run_duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.emission_model not in ("capped_linear", "binomial"):
            raise ValueError(f"unknown emission_model {self.emission_model!r}")
        _parse_initial_atoms(self.initial_atoms)
        _parse_lifetime_shape(self.lifetime_shape)

    @property
    def detection_probability(self) -> float:
        return self.t_cavity * self.t_prop * self.eta_det


@dataclass(frozen=True, eq=False)
class RunTruth:
    """Ground truth of one simulated run, for validation and scoring."""

    n_initial: int
    departures_ns: np.ndarray      # sorted, one entry per initial atom
    duration_ns: int
    emission_flags: np.ndarray     # bool per trigger: >=1 photon emitted
    signal_times: np.ndarray       # timestamps of detected signal clicks
    n_signal: int
    n_recycle: int
    n_background: int
    n_dead_dropped: int = 0

    def atom_count(self, t_ns) -> np.ndarray:
        """Number of trapped atoms at time(s) t_ns."""
        t = np.asarray(t_ns, dtype=np.int64)
        return self.n_initial - np.searchsorted(self.departures_ns, t, side="right")

    def to_dict(self) -> dict:
        return {
            "n_initial": self.n_initial,
            "departures_s": [round(d * 1e-9, 9) for d in self.departures_ns.tolist()],
            "duration_s": self.duration_ns * 1e-9,
            "emission_flags_rle": rle_encode(self.emission_flags),
            "n_signal": self.n_signal,
            "n_recycle": self.n_recycle,
            "n_background": self.n_background,
            "n_dead_dropped": self.n_dead_dropped,
            "single_atom_availability_s": single_atom_availability(self),
        }


def rle_encode(bits: np.ndarray) -> list[int]:
    """Run lengths of a boolean array, alternating and starting with the
    length of the initial False run (possibly 0)."""
    bits = np.asarray(bits, dtype=bool)
    if bits.size == 0:
        return []
    edges = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate(([0], edges, [bits.size]))
    runs = np.diff(bounds).tolist()
    if bits[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int]) -> np.ndarray:
    vals = []
    cur = False
    for r in runs:
        vals.append(np.full(r, cur, dtype=bool))
        cur = not cur
    return np.concatenate(vals) if vals else np.zeros(0, dtype=bool)


def _parse_initial_atoms(spec: str):
    # fixed(0) is allowed as an explicit override for source-free
    # validation runs; the stochastic specs always load at least one atom
    m = re.fullmatch(r"fixed\((\d+)\)", spec)
    if m:
        n = int(m.group(1))
        return lambda rng: n
    m = re.fullmatch(r"1\+poisson\(([\d.]+)\)", spec)
    if m:
        mean = float(m.group(1))
        return lambda rng: 1 + int(rng.poisson(mean))
    raise ValueError(f"unknown initial_atoms spec {spec!r}")


def _parse_lifetime_shape(spec: str):
    if spec == "exponential":
        return lambda rng, mean, n: rng.exponential(mean, n)
    if spec == "fixed":
        return lambda rng, mean, n: np.full(n, mean)
    m = re.fullmatch(r"gamma\(([\d.]+)\)", spec)
    if m:
        k = float(m.group(1))
        if k <= 0:
            raise ValueError("gamma shape must be positive")
        return lambda rng, mean, n: rng.gamma(k, mean / k, n)
    raise ValueError(f"unknown lifetime_shape spec {spec!r}")


def sample_lifetimes(config: SimConfig, n: int, seed) -> np.ndarray:
    """Draw n i.i.d. trap-lifetime values in seconds."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    draw = _parse_lifetime_shape(config.lifetime_shape)
    return draw(rng, config.trap_mean_life, n)


def single_atom_availability(truth: RunTruth) -> float:
    """Total time (s) during which exactly one atom was trapped."""
    if truth.n_initial == 0:
        return 0.0
    dur = truth.duration_ns
    deps = truth.departures_ns
    lo = 0 if truth.n_initial == 1 else int(deps[truth.n_initial - 2])
    hi = int(deps[truth.n_initial - 1])
    return max(0, min(hi, dur) - min(lo, dur)) * 1e-9


def _apply_dead_time(t: np.ndarray, ch: np.ndarray, dead_ns: int):
    keep = np.ones(t.size, dtype=bool)
    for c in (0, 1):
        idx = np.flatnonzero(ch == c)
        last = -dead_ns - 1
        for i in idx:
            if t[i] - last < dead_ns:
                keep[i] = False
            else:
                last = t[i]
    return keep


def simulate_run(config: SimConfig, schedule: PulseSchedule, seed,
                 emission_profile: Optional[Trajectory] = None
                 ) -> tuple[ClickStream, RunTruth]:
    """Simulate one experimental run.

    Draw order (fixed for reproducibility): initial atom count,
    lifetimes, per-trigger emission, second photons, detection thinning,
    signal channels and timestamps, recycle counts/channels/timestamps,
    background.  emission_profile optionally shapes the photon timestamp
    distribution inside the trigger window from a cavity-emission flux
    trajectory (default: uniform).
    """
    if schedule.period != round(1e9 / config.trigger_rate):
        raise ValueError("schedule period inconsistent with trigger_rate")
    rng = np.random.default_rng(seed)
    period = schedule.period
    duration_ns = int(round(config.run_duration * 1e9))
    n_triggers = duration_ns // period
    t_lo, t_hi = schedule.trigger_window
    r_lo, r_hi = schedule.recycle_window

    n0 = _parse_initial_atoms(config.initial_atoms)(rng)
    life_s = _parse_lifetime_shape(config.lifetime_shape)(
        rng, config.trap_mean_life, n0)
    departures = np.sort(np.asarray(life_s * 1e9, dtype=np.int64))

    bin_starts = np.arange(n_triggers, dtype=np.int64) * period
    natoms = (n0 - np.searchsorted(departures, bin_starts, side="right")
              ).astype(np.int32)
    active = np.flatnonzero(natoms > 0)
    n_active = active.size
    nact = natoms[active]

    # photon emission per trigger
    if config.emission_model == "capped_linear":
        p1 = np.minimum(1.0, nact * config.p_gen)
        photons = (rng.random(n_active) < p1).astype(np.int64)
    else:
        photons = rng.binomial(nact.astype(np.int64), config.p_gen)
    if config.p_two_photon > 0.0:
        extra = (photons > 0) & (rng.random(n_active) < config.p_two_photon)
        photons = photons + extra

    emission_flags = np.zeros(n_triggers, dtype=bool)
    emission_flags[active[photons > 0]] = True

    # detection chain thins each photon independently
    detected = rng.binomial(photons, config.detection_probability)
    n_signal = int(detected.sum())
    sig_bins = np.repeat(active, detected)
    sig_ch = rng.integers(0, 2, n_signal, dtype=np.uint8)
    if emission_profile is None:
        sig_off = rng.integers(t_lo, t_hi, n_signal, dtype=np.int64)
    else:
        cdf = np.cumsum(emission_profile.flux)
        if cdf[-1] <= 0:
            raise ValueError("emission profile has zero total flux")
        cdf = cdf / cdf[-1]
        u = rng.random(n_signal)
        pos = np.interp(u, cdf, emission_profile.t_ns)
        span = t_hi - t_lo
        sig_off = t_lo + np.clip((pos * span / emission_profile.t_ns[-1]
                                  ).astype(np.int64), 0, span - 1)
    sig_t = bin_starts[sig_bins] + sig_off

    # recycle monitor clicks: Poisson per pulse at the per-atom detected rate
    lam = nact * (config.recycle_det_rate * period * 1e-6)
    rec_counts = rng.poisson(lam)
    n_recycle = int(rec_counts.sum())
    rec_bins = np.repeat(active, rec_counts)
    rec_ch = rng.integers(0, 2, n_recycle, dtype=np.uint8)
    rec_t = bin_starts[rec_bins] + rng.integers(r_lo, r_hi, n_recycle,
                                                dtype=np.int64)

    # homogeneous background over the whole run
    n_background = int(rng.poisson(config.background_rate * config.run_duration))
    bg_t = rng.integers(0, duration_ns, n_background, dtype=np.int64)
    bg_ch = rng.integers(0, 2, n_background, dtype=np.uint8)

    t_all = np.concatenate([sig_t, rec_t, bg_t])
    ch_all = np.concatenate([sig_ch, rec_ch, bg_ch])
    order = np.argsort(t_all, kind="stable")
    t_all = t_all[order]
    ch_all = ch_all[order]

    n_dropped = 0
    if config.dead_time_ns > 0:
        keep = _apply_dead_time(t_all, ch_all, config.dead_time_ns)
        n_dropped = int((~keep).sum())
        t_all = t_all[keep]
        ch_all = ch_all[keep]

    stream = ClickStream(t_all, ch_all, duration_ns)
    truth = RunTruth(
        n_initial=int(n0), departures_ns=departures, duration_ns=duration_ns,
        emission_flags=emission_flags, signal_times=np.sort(sig_t),
        n_signal=n_signal, n_recycle=n_recycle, n_background=n_background,
        n_dead_dropped=n_dropped)
    return stream, truth


def pinned_single_atom(config: SimConfig, duration: float) -> SimConfig:
    """Config variant with one atom held present for the whole run."""
    return replace(config, initial_atoms="fixed(1)", lifetime_shape="fixed",
                   trap_mean_life=duration * 10.0, run_duration=duration)
